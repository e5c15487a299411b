"""
Run configuration: a strict JSON schema for every CLI workflow.

Unknown keys anywhere in the document are rejected.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError
from .fem import BoundaryLoad, SolverConfig
from .mesh import DomainSpec, Mesh, make_region
from .optimize import AscentConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class DomainSection(_Strict):
    kind: Literal["disk", "square"] = "disk"
    size: float = 1.0
    n_boundary: int = 64
    refinements: int = 0

    def spec(self) -> DomainSpec:
        return DomainSpec(self.kind, self.size, self.n_boundary, self.refinements)


class TrigLoad(_Strict):
    """a0 + sum a_n cos(n theta) + b_n sin(n theta) with theta = 2 pi s / perimeter."""

    kind: Literal["trig"]
    a0: float = 0.0
    cos: dict[int, float] = Field(default_factory=dict)
    sin: dict[int, float] = Field(default_factory=dict)

    @field_validator("cos", "sin")
    @classmethod
    def _positive_modes(cls, v):
        if any(k < 1 for k in v):
            raise ValueError("mode numbers must be >= 1")
        return v


class EdgeLoad(_Strict):
    kind: Literal["edge"]
    values: list[float]


class RegionLoad(_Strict):
    kind: Literal["region"]
    arcs: list[tuple[float, float]]
    weight: float = 1.0


class ZeroLoad(_Strict):
    kind: Literal["zero"]


LoadSpec = Union[TrigLoad, EdgeLoad, RegionLoad, ZeroLoad]


class ProblemSection(_Strict):
    p: float = 2.0
    load_class: Optional[Literal["rearrangement", "lq", "linfty"]] = Field(None, alias="class")
    q: Optional[float] = None
    A: Optional[float] = None
    f0_file: Optional[str] = None
    f0: Optional[list[float]] = None
    load: Optional[LoadSpec] = Field(None, discriminator="kind")

    @field_validator("p")
    @classmethod
    def _p(cls, v):
        if not (math.isfinite(v) and v > 1):
            raise ValueError("p must be a finite number > 1")
        return v

    @field_validator("q")
    @classmethod
    def _q(cls, v):
        if v is not None and not (math.isfinite(v) and v > 1):
            raise ValueError("q must be a finite number > 1")
        return v


class SolverSection(_Strict):
    epsilon_start: float = 1e-1
    epsilon_min: float = 1e-6
    continuation_factor: float = 10.0
    newton_tol: float = 1e-10
    max_newton: int = 50
    line_search_beta: float = 0.5
    line_search_c: float = 1e-4


class AscentSection(_Strict):
    ascent_tol: float = 1e-10
    max_ascent: int = Field(50, ge=1)
    multistart: int = Field(20, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)


class DerivativeSection(_Strict):
    arcs: Optional[list[tuple[float, float]]] = None
    center: Optional[float] = None
    velocity: Union[Literal["translate", "rotate"], list[float]] = "translate"
    step_sizes: list[float] = Field(default_factory=lambda: [1e-2, 5e-3, 2.5e-3])


class OracleSection(_Strict):
    configs: int = Field(100, ge=0)
    n_modes: int = Field(64, ge=1)
    refinements: list[int] = Field(default_factory=lambda: [0, 1, 2, 3])

    @field_validator("refinements")
    @classmethod
    def _increasing(cls, v):
        if not v or any(b <= a for a, b in zip(v, v[1:])) or v[0] < 0:
            raise ValueError("refinements must be non-negative and strictly increasing")
        return v


class OutputSection(_Strict):
    directory: str = "out"
    formats: list[Literal["csv", "vtk", "svg", "json"]] = Field(default_factory=lambda: ["csv", "json"])


class RunConfig(_Strict):
    domain: DomainSection = Field(default_factory=DomainSection)
    problem: ProblemSection = Field(default_factory=ProblemSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    ascent: AscentSection = Field(default_factory=AscentSection)
    derivative: DerivativeSection = Field(default_factory=DerivativeSection)
    oracle: OracleSection = Field(default_factory=OracleSection)
    output: OutputSection = Field(default_factory=OutputSection)

    @model_validator(mode="after")
    def _class_fields(self):
        pr = self.problem
        if pr.load_class == "lq" and pr.q is None:
            raise ValueError("class 'lq' needs problem.q")
        if pr.load_class == "linfty" and pr.A is None:
            raise ValueError("class 'linfty' needs problem.A")
        if pr.load_class == "rearrangement" and pr.f0 is None and pr.f0_file is None and pr.load is None:
            raise ValueError("class 'rearrangement' needs problem.f0, problem.f0_file or problem.load")
        if pr.f0 is not None and pr.f0_file is not None:
            raise ValueError("give problem.f0 or problem.f0_file, not both")
        return self

    # ---- conversions, raising ConfigurationError on semantic problems

    def domain_spec(self) -> DomainSpec:
        spec = self.domain.spec()
        spec.validate()
        return spec

    def solver_config(self) -> SolverConfig:
        cfg = SolverConfig(p=self.problem.p, **self.solver.model_dump())
        cfg.validate()
        return cfg

    def ascent_config(self) -> AscentConfig:
        return AscentConfig(**self.ascent.model_dump())

    def with_overrides(self, seed: int | None = None, load_class: str | None = None,
                       out: str | None = None) -> "RunConfig":
        data = self.model_dump(by_alias=True)
        if seed is not None:
            data["ascent"]["seed"] = seed
        if load_class is not None:
            data["problem"]["class"] = load_class
        if out is not None:
            data["output"]["directory"] = out
        return RunConfig.model_validate(data)


def load_config(path) -> RunConfig:
    """Read and validate a UTF-8 JSON config file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base=Path(path).parent)


def parse_config(text: str, base=None) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(str(exc)) from exc
    if base is not None and cfg.problem.f0_file is not None:
        f0 = Path(cfg.problem.f0_file)
        if not f0.is_absolute():
            data["problem"]["f0_file"] = str(Path(base) / f0)
            cfg = RunConfig.model_validate(data)
    return cfg


def build_load(spec, mesh: Mesh) -> BoundaryLoad:
    """Boundary load for ``mesh`` from a load section (``None`` means zero)."""
    if spec is None or spec.kind == "zero":
        return BoundaryLoad.zero(mesh)
    if spec.kind == "edge":
        if len(spec.values) != mesh.n_boundary_edges:
            raise ConfigurationError(
                f"edge load has {len(spec.values)} values, mesh has {mesh.n_boundary_edges} edges")
        return BoundaryLoad.edge(spec.values)
    if spec.kind == "region":
        P = mesh.perimeter
        for a, b in spec.arcs:
            if b < a or b - a > P:
                raise ConfigurationError(f"bad arc ({a}, {b})")
        return BoundaryLoad.indicator(make_region(spec.arcs, P), spec.weight)
    theta = 2.0 * math.pi * mesh.boundary_vertex_s / mesh.perimeter
    f = np.full_like(theta, spec.a0)
    for n, a in spec.cos.items():
        f += a * np.cos(n * theta)
    for n, b in spec.sin.items():
        f += b * np.sin(n * theta)
    return BoundaryLoad.nodal(f)


def read_f0_csv(path) -> np.ndarray:
    """Per-edge values from an ``edge_id,f`` CSV."""
    try:
        lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read f0 file {path}: {exc}") from exc
    if not lines or lines[0].strip() != "edge_id,f":
        raise ConfigurationError("f0 file must start with the header 'edge_id,f'")
    rows = []
    for ln in lines[1:]:
        try:
            i, v = ln.split(",")
            rows.append((int(i), float(v)))
        except ValueError as exc:
            raise ConfigurationError(f"bad f0 row {ln!r}") from exc
    rows.sort()
    if [i for i, _ in rows] != list(range(len(rows))):
        raise ConfigurationError("f0 edge ids must be 0..n-1")
    return np.array([v for _, v in rows])
