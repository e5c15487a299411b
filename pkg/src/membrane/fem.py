"""
P1 finite elements for  -div(|grad u|^{p-2} grad u) + |u|^{p-2} u = 0  with
boundary flux f.

The discrete state minimizes

    E_eps(u) = sum_T |T| (|g_T|^2 + eps^2)^{p/2} / p + sum_i w_i |u_i|^p / p - F . u

where g_T is the constant element gradient, w_i the lumped vertex weights and
F the exactly integrated boundary load. Newton's method with backtracking on
E_eps is run for a decreasing sequence of eps values.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, SolverError
from .mesh import BoundaryRegion, Mesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    p: float = 2.0
    epsilon_start: float = 1e-1
    epsilon_min: float = 1e-6
    continuation_factor: float = 10.0
    newton_tol: float = 1e-10
    max_newton: int = 50
    line_search_beta: float = 0.5
    line_search_c: float = 1e-4

    def validate(self) -> None:
        if not (self.p > 1 and math.isfinite(self.p)):
            raise ConfigurationError(f"p must exceed 1, got {self.p}")
        if not (0 < self.epsilon_min <= self.epsilon_start):
            raise ConfigurationError("need 0 < epsilon_min <= epsilon_start")
        if not self.continuation_factor > 1:
            raise ConfigurationError("continuation_factor must exceed 1")
        if not self.newton_tol > 0:
            raise ConfigurationError("newton_tol must be positive")
        if self.max_newton < 1:
            raise ConfigurationError("max_newton must be at least 1")
        if not (0 < self.line_search_beta < 1 and 0 < self.line_search_c < 1):
            raise ConfigurationError("line search parameters must lie in (0, 1)")

    def epsilon_schedule(self) -> list[float]:
        eps = [self.epsilon_start]
        k = 1
        while eps[-1] > self.epsilon_min * (1 + 1e-12):
            e = self.epsilon_start / self.continuation_factor ** k
            eps.append(self.epsilon_min if e <= self.epsilon_min * (1 + 1e-9) else e)
            k += 1
        return eps


@dataclass(frozen=True, eq=False)
class BoundaryLoad:
    """Load on the boundary loop.

    kind ``"edge"``: one constant per boundary edge (loop order);
    ``"region"``: ``weight`` times the indicator of ``region``;
    ``"nodal"``: piecewise-linear trace given at the loop vertices.
    """

    kind: str
    values: np.ndarray | None = None
    region: BoundaryRegion | None = None
    weight: float = 1.0

    @classmethod
    def edge(cls, values) -> "BoundaryLoad":
        return cls("edge", values=np.asarray(values, dtype=float))

    @classmethod
    def nodal(cls, values) -> "BoundaryLoad":
        return cls("nodal", values=np.asarray(values, dtype=float))

    @classmethod
    def indicator(cls, region: BoundaryRegion, weight: float = 1.0) -> "BoundaryLoad":
        return cls("region", region=region, weight=float(weight))

    @classmethod
    def zero(cls, mesh: Mesh) -> "BoundaryLoad":
        return cls.edge(np.zeros(mesh.n_boundary_edges))

    def scaled(self, lam: float) -> "BoundaryLoad":
        if self.kind == "region":
            return BoundaryLoad("region", region=self.region, weight=self.weight * lam)
        return BoundaryLoad(self.kind, values=lam * self.values)

    def check(self, mesh: Mesh) -> None:
        if self.kind in ("edge", "nodal"):
            if self.values is None or self.values.shape != (mesh.n_boundary_edges,):
                raise ConfigurationError(
                    f"{self.kind} load needs {mesh.n_boundary_edges} values, got "
                    f"{None if self.values is None else self.values.shape}")
            if not np.all(np.isfinite(self.values)):
                raise ConfigurationError("load values must be finite")
        elif self.kind == "region":
            if self.region is None:
                raise ConfigurationError("region load without a region")
            if abs(self.region.perimeter - mesh.perimeter) > 1e-9 * mesh.perimeter:
                raise ConfigurationError("region perimeter does not match the mesh")
        else:
            raise ConfigurationError(f"unknown load kind {self.kind!r}")

    def boundary_values(self, mesh: Mesh, s) -> np.ndarray:
        """Pointwise load values at arc lengths ``s`` (for plotting and export)."""
        s = np.mod(np.asarray(s, dtype=float), mesh.perimeter)
        if self.kind == "nodal":
            knots = np.append(mesh.s_start, mesh.perimeter)
            return np.interp(s, knots, np.append(self.values, self.values[0]))
        if self.kind == "edge":
            idx = np.searchsorted(mesh.s_start, s, side="right") - 1
            return self.values[np.clip(idx, 0, mesh.n_boundary_edges - 1)]
        return self.weight * self.region.contains(s).astype(float)


@dataclass(frozen=True, eq=False)
class StateSolution:
    nodal_u: np.ndarray
    p_used: float
    epsilon_final: float
    converged: bool
    residual_norm: float
    newton_iterations: int
    energy_value: float
    # (epsilon, E_eps) after every accepted Newton step
    history: tuple = field(default=(), repr=False)


# --------------------------------------------------------------------------- loads


def assemble_load(mesh: Mesh, load: BoundaryLoad) -> np.ndarray:
    """Exact boundary integrals of the load against each vertex hat function."""
    load.check(mesh)
    F = np.zeros(mesh.n_vertices)
    a, b = mesh.boundary_edges[:, 0], mesh.boundary_edges[:, 1]
    ell = mesh.edge_lengths
    if load.kind == "edge":
        half = 0.5 * load.values * ell
        np.add.at(F, a, half)
        np.add.at(F, b, half)
    elif load.kind == "nodal":
        ga = load.values
        gb = np.roll(load.values, -1)
        np.add.at(F, a, ell * (2 * ga + gb) / 6.0)
        np.add.at(F, b, ell * (ga + 2 * gb) / 6.0)
    else:
        fa, fb = region_hat_integrals(mesh, load.region)
        np.add.at(F, a, load.weight * fa)
        np.add.at(F, b, load.weight * fb)
    return F


def region_hat_integrals(mesh: Mesh, region: BoundaryRegion) -> tuple[np.ndarray, np.ndarray]:
    """Per edge, integrals of the start and end hat functions over the edge part inside ``region``."""
    s0 = mesh.s_start
    ell = mesh.edge_lengths
    fa = np.zeros(mesh.n_boundary_edges)
    fb = np.zeros(mesh.n_boundary_edges)
    for lo, hi in region.intervals:
        x0 = np.clip(lo - s0, 0.0, ell)
        x1 = np.clip(hi - s0, 0.0, ell)
        lin = (x1 * x1 - x0 * x0) / (2.0 * ell)
        fb += lin
        fa += (x1 - x0) - lin
    return fa, fb


# --------------------------------------------------------------------------- energy pieces


def _gradients(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    return np.einsum("tid,ti->td", mesh.hat_gradients, u[mesh.triangles])


def _reg_energy(mesh: Mesh, u: np.ndarray, F: np.ndarray, p: float, eps: float) -> float:
    g = _gradients(mesh, u)
    s = np.einsum("td,td->t", g, g) + eps * eps
    return float(np.dot(mesh.signed_areas, s ** (0.5 * p)) / p
                 + np.dot(mesh.lumped_weights, np.abs(u) ** p) / p - F @ u)


def _reg_gradient(mesh: Mesh, u: np.ndarray, F: np.ndarray, p: float, eps: float) -> np.ndarray:
    g = _gradients(mesh, u)
    s = np.einsum("td,td->t", g, g) + eps * eps
    with np.errstate(divide="ignore"):
        coef = mesh.signed_areas * s ** (0.5 * p - 1.0)
    if p < 2:
        # |g|^{p-2} g vanishes at g = 0 even though |g|^{p-2} does not exist
        coef[s == 0] = 0.0
    local = coef[:, None] * np.einsum("tid,td->ti", mesh.hat_gradients, g)
    r = np.zeros(mesh.n_vertices)
    np.add.at(r, mesh.triangles.ravel(), local.ravel())
    if p >= 2:
        r += mesh.lumped_weights * np.abs(u) ** (p - 2.0) * u
    else:
        r += mesh.lumped_weights * np.sign(u) * np.abs(u) ** (p - 1.0)
    return r - F


def _reg_hessian(mesh: Mesh, u: np.ndarray, p: float, eps: float) -> sp.csc_matrix:
    G = mesh.hat_gradients
    g = _gradients(mesh, u)
    s = np.einsum("td,td->t", g, g) + eps * eps
    a = mesh.signed_areas * s ** (0.5 * p - 1.0)
    gg = np.einsum("tid,tjd->tij", G, G)
    gv = np.einsum("tid,td->ti", G, g)
    local = a[:, None, None] * gg
    if p != 2:
        b = mesh.signed_areas * (p - 2.0) * s ** (0.5 * p - 2.0)
        local += b[:, None, None] * gv[:, :, None] * gv[:, None, :]
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    if p >= 2:
        diag = (p - 1.0) * np.abs(u) ** (p - 2.0)
    else:
        # secant coefficient of |u|^{p-2} u: Newton on it oscillates near u = 0 for p < 2
        diag = (u * u + eps * eps) ** (0.5 * p - 1.0)
    n = mesh.n_vertices
    H = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsc()
    return H + sp.diags(mesh.lumped_weights * diag, format="csc")


def _rounding_slack(E: float, F: np.ndarray, u: np.ndarray) -> float:
    return 1e-14 * (abs(E) + abs(F @ u))


def _spd_solve(A: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise SolverError(f"singular linear system: {exc}") from exc
    x = lu.solve(rhs)
    scale = np.linalg.norm(rhs)
    for _ in range(3):
        res = rhs - A @ x
        if not np.all(np.isfinite(res)):
            raise SolverError("non-finite linear solve")
        if np.linalg.norm(res) <= 1e-12 * scale:
            break
        x = x + lu.solve(res)
    return x


def linear_operator(mesh: Mesh) -> sp.csc_matrix:
    """Stiffness plus lumped mass: the p = 2 operator."""
    return _reg_hessian(mesh, np.zeros(mesh.n_vertices), 2.0, 0.0)


@lru_cache(maxsize=8)
def _linear_factor(mesh: Mesh):
    A = linear_operator(mesh)
    try:
        return A, spla.splu(A)
    except RuntimeError as exc:
        raise SolverError(f"singular linear system: {exc}") from exc


def linear_solve(mesh: Mesh, F: np.ndarray) -> np.ndarray:
    """Solution of the p = 2 problem for load vector ``F`` (factorization cached per mesh)."""
    A, lu = _linear_factor(mesh)
    x = lu.solve(F)
    res = F - A @ x
    if np.linalg.norm(res) > 1e-12 * np.linalg.norm(F):
        x = x + lu.solve(res)
    return x


def energy_gradient(mesh: Mesh, v: np.ndarray, p: float) -> np.ndarray:
    """Gradient of ``energy(v)`` with respect to the nodal values."""
    return p * _reg_gradient(mesh, np.asarray(v, dtype=float), np.zeros(mesh.n_vertices), p, 0.0)


# --------------------------------------------------------------------------- state solve


def solve_state(mesh: Mesh, load: BoundaryLoad, config: SolverConfig,
                initial: np.ndarray | None = None) -> StateSolution:
    """Damped Newton with eps-continuation for the regularized state equation."""
    config.validate()
    F = assemble_load(mesh, load)
    return solve_state_vector(mesh, F, config, initial)


def solve_state_vector(mesh: Mesh, F: np.ndarray, config: SolverConfig,
                       initial: np.ndarray | None = None) -> StateSolution:
    p = config.p
    tol = config.newton_tol
    if initial is not None:
        u = np.array(initial, dtype=float)
    elif np.any(F != 0):
        # the p = 2 solution, rescaled to minimize the p-energy along its ray
        w = linear_solve(mesh, F)
        fw = F @ w
        u = w * (fw / energy(mesh, w, p)) ** (1.0 / (p - 1.0)) if fw > 0 else w
    else:
        u = np.zeros(mesh.n_vertices)

    history = []
    iterations = 0
    eps = config.epsilon_start
    rnorm = float("inf")
    for eps in config.epsilon_schedule():
        E = _reg_energy(mesh, u, F, p, eps)
        for _ in range(config.max_newton):
            r = _reg_gradient(mesh, u, F, p, eps)
            rnorm = float(np.linalg.norm(r))
            if rnorm <= tol:
                break
            d = _spd_solve(_reg_hessian(mesh, u, p, eps), -r)
            slope = float(r @ d)
            if slope >= 0:
                logger.debug("Newton direction is not a descent direction (slope %g)", slope)
                break
            slack = _rounding_slack(E, F, u)
            if -slope > slack:
                alpha = 1.0
                while True:
                    u_new = u + alpha * d
                    E_new = _reg_energy(mesh, u_new, F, p, eps)
                    if E_new <= E + config.line_search_c * alpha * slope:
                        break
                    alpha *= config.line_search_beta
                    if alpha < 1e-12:
                        raise SolverError("line search failed on a descent direction")
            else:
                # predicted decrease is below the rounding level of E: take the
                # full step if the energy stays put and the residual shrinks
                u_new = u + d
                E_new = _reg_energy(mesh, u_new, F, p, eps)
                r_new = np.linalg.norm(_reg_gradient(mesh, u_new, F, p, eps))
                if E_new > E + slack or r_new >= rnorm:
                    break
            u, E = u_new, E_new
            iterations += 1
            history.append((eps, E))
    rnorm = float(np.linalg.norm(_reg_gradient(mesh, u, F, p, eps)))
    converged = rnorm <= tol
    if not converged:
        logger.warning("state solve did not converge: residual %.3e > %.3e", rnorm, tol)
    u.setflags(write=False)
    return StateSolution(
        nodal_u=u, p_used=p, epsilon_final=eps, converged=converged,
        residual_norm=rnorm, newton_iterations=iterations,
        energy_value=energy(mesh, u, p), history=tuple(history),
    )


# --------------------------------------------------------------------------- functionals

FieldLike = Union[StateSolution, np.ndarray]


def _nodal(u: FieldLike) -> np.ndarray:
    return u.nodal_u if isinstance(u, StateSolution) else np.asarray(u, dtype=float)


def energy(mesh: Mesh, u: FieldLike, p: float | None = None) -> float:
    """Un-regularized energy  int |grad u|^p + |u|^p  (lumped mass term)."""
    if p is None:
        if not isinstance(u, StateSolution):
            raise TypeError("p is required for a bare nodal field")
        p = u.p_used
    v = _nodal(u)
    g = _gradients(mesh, v)
    grad = np.einsum("td,td->t", g, g) ** (0.5 * p)
    return float(mesh.signed_areas @ grad + mesh.lumped_weights @ np.abs(v) ** p)


def cost_J(mesh: Mesh, load: BoundaryLoad, u: FieldLike) -> float:
    """Compliance  int_{boundary} f u  evaluated exactly for P1 traces."""
    return float(assemble_load(mesh, load) @ _nodal(u))


def functional_I(mesh: Mesh, load: BoundaryLoad, v: FieldLike, p: float) -> float:
    """(p int f v - energy(v)) / (p - 1); its supremum over v equals J(f)."""
    vv = _nodal(v)
    return (p * cost_J(mesh, load, vv) - energy(mesh, vv, p)) / (p - 1.0)
