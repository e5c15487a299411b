"""
Shape derivative of the cost with respect to tangential motion of a boundary set.

In two dimensions a boundary set D is a union of arcs and a tangential flow
simply transports the arc endpoints. With ``sigma_i = +1`` at arc ends and
``-1`` at arc starts,

    dJ/dt   = p/(p-1) * sum_i u_0(s_i) sigma_i V_i
    d|D|/dt = sum_i sigma_i V_i

where u_0 is the state for the load chi_D. :func:`fd_check` compares both
formulas with central finite differences computed on a fixed mesh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .errors import DomainError, PerturbationTooLargeError
from .fem import BoundaryLoad, SolverConfig, StateSolution
from .mesh import BoundaryRegion, Mesh, make_region


@dataclass(frozen=True, eq=False)
class TangentialVelocity:
    """Arc-length speeds, one per endpoint in the order of ``region.endpoints()``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise DomainError("velocity must be finite")
        object.__setattr__(self, "values", v)

    def check(self, region: BoundaryRegion) -> None:
        if len(self.values) != len(region.endpoints()):
            raise DomainError(
                f"velocity has {len(self.values)} entries, region has {len(region.endpoints())} endpoints")

    def __add__(self, other: "TangentialVelocity") -> "TangentialVelocity":
        return TangentialVelocity(self.values + other.values)

    def __mul__(self, c: float) -> "TangentialVelocity":
        return TangentialVelocity(c * self.values)

    __rmul__ = __mul__


def perturb_region(region: BoundaryRegion, velocity: TangentialVelocity, t: float) -> BoundaryRegion:
    """Move every endpoint ``s_i`` to ``s_i + t V_i``."""
    velocity.check(region)
    ends = region.endpoints()
    if not ends or t == 0:
        return region
    P = region.perimeter
    s = np.array([e[0] for e in ends]) + t * velocity.values
    sigma = [e[1] for e in ends]
    gaps = np.diff(np.append(s, s[0] + P))
    if np.any(gaps <= 1e-12 * P):
        raise PerturbationTooLargeError(f"endpoints cross or merge at t = {t}")
    arcs = []
    m = len(s)
    for i in range(m):
        if sigma[i] < 0:
            end = s[i + 1] if i + 1 < m else s[0] + P
            arcs.append((s[i], end))
    return make_region(arcs, P)


def area_derivative(region: BoundaryRegion, velocity: TangentialVelocity) -> float:
    velocity.check(region)
    sigma = np.array([e[1] for e in region.endpoints()], dtype=float)
    return float(sigma @ velocity.values) if len(sigma) else 0.0


def shape_derivative_J(mesh: Mesh, u0: StateSolution, region: BoundaryRegion,
                       velocity: TangentialVelocity, p: float | None = None) -> float:
    """Endpoint formula for the derivative of J(chi_{D_t}) at t = 0."""
    velocity.check(region)
    p = u0.p_used if p is None else p
    ends = region.endpoints()
    if not ends:
        return 0.0
    s = np.array([e[0] for e in ends])
    if np.any(s < 0) or np.any(s > mesh.perimeter):
        raise RuntimeError("endpoint outside the boundary parameter range")
    sigma = np.array([e[1] for e in ends], dtype=float)
    u = mesh.interpolate_trace(u0.nodal_u, s)
    return p / (p - 1.0) * float(np.sum(u * sigma * velocity.values))


@dataclass(frozen=True)
class DerivativeEntry:
    t: float
    J_plus: float
    J_minus: float
    fd_dJ: float
    fd_dA: float
    converged: bool


@dataclass
class DerivativeReport:
    formula_dJ: float
    formula_dA: float
    J0: float
    entries: list[DerivativeEntry] = field(default_factory=list)
    observed_order: float | None = None

    @property
    def step_sizes(self) -> np.ndarray:
        return np.array([e.t for e in self.entries])

    @property
    def gaps(self) -> np.ndarray:
        return np.array([abs(e.fd_dJ - self.formula_dJ) for e in self.entries])

    @property
    def continuity(self) -> np.ndarray:
        """|J(D_t) - J(D)| for each step size."""
        return np.array([abs(e.J_plus - self.J0) for e in self.entries])


def fd_check(mesh: Mesh, region: BoundaryRegion, velocity: TangentialVelocity, p: float,
             solver_config: SolverConfig | None = None,
             step_sizes=(1e-2, 5e-3, 2.5e-3)) -> DerivativeReport:
    """Central differences of J and |D| along the flow, against the endpoint formulas."""
    steps = [float(t) for t in step_sizes]
    if any(t <= 0 for t in steps) or any(b >= a for a, b in zip(steps, steps[1:])):
        raise DomainError("step sizes must be positive and strictly decreasing")
    cfg = solver_config or SolverConfig(p=p)
    if cfg.p != p:
        raise DomainError("solver p differs from the requested p")

    def cost(D):
        load = BoundaryLoad.indicator(D)
        sol = fem.solve_state(mesh, load, cfg)
        return fem.cost_J(mesh, load, sol), sol

    J0, u0 = cost(region)
    report = DerivativeReport(
        formula_dJ=shape_derivative_J(mesh, u0, region, velocity, p),
        formula_dA=area_derivative(region, velocity),
        J0=J0,
    )
    for t in steps:
        Dp = perturb_region(region, velocity, t)
        Dm = perturb_region(region, velocity, -t)
        Jp, sp_ = cost(Dp)
        Jm, sm_ = cost(Dm)
        report.entries.append(DerivativeEntry(
            t, Jp, Jm, (Jp - Jm) / (2 * t), (Dp.measure() - Dm.measure()) / (2 * t),
            bool(sp_.converged and sm_.converged)))
    gaps = report.gaps
    if len(steps) >= 2 and np.all(gaps > 0):
        slope, _ = np.polyfit(np.log(steps), np.log(gaps), 1)
        report.observed_order = float(slope)
    return report


def relative_gap(report: DerivativeReport) -> float:
    scale = abs(report.formula_dJ)
    return float(report.gaps[-1] / scale) if scale > 0 else math.inf
