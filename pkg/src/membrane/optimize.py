"""
Maximization of the compliance J(f) = int f u_f over three load classes.

* rearrangements of a per-edge load on a uniform boundary partition,
  by best-response ascent through the Hardy-Littlewood pairing;
* indicators of boundary sets of prescribed length, by bathtub ascent on the
  superlevel sets of the current state trace;
* the unit ball of L^q, explicitly through the minimizer of the trace
  Rayleigh quotient.

Both ascent loops rely on the same comparison chain: the best response to the
current state never lowers J.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import fem
from .errors import ClassViolationError, DomainError, NonConvergenceError
from .fem import BoundaryLoad, SolverConfig, StateSolution
from .mesh import BoundaryRegion, Mesh, arc_region, make_region

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AscentConfig:
    ascent_tol: float = 1e-10
    max_ascent: int = 50
    multistart: int = 20
    seed: int = 0


@dataclass(frozen=True)
class AscentStep:
    iteration: int
    J: float
    threshold_s: float
    measure: float
    residual: float


@dataclass
class AscentTrace:
    steps: list[AscentStep] = field(default_factory=list)
    terminated_reason: str = ""

    @property
    def J_values(self) -> np.ndarray:
        return np.array([s.J for s in self.steps])

    def is_monotone(self, slack: float = 1e-12) -> bool:
        J = self.J_values
        return bool(np.all(np.diff(J) >= -slack))

    @property
    def iterations(self) -> int:
        return self.steps[-1].iteration if self.steps else 0


# --------------------------------------------------------------------------- rearrangements


def _check_uniform(lengths: np.ndarray) -> None:
    mean = float(np.mean(lengths))
    if np.max(np.abs(lengths - mean)) > 1e-9 * mean:
        raise ClassViolationError("rearrangement class needs equal boundary edge lengths")


def best_rearrangement(f0_values, u_trace, edge_lengths) -> np.ndarray:
    """Permutation of ``f0_values`` maximizing ``sum f u l``.

    The k-th largest load value goes to the edge with the k-th largest ``u``;
    equal ``u`` values are ranked by edge index.
    """
    f0 = np.asarray(f0_values, dtype=float)
    u = np.asarray(u_trace, dtype=float)
    ell = np.asarray(edge_lengths, dtype=float)
    if not (f0.shape == u.shape == ell.shape):
        raise DomainError("f0, u and lengths must have equal shapes")
    _check_uniform(ell)
    if np.any(f0 < 0) or np.any(u < 0):
        raise DomainError("best_rearrangement needs non-negative f0 and u")
    order = np.argsort(-u, kind="stable")
    out = np.empty_like(f0)
    out[order] = np.sort(f0)[::-1]
    return out


def ascent_rearrangement(mesh: Mesh, f0, solver_config: SolverConfig,
                         ascent_config: AscentConfig | None = None,
                         initial=None) -> tuple[np.ndarray, StateSolution, AscentTrace]:
    """Best-response iteration f <- best_rearrangement(f0, trace of u_f).

    ``f0`` fixes the class; ``initial`` (a permutation of it) is the first
    iterate and defaults to ``f0`` itself.
    """
    cfg = ascent_config or AscentConfig()
    f0 = np.asarray(f0, dtype=float)
    if f0.shape != (mesh.n_boundary_edges,):
        raise DomainError(f"f0 needs {mesh.n_boundary_edges} per-edge values")
    _check_uniform(mesh.edge_lengths)
    if np.any(f0 < 0):
        raise DomainError("f0 must be non-negative")
    f = f0.copy() if initial is None else np.asarray(initial, dtype=float).copy()
    if not np.array_equal(np.sort(f), np.sort(f0)):
        raise ClassViolationError("initial load is not a rearrangement of f0")

    trace = AscentTrace()

    def solve(values):
        load = BoundaryLoad.edge(values)
        sol = fem.solve_state(mesh, load, solver_config)
        J = fem.cost_J(mesh, load, sol)
        return sol, J, abs(J - sol.energy_value) / max(abs(J), 1e-300)

    sol, J, ident = solve(f)
    total = float(np.dot(f, mesh.edge_lengths))
    trace.steps.append(AscentStep(0, J, math.nan, total, ident))
    seen = {f.tobytes()}
    reason = "max_iters"
    for k in range(1, cfg.max_ascent + 1):
        if not sol.converged:
            reason = "solver_failure"
            break
        u_edge = np.maximum(mesh.edge_means(sol.nodal_u), 0.0)
        f_new = best_rearrangement(f0, u_edge, mesh.edge_lengths)
        if f_new.tobytes() in seen:
            reason = "fixed_point"
            break
        seen.add(f_new.tobytes())
        sol_new, J_new, ident = solve(f_new)
        trace.steps.append(AscentStep(k, J_new, math.nan, total, ident))
        change = abs(J_new - J)
        f, sol, J = f_new, sol_new, J_new
        if change <= cfg.ascent_tol * abs(J_new):
            reason = "tolerance"
            break
    trace.terminated_reason = reason
    return f, sol, trace


# --------------------------------------------------------------------------- bathtub


@dataclass(frozen=True, eq=False)
class BathtubResult:
    g: np.ndarray
    threshold_s: float
    tie_fraction_c: float
    region: BoundaryRegion | None = None
    degenerate: bool = False


def bathtub_discrete(u_values, lengths, A: float) -> BathtubResult:
    """Maximize ``sum g u l`` over ``0 <= g <= 1`` with ``sum g l = A``."""
    u = np.asarray(u_values, dtype=float)
    ell = np.asarray(lengths, dtype=float)
    total = float(ell.sum())
    if not (0.0 <= A <= total * (1 + 1e-14)):
        raise DomainError(f"A = {A} outside [0, {total}]")
    levels = np.unique(u)[::-1]
    measure_ge = np.array([ell[u >= lv].sum() for lv in levels])
    over = np.nonzero(measure_ge > A)[0]
    if len(over) == 0:
        return BathtubResult(np.ones_like(u), float(levels[-1]), 1.0)
    s = float(levels[over[0]])
    above = u > s
    tie = u == s
    c = (A - ell[above].sum()) / ell[tie].sum()
    c = min(max(c, 0.0), 1.0)
    g = above.astype(float) + c * tie
    return BathtubResult(g, s, float(c))


def _measure_ge(ua, ub, ell, t) -> float:
    hi = np.maximum(ua, ub)
    lo = np.minimum(ua, ub)
    flat = hi == lo
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(flat, (lo >= t).astype(float), np.clip((hi - t) / (hi - lo), 0.0, 1.0))
    return float(np.dot(ell, frac))


def superlevel_region(mesh: Mesh, u_trace, A: float) -> BathtubResult:
    """Superlevel set of measure ``A`` of a piecewise-linear boundary trace.

    ``u_trace`` holds values at the loop vertices. The threshold is located by
    bisection over the sorted vertex values; between two consecutive values the
    level-set measure is linear and is inverted exactly. Flat pieces sitting
    exactly at the threshold are included in increasing arc length until the
    measure budget is spent.
    """
    P = mesh.perimeter
    if not (0.0 < A < P):
        raise DomainError(f"A = {A} must lie in (0, {P})")
    ua = np.asarray(u_trace, dtype=float)
    ub = np.roll(ua, -1)
    ell = mesh.edge_lengths
    s0 = mesh.s_start
    levels = np.unique(ua)
    if len(levels) == 1:
        region = arc_region(0.0, A, P)
        return BathtubResult(_coverage(mesh, region), float(levels[0]), A / P, region, degenerate=True)

    flat = ua == ub

    def flat_at(t):
        return float(ell[flat & (ua == t)].sum())

    # largest k with m(levels[k]) >= A; m(levels[0]) = P
    lo, hi = 0, len(levels) - 1
    if _measure_ge(ua, ub, ell, levels[hi]) >= A:
        lo = hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _measure_ge(ua, ub, ell, levels[mid]) >= A:
            lo = mid
        else:
            hi = mid
    k = lo
    m_k = _measure_ge(ua, ub, ell, levels[k])
    m_plus = m_k - flat_at(levels[k])
    tie_budget = 0.0
    if m_plus <= A:
        t = float(levels[k])
        tie_budget = A - m_plus
    else:
        m_next = _measure_ge(ua, ub, ell, levels[k + 1])
        w = (m_plus - A) / (m_plus - m_next)
        t = float(levels[k] + w * (levels[k + 1] - levels[k]))
        t = min(max(t, float(levels[k])), float(levels[k + 1]))

    pieces = []
    sloped = ~flat
    both = sloped & (ua >= t) & (ub >= t)
    pieces += [(s, s + l) for s, l in zip(s0[both], ell[both])]
    start_in = sloped & (ua >= t) & (ub < t)
    x = ell[start_in] * (ua[start_in] - t) / (ua[start_in] - ub[start_in])
    pieces += [(s, s + xx) for s, xx in zip(s0[start_in], x)]
    end_in = sloped & (ua < t) & (ub >= t)
    x = ell[end_in] * (t - ua[end_in]) / (ub[end_in] - ua[end_in])
    pieces += [(s + xx, s + l) for s, xx, l in zip(s0[end_in], x, ell[end_in])]
    above_flat = flat & (ua > t)
    pieces += [(s, s + l) for s, l in zip(s0[above_flat], ell[above_flat])]

    c = 0.0
    ties = np.nonzero(flat & (ua == t))[0]
    tie_total = float(ell[ties].sum())
    if tie_budget > 0 and len(ties):
        c = min(tie_budget / tie_total, 1.0)
        budget = tie_budget
        for e in ties:
            if budget <= 0:
                break
            take = min(ell[e], budget)
            pieces.append((s0[e], s0[e] + take))
            budget -= take
    region = make_region(pieces, P)
    return BathtubResult(_coverage(mesh, region), t, c, region)


def _coverage(mesh: Mesh, region: BoundaryRegion) -> np.ndarray:
    """Fraction of each boundary edge covered by ``region``."""
    fa, fb = fem.region_hat_integrals(mesh, region)
    return (fa + fb) / mesh.edge_lengths


def optimality_residual(mesh: Mesh, u: StateSolution | np.ndarray, region: BoundaryRegion) -> tuple[float, bool]:
    """Spread ``max - min`` of the state trace over the region endpoints.

    Returns ``(value, flagged)``; regions without endpoints give ``(0, True)``.
    """
    ends = region.endpoints()
    if not ends:
        return 0.0, True
    vals = mesh.interpolate_trace(u.nodal_u if isinstance(u, StateSolution) else u,
                                  [s for s, _ in ends])
    return float(vals.max() - vals.min()), False


def _same_region(a: BoundaryRegion, b: BoundaryRegion, tol: float) -> bool:
    if len(a.intervals) != len(b.intervals):
        return False
    return bool(np.all(np.abs(np.array(a.intervals) - np.array(b.intervals)) <= tol))


@dataclass
class BathtubAscent:
    region: BoundaryRegion
    state: StateSolution
    trace: AscentTrace
    degenerate: bool = False

    @property
    def J(self) -> float:
        return self.trace.steps[-1].J


def ascent_bathtub(mesh: Mesh, A: float, solver_config: SolverConfig,
                   ascent_config: AscentConfig | None, init: BoundaryRegion) -> BathtubAscent:
    """Iterate D <- superlevel set of measure A of the trace of u_D."""
    cfg = ascent_config or AscentConfig()
    P = mesh.perimeter
    if not (0.0 < A < P):
        raise DomainError(f"A = {A} must lie in (0, {P})")
    if abs(init.measure() - A) > 1e-9 * P:
        raise DomainError(f"initial region has measure {init.measure()}, expected {A}")

    def solve(region):
        load = BoundaryLoad.indicator(region)
        sol = fem.solve_state(mesh, load, solver_config)
        return sol, fem.cost_J(mesh, load, sol)

    D = init
    sol, J = solve(D)
    trace = AscentTrace()
    trace.steps.append(AscentStep(0, J, math.nan, D.measure(), optimality_residual(mesh, sol, D)[0]))
    reason = "max_iters"
    degenerate = False
    for k in range(1, cfg.max_ascent + 1):
        if not sol.converged:
            reason = "solver_failure"
            break
        res = superlevel_region(mesh, mesh.trace(sol.nodal_u), A)
        if res.degenerate:
            degenerate = True
            reason = "fixed_point"
            break
        if _same_region(res.region, D, 1e-12 * P):
            reason = "fixed_point"
            break
        sol_new, J_new = solve(res.region)
        trace.steps.append(AscentStep(k, J_new, res.threshold_s, res.region.measure(),
                                      optimality_residual(mesh, sol_new, res.region)[0]))
        change = abs(J_new - J)
        D, sol, J = res.region, sol_new, J_new
        if change <= cfg.ascent_tol * abs(J_new):
            reason = "tolerance"
            break
    trace.terminated_reason = reason
    return BathtubAscent(D, sol, trace, degenerate)


def initial_regions(perimeter: float, A: float, count: int, seed: int) -> list[BoundaryRegion]:
    """Deterministic multistart set: alternating two-arc splits and single arcs."""
    rng = np.random.default_rng(seed)
    P = perimeter
    out = []
    for i in range(count):
        c = float(rng.uniform(0.0, P))
        if i % 2 == 0:
            frac = float(rng.uniform(0.2, 0.8))
            gap = float(rng.uniform(0.1, 0.9)) * (P - A)
            a1 = frac * A
            out.append(make_region([(c, c + a1), (c + a1 + gap, c + A + gap)], P))
        else:
            out.append(arc_region(c, A, P))
    return out


@dataclass
class Multistart:
    runs: list
    best_index: int

    @property
    def best(self):
        return self.runs[self.best_index]


def multistart_bathtub(mesh: Mesh, A: float, solver_config: SolverConfig,
                       ascent_config: AscentConfig | None = None,
                       inits: list[BoundaryRegion] | None = None) -> Multistart:
    cfg = ascent_config or AscentConfig()
    if inits is None:
        if not (0.0 < A < mesh.perimeter):
            raise DomainError(f"A = {A} must lie in (0, {mesh.perimeter})")
        inits = initial_regions(mesh.perimeter, A, cfg.multistart, cfg.seed)
    runs = [ascent_bathtub(mesh, A, solver_config, cfg, D) for D in inits]
    best = max(range(len(runs)), key=lambda i: runs[i].J)
    return Multistart(runs, best)


def multistart_rearrangement(mesh: Mesh, f0, solver_config: SolverConfig,
                             ascent_config: AscentConfig | None = None) -> Multistart:
    """Start 0 is ``f0`` as given; the others are seeded random permutations."""
    cfg = ascent_config or AscentConfig()
    f0 = np.asarray(f0, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    starts = [f0] + [rng.permutation(f0) for _ in range(max(cfg.multistart, 1) - 1)]
    runs = [ascent_rearrangement(mesh, f0, solver_config, cfg, s) for s in starts]
    best = max(range(len(runs)), key=lambda i: runs[i][2].steps[-1].J)
    return Multistart(runs, best)


# --------------------------------------------------------------------------- L^q ball

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(8)
_GAUSS_X = 0.5 * (_GAUSS_X + 1.0)
_GAUSS_W = 0.5 * _GAUSS_W


def boundary_power_integral(mesh: Mesh, trace, r: float) -> float:
    """int over the boundary of |v|^r for the piecewise-linear trace ``trace``."""
    va = np.asarray(trace, dtype=float)
    vb = np.roll(va, -1)
    vals = va[:, None] * (1 - _GAUSS_X) + vb[:, None] * _GAUSS_X
    return float(mesh.edge_lengths @ (np.abs(vals) ** r @ _GAUSS_W))


def _boundary_power_gradient(mesh: Mesh, trace, r: float) -> np.ndarray:
    va = np.asarray(trace, dtype=float)
    vb = np.roll(va, -1)
    vals = va[:, None] * (1 - _GAUSS_X) + vb[:, None] * _GAUSS_X
    dens = r * np.abs(vals) ** (r - 2) * vals if r != 2 else 2.0 * vals
    ga = mesh.edge_lengths * (dens * (1 - _GAUSS_X) @ _GAUSS_W)
    gb = mesh.edge_lengths * (dens * _GAUSS_X @ _GAUSS_W)
    return ga + np.roll(gb, 1)


def boundary_lq_norm(mesh: Mesh, trace, q: float) -> float:
    return boundary_power_integral(mesh, trace, q) ** (1.0 / q)


@dataclass(frozen=True, eq=False)
class LqExtremal:
    v: np.ndarray
    S: float
    q: float
    q_conj: float
    p: float
    iterations: int
    converged: bool = True


def conjugate(q: float) -> float:
    return q / (q - 1.0)


def rayleigh_quotient(mesh: Mesh, v, p: float, q: float) -> float:
    """energy(v) / (int_boundary |v|^{q'})^{p/q'}."""
    qc = conjugate(q)
    v = np.asarray(v, dtype=float)
    return fem.energy(mesh, v, p) / boundary_power_integral(mesh, mesh.trace(v), qc) ** (p / qc)


def trace_extremal(mesh: Mesh, q: float, p: float, solver_config: SolverConfig | None = None,
                   max_iter: int = 5000, tol: float = 1e-10) -> LqExtremal:
    """Minimize the trace Rayleigh quotient by preconditioned projected gradient descent.

    Iterates are kept non-negative (absolute value) with unit boundary
    L^{q'} norm. The search direction is the gradient mapped through the
    p = 2 operator (stiffness plus lumped mass); the step is found by
    backtracking on the quotient.
    """
    if not q > 1:
        raise DomainError(f"q must exceed 1, got {q}")
    if not p > 1:
        raise DomainError(f"p must exceed 1, got {p}")
    if not q > p / (2.0 * (p - 1.0)):
        warnings.warn(f"q = {q} violates the two-dimensional trace condition q > p'/2", stacklevel=2)
    qc = conjugate(q)
    loop = mesh.boundary_loop
    H = fem.linear_operator(mesh)
    lu = spla.splu(H)

    def normalize(v):
        v = np.abs(v)
        N = boundary_power_integral(mesh, v[loop], qc)
        if not N > 0:
            return None
        return v / N ** (1.0 / qc)

    def quotient_and_grad(v):
        E = fem.energy(mesh, v, p)
        gE = fem.energy_gradient(mesh, v, p)
        gN = np.zeros_like(v)
        gN[loop] = _boundary_power_gradient(mesh, v[loop], qc)
        # v has unit norm, so N = 1 in the quotient rule
        return E, gE - (p / qc) * E * gN

    v = normalize(np.ones(mesh.n_vertices))
    R, g = quotient_and_grad(v)
    alpha = 1.0 / p
    for it in range(1, max_iter + 1):
        d = -lu.solve(g)
        while True:
            cand = normalize(v + alpha * d)
            if cand is None:
                cand = normalize(np.ones(mesh.n_vertices))
            R_new = fem.energy(mesh, cand, p)
            if R_new < R or alpha < 1e-14:
                break
            alpha *= 0.5
        if R_new >= R:
            return LqExtremal(v, R, q, qc, p, it)
        change = (R - R_new) / R
        v = cand
        R, g = quotient_and_grad(v)
        if change <= tol:
            return LqExtremal(v, R, q, qc, p, it)
        alpha = min(2.0 * alpha, 1.0 / p)
    raise NonConvergenceError(f"trace extremal did not converge in {max_iter} iterations")


def steklov_inverse_iteration(mesh: Mesh, tol: float = 1e-14, max_iter: int = 1000) -> float:
    """Smallest eigenvalue of (K + M) v = lam B v by inverse iteration (p = q' = 2 cross-check)."""
    H = fem.linear_operator(mesh)
    lu = spla.splu(H)
    v = np.ones(mesh.n_vertices)
    lam = math.inf
    for _ in range(max_iter):
        Bv = fem.assemble_load(mesh, BoundaryLoad.nodal(mesh.trace(v)))
        w = lu.solve(Bv)
        Bw = fem.assemble_load(mesh, BoundaryLoad.nodal(mesh.trace(w)))
        lam_new = float(w @ (H @ w)) / float(w @ Bw)
        v = w / math.sqrt(float(w @ Bw))
        if abs(lam_new - lam) <= tol * lam_new:
            return lam_new
        lam = lam_new
    raise NonConvergenceError("inverse iteration did not converge")


@dataclass(frozen=True, eq=False)
class LqOptimum:
    load: BoundaryLoad
    predicted_J: float
    predicted_u: np.ndarray
    norm_defect: float


def lq_optimal_load(mesh: Mesh, extremal: LqExtremal, p: float | None = None) -> LqOptimum:
    """Optimal unit-L^q load v^{q'-1} and its predicted cost S^{-1/(p-1)}.

    For q != 2 the interpolated power is rescaled to unit discrete L^q norm;
    ``norm_defect`` records how far it was from one before rescaling.
    """
    p = extremal.p if p is None else p
    if not extremal.converged:
        raise NonConvergenceError("extremal did not converge")
    f = mesh.trace(extremal.v) ** (extremal.q_conj - 1.0)
    norm = boundary_lq_norm(mesh, f, extremal.q)
    f = f / norm
    if abs(boundary_lq_norm(mesh, f, extremal.q) - 1.0) > 1e-8:
        raise NonConvergenceError("optimal load failed to normalize")
    scale = extremal.S ** (-1.0 / (p - 1.0))
    return LqOptimum(BoundaryLoad.nodal(f), scale, scale * extremal.v, abs(norm - 1.0))
