r"""
Semi-analytic solution of the p = 2 problem on the unit disk.

For a boundary load :math:`f(\theta) = a_0 + \sum_n a_n \cos n\theta + b_n \sin n\theta`
the solution of :math:`-\Delta u + u = 0`, :math:`\partial_\nu u = f` is

.. math::
    u(r, \theta) = a_0 \frac{I_0(r)}{I_0'(1)}
        + \sum_{n \ge 1} \frac{I_n(r)}{I_n'(1)} (a_n \cos n\theta + b_n \sin n\theta)

so that :math:`J = \int f u = 2\pi a_0^2 m_0 + \pi \sum_n (a_n^2 + b_n^2) m_n`
with mode multipliers :math:`m_n = I_n(1) / I_n'(1)`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DomainError
from .mesh import BoundaryRegion

DEFAULT_MODES = 64


def bessel_I(n: int, r: float) -> float:
    """Modified Bessel function of the first kind by its power series.

    Terms are added until the next one drops below ``1e-16`` times the
    partial sum. Intended for ``0 <= r <= 10``.
    """
    if n < 0:
        raise DomainError("order must be non-negative")
    if r < 0 or r > 10:
        raise DomainError(f"argument {r} outside the supported range [0, 10]")
    half = 0.5 * r
    term = half ** n / math.factorial(n)
    total = term
    q = half * half
    k = 0
    while True:
        k += 1
        term *= q / (k * (k + n))
        total += term
        if term < 1e-16 * total or term == 0.0:
            return total


def bessel_I_prime(n: int, r: float = 1.0) -> float:
    """Derivative of :func:`bessel_I` in ``r``: ``I_1`` for ``n = 0``, else the mean of the neighbours."""
    if n == 0:
        return bessel_I(1, r)
    return 0.5 * (bessel_I(n - 1, r) + bessel_I(n + 1, r))


def _scaled_I1(n: int) -> float:
    # I_n(1) * 2^n * n!, which stays O(1) for any n
    total = term = 1.0
    k = 0
    while True:
        k += 1
        term *= 0.25 / (k * (k + n))
        total += term
        if term < 1e-17 * total:
            return total


@lru_cache(maxsize=None)
def mode_multiplier(n: int) -> float:
    """``I_n(1) / I_n'(1)``, computed without underflow for large ``n``."""
    # I_n' = I_{n+1} + n I_n  at r = 1
    ratio = _scaled_I1(n + 1) / (2.0 * (n + 1) * _scaled_I1(n))
    return 1.0 / (ratio + n)


@dataclass(frozen=True, eq=False)
class FourierLoad:
    a0: float
    a: np.ndarray = field(default_factory=lambda: np.zeros(0))
    b: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # |a_n|, |b_n| <= decay / n for n beyond the stored modes (None: unknown)
    decay: float | None = 0.0

    @property
    def n_modes(self) -> int:
        return len(self.a)

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        n = np.arange(1, self.n_modes + 1)
        nt = np.multiply.outer(theta, n)
        return self.a0 + np.cos(nt) @ self.a + np.sin(nt) @ self.b


@dataclass(frozen=True, eq=False)
class OracleSolution:
    load: FourierLoad
    u0: float
    u_a: np.ndarray
    u_b: np.ndarray
    J: float
    truncation_bound: float | None

    def boundary(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        n = np.arange(1, len(self.u_a) + 1)
        nt = np.multiply.outer(theta, n)
        return self.u0 + np.cos(nt) @ self.u_a + np.sin(nt) @ self.u_b

    def __call__(self, r, theta) -> np.ndarray:
        """Interior value u(r, theta)."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        out = self.load.a0 * np.array([bessel_I(0, x) for x in r.ravel()]).reshape(r.shape) / bessel_I_prime(0)
        for n in range(1, self.load.n_modes + 1):
            an, bn = self.load.a[n - 1], self.load.b[n - 1]
            if an == 0 and bn == 0:
                continue
            radial = np.array([bessel_I(n, x) for x in r.ravel()]).reshape(r.shape) / bessel_I_prime(n)
            out = out + radial * (an * np.cos(n * theta) + bn * np.sin(n * theta))
        return out


def solve_disk(load: FourierLoad) -> OracleSolution:
    """Mode-wise exact solution and cost J for a trigonometric load."""
    n = load.n_modes
    m = np.array([mode_multiplier(k) for k in range(1, n + 1)])
    m0 = mode_multiplier(0)
    J = 2.0 * math.pi * load.a0 ** 2 * m0 + math.pi * float(np.sum((load.a ** 2 + load.b ** 2) * m))
    bound = None
    if load.decay is not None:
        # m_k <= 1/k and a_k^2 + b_k^2 <= 2 decay^2 / k^2, summed over k > n
        bound = math.pi * load.decay ** 2 / max(n, 1) ** 2
    return OracleSolution(load, load.a0 * m0, load.a * m, load.b * m, J, bound)


def oracle_J(load: FourierLoad) -> float:
    return solve_disk(load).J


def arc_fourier(region: BoundaryRegion, n_modes: int = DEFAULT_MODES) -> FourierLoad:
    """Closed-form Fourier coefficients of an indicator.

    Arc lengths of ``region`` are mapped to angles by ``2 pi / perimeter``, so a
    region built on a polygonal disk mesh is read on the unit circle.
    """
    scale = 2.0 * math.pi / region.perimeter
    n = np.arange(1, n_modes + 1)
    a0 = 0.0
    a = np.zeros(n_modes)
    b = np.zeros(n_modes)
    for lo, hi in region.intervals:
        al, be = lo * scale, hi * scale
        a0 += (be - al) / (2.0 * math.pi)
        a += (np.sin(n * be) - np.sin(n * al)) / (n * math.pi)
        b += (np.cos(n * al) - np.cos(n * be)) / (n * math.pi)
    decay = 2.0 * len(region.intervals) / math.pi
    return FourierLoad(a0, a, b, decay)


def trig_load(a0: float = 0.0, cos: dict | None = None, sin: dict | None = None) -> FourierLoad:
    """Load with finitely many modes, e.g. ``trig_load(cos={1: 1.0})`` for cos(theta)."""
    cos = cos or {}
    sin = sin or {}
    n = max([0, *cos, *sin])
    a = np.zeros(n)
    b = np.zeros(n)
    for k, v in cos.items():
        a[k - 1] = v
    for k, v in sin.items():
        b[k - 1] = v
    return FourierLoad(float(a0), a, b, 0.0)


def _arcs_region(arcs, perimeter=2.0 * math.pi):
    from .mesh import make_region
    return make_region(arcs, perimeter)


def single_arc_J(A: float, center: float = 0.0, n_modes: int = DEFAULT_MODES) -> float:
    return oracle_J(arc_fourier(_arcs_region([(center - A / 2, center + A / 2)]), n_modes))


def two_arc_J(A: float, fraction: float, gap: float, center: float = 0.0,
              n_modes: int = DEFAULT_MODES) -> float:
    """J for arcs of lengths ``fraction*A`` and ``(1-fraction)*A`` separated by ``gap`` on one side."""
    a1 = fraction * A
    a2 = A - a1
    start = center - A / 2 - gap / 2
    arcs = [(start, start + a1), (start + a1 + gap, start + a1 + gap + a2)]
    return oracle_J(arc_fourier(_arcs_region(arcs), n_modes))


@dataclass(frozen=True)
class ArcSearchRow:
    config_id: int
    description: str
    J: float


def best_arc_search(A: float, K_configs: int = 100, seed: int = 0,
                    n_modes: int = DEFAULT_MODES) -> tuple[ArcSearchRow, list[ArcSearchRow]]:
    """Compare the single arc of length ``A`` with random two-arc splits of the same total length."""
    if not 0 < A < 2 * math.pi:
        raise DomainError(f"A must lie in (0, 2pi), got {A}")
    rng = np.random.default_rng(seed)
    rows = [ArcSearchRow(0, "single arc", single_arc_J(A, 0.0, n_modes))]
    free = 2 * math.pi - A
    for k in range(1, K_configs + 1):
        frac = float(rng.uniform(0.05, 0.95))
        gap = float(rng.uniform(0.02, 0.98)) * free
        J = two_arc_J(A, frac, gap, float(rng.uniform(0, 2 * math.pi)), n_modes)
        rows.append(ArcSearchRow(k, f"two arcs fraction={frac!r} gap={gap!r}", J))
    best = max(rows, key=lambda r: r.J)
    return best, rows
