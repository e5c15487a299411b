import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from membrane.errors import DomainError, PerturbationTooLargeError
from membrane.fem import BoundaryLoad, SolverConfig, solve_state
from membrane.mesh import arc_region, make_region
from membrane.shape import (TangentialVelocity, area_derivative, fd_check, perturb_region, relative_gap,
                            shape_derivative_J)

TWO_PI = 2 * math.pi
# frozen: 64-edge disk refined once, arc of length P/4 with endpoints mid-edge, V = (1, 0), p = 2
FORMULA_FROZEN = -1.5827196471480778


def mid_edge_arc(mesh):
    P = mesh.perimeter
    h = mesh.edge_lengths[0]
    A = P / 4
    return make_region([(0.5 * h, 0.5 * h + A)], P)


# ---------------------------------------------------------------- perturb_region

def test_zero_step_identity():
    R = make_region([(1.0, 2.0)], TWO_PI)
    assert perturb_region(R, TangentialVelocity([3.0, -1.0]), 0.0) is R


def test_linear_transport_example():
    R = make_region([(0.0, 1.0)], TWO_PI)
    out = perturb_region(R, TangentialVelocity([0.0, 1.0]), 0.1)
    assert out.arcs() == [(0.0, pytest.approx(1.1))]


def test_wrapping_arc_transport():
    R = make_region([(TWO_PI - 0.5, TWO_PI + 0.5)], TWO_PI)
    # endpoints sorted: end at 0.5 first, then start at 2pi - 0.5
    assert [s for _, s in R.endpoints()] == [1, -1]
    out = perturb_region(R, TangentialVelocity([0.2, 0.0]), 1.0)
    assert out.measure() == pytest.approx(1.2)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 6), st.floats(0.1, 3), st.floats(-0.5, 0.5))
def test_rigid_rotation_preserves_measure(c, A, t):
    R = arc_region(c, A, TWO_PI)
    out = perturb_region(R, TangentialVelocity([1.0, 1.0]), t)
    assert out.measure() == pytest.approx(A, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.floats(-0.05, 0.05))
def test_measure_linear_in_t(v, t):
    R = make_region([(0.5, 1.5), (3.0, 4.0)], TWO_PI)
    V = TangentialVelocity(v)
    out = perturb_region(R, V, t)
    assert out.measure() == pytest.approx(R.measure() + t * area_derivative(R, V), abs=1e-12)


def test_crossing_endpoints_rejected():
    R = make_region([(1.0, 1.2)], TWO_PI)
    with pytest.raises(PerturbationTooLargeError):
        perturb_region(R, TangentialVelocity([1.0, -1.0]), 0.1)
    R2 = make_region([(1.0, 2.0), (2.1, 3.0)], TWO_PI)
    with pytest.raises(PerturbationTooLargeError):
        perturb_region(R2, TangentialVelocity([0.0, 1.0, 0.0, 0.0]), 0.2)


def test_velocity_size_checked():
    with pytest.raises(DomainError):
        perturb_region(make_region([(1.0, 2.0)], TWO_PI), TangentialVelocity([1.0]), 0.1)
    with pytest.raises(DomainError):
        TangentialVelocity([np.nan, 0.0])


def test_velocity_algebra():
    V = TangentialVelocity([1.0, 2.0]) + 2 * TangentialVelocity([0.5, 0.0])
    assert list(V.values) == [2.0, 2.0]


# ---------------------------------------------------------------- derivative formulas

def test_area_derivative_cases():
    R = make_region([(1.0, 2.0)], TWO_PI)
    assert area_derivative(R, TangentialVelocity([1.0, 1.0])) == 0.0
    assert area_derivative(R, TangentialVelocity([-1.0, 1.0])) == 2.0
    assert area_derivative(R, TangentialVelocity([1.0, 0.0])) == -1.0


def test_rotation_of_symmetric_arc(disk1):
    P = disk1.perimeter
    D = arc_region(0.0, P / 4, P)
    sol = solve_state(disk1, BoundaryLoad.indicator(D), SolverConfig())
    dJ = shape_derivative_J(disk1, sol, D, TangentialVelocity([1.0, 1.0]))
    assert abs(dJ) <= 1e-6 * sol.nodal_u.max()


def test_single_endpoint_formula(disk1):
    P = disk1.perimeter
    D = make_region([(0.3, 1.9)], P)
    sol = solve_state(disk1, BoundaryLoad.indicator(D), SolverConfig())
    u_end = disk1.interpolate_trace(sol.nodal_u, [1.9])[0]
    assert shape_derivative_J(disk1, sol, D, TangentialVelocity([0.0, 1.0]), 2.0) == pytest.approx(2 * u_end)
    # p = 3 weight is 3/2
    sol3 = solve_state(disk1, BoundaryLoad.indicator(D), SolverConfig(p=3.0))
    u3 = disk1.interpolate_trace(sol3.nodal_u, [1.9])[0]
    assert shape_derivative_J(disk1, sol3, D, TangentialVelocity([0.0, 1.0])) == pytest.approx(1.5 * u3)


def test_empty_region_derivative(disk0):
    D = make_region([], disk0.perimeter)
    sol = solve_state(disk0, BoundaryLoad.zero(disk0), SolverConfig())
    assert shape_derivative_J(disk0, sol, D, TangentialVelocity([])) == 0.0


# ---------------------------------------------------------------- finite-difference check

def test_zero_velocity_fd(disk0):
    D = mid_edge_arc(disk0)
    rep = fd_check(disk0, D, TangentialVelocity([0.0, 0.0]), 2.0)
    assert rep.formula_dJ == 0.0
    assert all(e.fd_dJ == 0.0 and e.fd_dA == 0.0 for e in rep.entries)
    assert rep.observed_order is None


def test_fd_translation_p2(disk1):
    D = mid_edge_arc(disk1)
    rep = fd_check(disk1, D, TangentialVelocity([1.0, 0.0]), 2.0)
    assert rep.formula_dJ == pytest.approx(FORMULA_FROZEN, rel=1e-9)
    for e in rep.entries:
        assert abs(e.fd_dA - rep.formula_dA) <= 1e-12
        assert e.converged
    g = rep.gaps
    assert g[0] > g[1] > g[2]
    assert rep.observed_order >= 1.0
    assert relative_gap(rep) <= 1e-2
    # continuity: J(D_t) -> J(D)
    c = rep.continuity
    assert c[0] > c[1] > c[2]


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_fd_other_p(disk0, p):
    D = mid_edge_arc(disk0)
    rep = fd_check(disk0, D, TangentialVelocity([0.3, -0.7]), p)
    assert rep.observed_order >= 1.0
    assert relative_gap(rep) <= 1e-2


def test_fd_rejects_bad_steps(disk0):
    D = mid_edge_arc(disk0)
    with pytest.raises(DomainError):
        fd_check(disk0, D, TangentialVelocity([1.0, 0.0]), 2.0, step_sizes=(1e-3, 1e-2))
    with pytest.raises(DomainError):
        fd_check(disk0, D, TangentialVelocity([1.0, 0.0]), 2.0, SolverConfig(p=3.0))
