import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from calabi.errors import BoundaryNode, DegenerateSlope, EndpointMismatch, GridTooSmall, NotMonotone
from calabi.geometry import KahlerClass, ManifoldParams, reference_potential
from calabi.profile import (
    MIN_NODES,
    ProfileGrid,
    from_reference,
    phi_tilde,
    reconstruct_u,
    rho_to_x,
    u_second,
    u_second_interior,
    u_third_ratio,
    validate,
    x_to_rho,
)

P21 = ManifoldParams(2, 1)
C13 = KahlerClass(1, 3)


def _ref(a=1, b=3, k=1, m=401, n=2):
    return from_reference(ManifoldParams(n, k), KahlerClass(a, b), m)


def _wavy(m, a=1.0, b=3.0, k=1):
    # strictly increasing, not affine: f_x = (b - a)(1 - cos(2 pi x)/2)
    x = np.linspace(0.0, 1.0, m)
    f = a + (b - a) * (x - np.sin(2 * np.pi * x) / (4 * np.pi))
    f[0], f[-1] = a, b
    return ProfileGrid(ManifoldParams(2, k), KahlerClass(a, b), f)


@st.composite
def increasing_profiles(draw, m=MIN_NODES):
    a = draw(st.floats(0.1, 3.0))
    gap = draw(st.floats(0.1, 5.0))
    weights = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=m - 1, max_size=m - 1)))
    f = a + gap * np.concatenate([[0.0], np.cumsum(weights) / weights.sum()])
    f[-1] = a + gap
    k = draw(st.integers(1, 4))
    return ProfileGrid(ManifoldParams(2, k), KahlerClass(a, a + gap), f)


def test_rho_x_roundtrip():
    rho = np.linspace(-8, 8, 33)
    for k in (1, 3):
        # x rounds to within 1 ulp of 1 at large rho, so the inverse loses digits there
        assert x_to_rho(rho_to_x(rho, k), k) == pytest.approx(rho, abs=1e-6)
    assert rho_to_x(0.0, 2) == 0.5


def test_from_reference_is_affine_and_exact():
    grid = from_reference(P21, C13, 33)
    assert grid.f == pytest.approx(1 + 2 * grid.x, abs=1e-15)
    assert grid.f[0] == 1.0 and grid.f[-1] == 3.0
    validate(grid)


def test_from_reference_rejects_small_grid():
    # five nodes would give [1, 1.5, 2, 2.5, 3], but grids need at least 33 nodes
    with pytest.raises(GridTooSmall):
        from_reference(P21, C13, 5)


def test_near_degenerate_class_is_valid():
    grid = from_reference(P21, KahlerClass(2, 2.0001), 101)
    validate(grid)
    assert np.diff(grid.f) == pytest.approx(np.full(100, 1e-6), rel=1e-6)


def test_profile_values_are_read_only():
    grid = _ref(m=33)
    with pytest.raises(ValueError):
        grid.f[3] = 0.0


def test_validate_errors():
    grid = _ref(m=33)
    f = np.array(grid.f)
    f[5], f[6] = f[6], f[5]
    with pytest.raises(NotMonotone):
        validate(grid.with_values(f))
    f = np.array(grid.f)
    f[0] = 1.1
    with pytest.raises(EndpointMismatch):
        validate(grid.with_values(f))
    f = np.array(grid.f)
    f[1] = f[0]
    with pytest.raises(DegenerateSlope):
        validate(grid.with_values(f))


def test_u_second_reference():
    grid = _ref()
    assert u_second(grid, 200) == pytest.approx(0.5, abs=1e-13)
    _, _, exact = reference_potential(P21, C13, grid.rho[1:-1])
    assert u_second_interior(grid) == pytest.approx(exact, rel=1e-12)
    # vanishes linearly at D_0: u'' ~ k (b - a) x
    assert u_second(grid, 1) / grid.x[1] == pytest.approx(2.0, rel=1e-2)


def test_u_second_boundary_nodes():
    grid = _ref(m=33)
    for j in (0, 32):
        with pytest.raises(BoundaryNode):
            u_second(grid, j)
    for j in (1, 31):
        with pytest.raises(BoundaryNode):
            u_third_ratio(grid, j)


def test_u_second_second_order():
    # error at x = 1/8 on grids m and 2m - 1 shrinks by about 4
    def err(m):
        grid = _wavy(m)
        j = (m - 1) // 8
        x = grid.x[j]
        exact = x * (1 - x) * 2.0 * (1 - math.cos(2 * math.pi * x) / 2)
        return abs(u_second(grid, j) - exact)

    ratio = err(65) / err(129)
    assert ratio == pytest.approx(4.0, rel=0.05)


def test_u_third_ratio_reference():
    grid = _ref(k=1)
    assert u_third_ratio(grid, 200) == pytest.approx(0.0, abs=1e-12)
    assert u_third_ratio(grid, 4) == pytest.approx(0.98, abs=1e-12)
    assert u_third_ratio(grid, 396) == pytest.approx(-0.98, abs=1e-12)
    grid = _ref(k=3)
    assert u_third_ratio(grid, 4) == pytest.approx(3 * 0.98, abs=1e-12)


def test_reconstruct_u_reference():
    grid = _ref()
    assert reconstruct_u(grid, 0.0) == 0.0
    # 1 + 2 log((e + 1)/2), evaluated independently
    assert reconstruct_u(grid, 1.0) == pytest.approx(2.2402290139165550, abs=1e-12)
    rho = np.linspace(-6, 6, 25)
    u_hat, _, _ = reference_potential(P21, C13, rho)
    u_hat0, _, _ = reference_potential(P21, C13, 0.0)
    assert reconstruct_u(grid, rho) == pytest.approx(u_hat - u_hat0, abs=1e-12)


def test_reconstruct_u_against_quadrature():
    grid = _wavy(65, k=2)

    def integrand(r):
        return float(np.interp(rho_to_x(r, 2), grid.x, grid.f))

    for rho in (-4.0, -0.3, 0.7, 5.0):
        breaks = [r for r in x_to_rho(grid.x[1:-1], 2) if min(0, rho) < r < max(0, rho)]
        value, _ = quad(integrand, 0.0, rho, points=breaks or None, limit=400, epsabs=1e-13)
        assert reconstruct_u(grid, rho) == pytest.approx(value, abs=1e-9)


def test_reconstruct_u_odd_part():
    # u(rho) - u(-rho) = (a + b) rho when f(x) + f(1 - x) = a + b
    grid = _ref(a=0.5, b=4.0, k=2)
    rho = np.linspace(0.1, 7, 20)
    assert reconstruct_u(grid, rho) - reconstruct_u(grid, -rho) == pytest.approx(4.5 * rho, abs=1e-11)


@settings(max_examples=40, deadline=None)
@given(grid=increasing_profiles())
def test_reconstruct_u_is_convex_with_derivative_f(grid):
    validate(grid)
    rho = np.linspace(-4, 4, 161)
    u = reconstruct_u(grid, rho)
    h = rho[1] - rho[0]
    assert np.all(np.diff(u, 2) >= -1e-10)
    slope = np.diff(u) / h
    mid = 0.5 * (rho[1:] + rho[:-1])
    f_mid = np.interp(rho_to_x(mid, grid.params.k), grid.x, grid.f)
    assert slope == pytest.approx(f_mid, abs=2e-2 * float(grid.cls.b))


@settings(max_examples=40, deadline=None)
@given(grid=increasing_profiles())
def test_u_second_positive_for_valid_profiles(grid):
    assert np.all(u_second_interior(grid) > 0)


def test_phi_tilde_vanishes_on_reference():
    rho = np.linspace(-5, 5, 41)
    grid = _ref(a=1, b=5, k=2)
    cls0 = KahlerClass(1, 5)
    assert np.max(np.abs(phi_tilde(grid, 0.0, cls0, rho))) < 1e-12
    # reference grid of the class at t = 0.25 against cls0 flowed to 0.25
    grid_t = from_reference(ManifoldParams(2, 2), KahlerClass(1, 4), 401)
    assert np.max(np.abs(phi_tilde(grid_t, 0.25, cls0, rho))) < 1e-12
