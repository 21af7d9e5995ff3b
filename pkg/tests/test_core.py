import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prandtl_lab.core import (BandedMatrix, GridFn, WeightSpec, XGrid, YGrid, ZGrid,
                              build_stretched_grid, complex_newton, cumulative_integral,
                              derivative, fit_exponent, layered_grid, solve_banded,
                              weighted_sup_norm)
from prandtl_lab.errors import InvalidArgument, NoConvergence, NumericFailure


def fn(grid, f):
    return GridFn(grid, f(grid.nodes))


# --- grids ---------------------------------------------------------------------

def test_zero_stretch_is_affine():
    g = build_stretched_grid(10.0, 16, 0.0)
    assert np.allclose(g.nodes, np.linspace(0, 10, 16))
    assert g.y_max == 10.0


def test_stretched_grid_clusters_at_wall_and_matches_map():
    g = build_stretched_grid(10.0, 101, 3.0)
    h = g.spacing
    assert h[0] < h[-1]
    zeta = np.arange(101) / 100
    assert np.allclose(g.nodes, 10 * np.sinh(3 * zeta) / np.sinh(3), rtol=1e-14, atol=1e-14)


@pytest.mark.parametrize("args", [(0.0, 20, 1.0), (-1.0, 20, 1.0), (10.0, 15, 1.0),
                                  (10.0, 20, -1.0)])
def test_stretched_grid_rejects_bad_input(args):
    with pytest.raises(InvalidArgument):
        build_stretched_grid(*args)


def test_grid_invariants():
    with pytest.raises(InvalidArgument):
        YGrid(np.array([0.1, 1.0]))
    with pytest.raises(InvalidArgument):
        YGrid(np.array([0.0, 2.0, 1.0]))
    with pytest.raises(InvalidArgument):
        ZGrid(np.array([-1.0, 0.0, 2.0]))
    with pytest.raises(InvalidArgument):
        XGrid(np.array([1.0, 2.0]))
    z = ZGrid.uniform(8.0, 65)
    assert z.nodes[z.center] == 0.0 and z.z_max == 8.0


def test_layered_grid_places_focus_node():
    g = layered_grid(20.0, 0.01, 0.2, focus=0.52, h_focus=0.005, focus_width=0.1)
    assert np.any(g.nodes == 0.52)
    assert g.nodes[-1] == 20.0 and g.spacing.max() <= 0.2 + 1e-9


def test_gridfn_rejects_nonfinite():
    g = build_stretched_grid(1.0, 16, 0.0)
    with pytest.raises(InvalidArgument):
        GridFn(g, np.full(16, np.nan))


# --- derivatives and quadrature -------------------------------------------------

def test_second_derivative_exact_for_quadratic():
    g = YGrid(np.linspace(0, 10, 21))
    d2 = derivative(fn(g, lambda y: y * y), 2).values
    assert np.allclose(d2[1:-1], 2.0, atol=1e-11)


def test_derivative_of_constant_is_zero():
    g = build_stretched_grid(5.0, 40, 2.0)
    for k in (1, 2, 3):
        assert np.allclose(derivative(fn(g, lambda y: 3 + 0 * y), k).values, 0, atol=1e-9)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_derivative_second_order_convergence(order):
    errs = []
    for n in (101, 201, 401):
        g = build_stretched_grid(6.0, n, 2.0)
        d = derivative(fn(g, lambda y: np.exp(-y)), order).values
        errs.append(np.max(np.abs(d - (-1) ** order * np.exp(-g.nodes))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_derivative_needs_enough_nodes():
    g = YGrid(np.array([0.0, 1.0, 2.0, 3.0]))
    with pytest.raises(InvalidArgument):
        derivative(fn(g, np.sin), 3)


def test_cumulative_integral_examples():
    g = YGrid(np.arange(11.0))
    assert np.allclose(cumulative_integral(fn(g, lambda y: 1 + 0 * y)).values, g.nodes)
    assert np.all(cumulative_integral(fn(g, lambda y: 0 * y)).values == 0)
    errs = []
    for n in (51, 101):
        g = build_stretched_grid(3.0, n, 1.5)
        F = cumulative_integral(fn(g, lambda y: 2 * y)).values
        assert np.allclose(F, g.nodes ** 2, rtol=1e-12, atol=1e-12)  # trapezoid exact on lines
        G = cumulative_integral(fn(g, np.cos)).values
        errs.append(np.max(np.abs(G - np.sin(g.nodes))))
    assert errs[0] / errs[1] > 3.5


def test_integrate_then_differentiate_recovers_f():
    errs = []
    for n in (101, 201):
        g = build_stretched_grid(4.0, n, 1.0)
        f = fn(g, lambda y: np.cos(3 * y))
        back = derivative(cumulative_integral(f), 1).values
        errs.append(np.max(np.abs(back - f.values)[1:-1]))
    assert errs[1] < errs[0] / 3


@settings(max_examples=25, deadline=None)
@given(a=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
       b=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_linearity(a, b):
    g = build_stretched_grid(5.0, 40, 1.0)
    f, h = fn(g, np.sin), fn(g, lambda y: np.exp(-y))
    combo = f * a + h * b
    for op in (lambda u: derivative(u, 1), lambda u: derivative(u, 3), cumulative_integral):
        lhs = op(combo).values
        rhs = a * op(f).values + b * op(h).values
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-11)


# --- norms ----------------------------------------------------------------------

def test_weighted_norm_examples():
    g = build_stretched_grid(20.0, 400, 1.0)
    n = weighted_sup_norm(fn(g, lambda y: np.exp(-2 * y)), WeightSpec(1.0, 0))
    assert abs(float(n) - 1.0) < 1e-14 and not n.tail_warning
    assert float(weighted_sup_norm(fn(g, lambda y: 0 * y), WeightSpec(2.0, 2))) == 0.0
    n = weighted_sup_norm(fn(g, lambda y: y * np.exp(-y)), WeightSpec(1.0, 0))
    assert abs(n.value - 20.0) < 1e-9 and n.tail_warning


def test_weight_spec_validation():
    with pytest.raises(InvalidArgument):
        WeightSpec(-1.0, 0)
    with pytest.raises(InvalidArgument):
        WeightSpec(1.0, 3)


@settings(max_examples=25, deadline=None)
@given(c=st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False),
       alpha=st.floats(0, 2), s=st.integers(0, 2))
def test_norm_homogeneous_and_monotone(c, alpha, s):
    g = build_stretched_grid(10.0, 120, 1.5)
    f = fn(g, lambda y: y * np.exp(-1.5 * y) * (1 + 1j * np.sin(y)))
    w = WeightSpec(alpha, s)
    assert np.isclose(weighted_sup_norm(f * c, w).value, abs(c) * weighted_sup_norm(f, w).value,
                      rtol=1e-12, atol=1e-300)
    assert weighted_sup_norm(f, WeightSpec(alpha, 0)).value <= weighted_sup_norm(f, w).value


# --- banded solves --------------------------------------------------------------

def test_identity_and_diagonal_solves():
    I = BandedMatrix.from_dense(np.eye(5), 1, 1)
    r = np.arange(5) + 1j
    assert np.allclose(solve_banded(I, r), r)
    D = BandedMatrix.from_dense(np.diag([2.0, 4j]), 0, 0)
    assert np.allclose(solve_banded(D, np.array([2.0, 4j])), [1, 1])


def test_random_tridiagonal_round_trip():
    rng = np.random.default_rng(7)
    n = 200
    A = (np.diag(4 + rng.random(n) + 1j * rng.random(n)) + np.diag(rng.random(n - 1), 1)
         + np.diag(rng.random(n - 1) * 1j, -1))
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    M = BandedMatrix.from_dense(A, 1, 1)
    assert np.allclose(M.matvec(x), A @ x)
    sol = solve_banded(M, A @ x)
    assert np.linalg.norm(A @ sol - A @ x) / np.linalg.norm(A @ x) < 1e-12
    assert np.linalg.norm(sol - x) / np.linalg.norm(x) < 1e-12


def test_singular_system_reports_condition():
    A = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(NumericFailure) as err:
        solve_banded(BandedMatrix.from_dense(A, 1, 1), np.array([1.0, 2.0]))
    assert err.value.condition is not None


def test_gridfn_rhs_returns_gridfn():
    g = YGrid(np.linspace(0, 1, 3))
    out = solve_banded(BandedMatrix.from_dense(2 * np.eye(3), 0, 0), GridFn(g, np.ones(3)))
    assert isinstance(out, GridFn) and np.allclose(out.values, 0.5)


# --- Newton and fitting ---------------------------------------------------------

def test_newton_affine_one_step():
    calls = []

    def r(t):
        calls.append(t)
        return t - (1 - 2j)
    root = complex_newton(r, 0.0)
    assert abs(root - (1 - 2j)) <= 1e-10
    assert len(calls) == 4  # seed, two difference probes, one update


def test_newton_quadratic_picks_nearest_root():
    root = complex_newton(lambda t: t * t + 1, 0.1 - 0.9j, tol=1e-13)
    assert abs(root - (-1j)) < 1e-12


def test_newton_breaks_down_at_stationary_point():
    with pytest.raises(NoConvergence) as err:
        complex_newton(lambda t: t * t + 1, 0.0)
    assert err.value.best is not None


def test_fit_exponent_examples():
    xs = np.linspace(0, 1, 11)
    f = fit_exponent(xs, 2 * xs + 1)
    assert np.allclose([f.rate, f.intercept, f.r_squared], [2, 1, 1])
    assert abs(fit_exponent(xs, 0 * xs + 4).rate) < 1e-12
    rng = np.random.default_rng(3)
    xs = np.linspace(0, 5, 200)
    f = fit_exponent(xs, 3 * xs + rng.normal(0, 1e-3, xs.size))
    assert abs(f.rate - 3) < 1e-2 and 0 <= f.r_squared <= 1
    with pytest.raises(InvalidArgument):
        fit_exponent([0, 1], [0, 1])
