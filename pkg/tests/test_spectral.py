import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from prandtl_lab.core import GridFn, ZGrid, derivative_values
from prandtl_lab.errors import InvalidArgument
from prandtl_lab.spectral import (ShearProfile, auxiliary_eigenproblem, build_V, find_tau,
                                  load_solution, refine_check, residual_scale, save_solution,
                                  solve_cached, solve_w_collocation, tau_seeds_from_auxiliary,
                                  verify_gaussian_decay, w_residual)

from conftest import exact_W, exact_tau

GRID = ZGrid.uniform(8.0, 801)


def test_residual_annihilates_constants():
    g = ZGrid.uniform(8.0, 101)
    for c in (0.0, 1.0):
        r = w_residual(GridFn(g, np.full(101, c)), -1 - 1j, 1.0)
        assert np.max(np.abs(r.values)) < 1e-9


def test_residual_needs_64_nodes():
    with pytest.raises(InvalidArgument):
        w_residual(GridFn(ZGrid.uniform(8.0, 33), np.zeros(33)), -1j, 1.0)


@pytest.mark.parametrize("tau", [-0.5 - 0.3j, 1.2 - 2.0j, -3 - 0.1j])
def test_imposed_boundary_conditions_hold_exactly(tau):
    W, _ = solve_w_collocation(tau, 1.0, GRID)
    h = GRID.nodes[1] - GRID.nodes[0]
    v = W.values
    assert abs(v[0]) < 1e-13 and abs(v[-1] - 1) < 1e-13
    assert abs(-3 * v[0] + 4 * v[1] - v[2]) / (2 * h) < 1e-10
    assert abs(v[-3] - 4 * v[-2] + 3 * v[-1]) / (2 * h) < 1e-10


def test_collocation_rejects_upper_half_plane_and_bad_grid():
    with pytest.raises(InvalidArgument):
        solve_w_collocation(0.3 + 0.1j, 1.0, GRID)
    with pytest.raises(InvalidArgument):
        solve_w_collocation(-1j, 1.0, ZGrid(np.array([-2.0, -1.5, 0.0, 2.0])))


def test_mismatch_large_off_eigenvalue_and_refinement_stable(sol_c1):
    off = solve_w_collocation(0.8 - 1.7j, 1.0, GRID)[1]
    assert abs(off) > 1e-2 and abs(off) > 1e6 * abs(sol_c1.mismatch)
    for tau in (0.8 - 1.7j, -0.5 - 0.3j):
        coarse = solve_w_collocation(tau, 1.0, GRID)[1]
        fine = solve_w_collocation(tau, 1.0, ZGrid.uniform(8.0, 1601))[1]
        assert abs(fine - coarse) < 0.1 * abs(fine)


def test_find_tau_matches_closed_form(sol_c1):
    s = sol_c1
    assert s.tau.imag < 0 and abs(s.mismatch) <= 1e-8
    assert abs(s.tau - exact_tau(1.0)) < 1e-4
    assert abs(s.W.values[0]) <= 1e-10 and abs(s.W.values[-1] - 1) <= 1e-10
    z = s.zgrid.nodes
    assert np.max(np.abs(s.W.values - exact_W(z, 1.0))) < 1e-4
    assert s.ode_residual <= 1e-6


def test_tau_error_converges_at_second_order():
    errs = [abs(find_tau(1.0, seeds=[-0.7 - 0.7j], zgrid=ZGrid.uniform(8.0, n)).tau
                - exact_tau(1.0)) for n in (401, 801)]
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_verification_on_finer_grid(sol_c1):
    res, scale = refine_check(sol_c1)
    assert res <= 1e-6 * scale


def test_seeds_in_upper_half_plane_rejected():
    with pytest.raises(InvalidArgument):
        find_tau(1.0, seeds=[0.5 + 0.5j])
    with pytest.raises(InvalidArgument):
        find_tau(-1.0)


def test_scaling_between_C_values(sol_c1):
    s2 = find_tau(2.0, seeds=[-1 - 1j], zgrid=ZGrid.uniform(8.0, 1601))
    assert abs(s2.tau - np.sqrt(2) * sol_c1.tau) < 1e-4
    # W_2(z) = W_1(z / 2^(1/4)): substitute the rescaled profile into the C = 2 equation
    z = s2.zgrid.nodes
    W1 = CubicSpline(sol_c1.zgrid.nodes, sol_c1.W.values)(z / 2 ** 0.25)
    Wr = GridFn(s2.zgrid, W1)
    r = w_residual(Wr, np.sqrt(2) * sol_c1.tau, 2.0)
    assert np.max(np.abs(r.values)) <= 1e-4 * residual_scale(s2.tau, 8.0, Wr)


def test_z_max_independence(sol_c1):
    h = sol_c1.zgrid.nodes[1] - sol_c1.zgrid.nodes[0]
    wide = ZGrid.uniform(12.0, int(round(24.0 / h)) + 1)
    s = find_tau(1.0, seeds=[sol_c1.tau], zgrid=wide)
    assert abs(s.tau - sol_c1.tau) <= 1e-6


def test_conjugate_problem_has_conjugate_root(sol_c1):
    # i -> -i is the same as C -> -C in the residual; conj(W) must solve it at conj(tau)
    Wc = GridFn(sol_c1.zgrid, np.conj(sol_c1.W.values))
    r = w_residual(Wc, np.conj(sol_c1.tau), -1.0)
    direct = w_residual(sol_c1.W, sol_c1.tau, 1.0)
    assert np.allclose(r.values, np.conj(direct.values), atol=1e-12)


# --- auxiliary problem ----------------------------------------------------------

def test_auxiliary_scaling_and_residuals():
    a1 = auxiliary_eigenproblem(1.0, count=2000)
    a2 = auxiliary_eigenproblem(2.0, count=2000)
    assert a1.alphas.size == a2.alphas.size >= 1
    assert np.all(np.abs(a2.alphas - 2 * a1.alphas) <= 1e-8 * np.abs(a2.alphas))
    assert np.all(a1.residuals <= 1e-8)  # eigenvectors are normalised to unit sup


def test_auxiliary_refinement_and_closed_form():
    coarse = auxiliary_eigenproblem(1.0, count=2000).alphas[0]
    fine = auxiliary_eigenproblem(1.0, count=4000).alphas[0]
    assert abs(coarse - fine) < 1e-4 * fine
    # exp(-z^2/2)/(1+z^2)^2 is an exact eigenfunction with alpha = C
    assert abs(fine - 1.0) < 1e-4


def test_seed_map_lands_near_root():
    seed = tau_seeds_from_auxiliary([1.0])[0]
    assert seed.imag < 0 and abs(seed - exact_tau(1.0)) < 1e-12


# --- decay fits and V -----------------------------------------------------------

def test_gaussian_decay_synthetic():
    g = ZGrid.uniform(8.0, 1601)
    z = g.nodes
    W = np.where(z < 0, 0.5 * np.exp(-z * z), 1 - 0.5 * np.exp(-z * z))
    fit = verify_gaussian_decay(GridFn(g, W))
    assert abs(fit.c - 1.0) <= 0.02


def test_algebraic_tail_is_flagged():
    g = ZGrid.uniform(8.0, 1601)
    z = g.nodes
    W = np.where(z < 0, 1 / (1 + z * z), 1 - 1 / (1 + z * z))
    fit = verify_gaussian_decay(GridFn(g, W))
    assert fit.r_squared < 0.99 and fit.c < 0.1


def test_converged_decay(sol_c1):
    fit = sol_c1.decay_fit
    assert fit.c > 0 and fit.r_squared >= 0.99


def test_build_V_jump_and_tails(sol_c1):
    V = build_V(sol_c1)
    z = sol_c1.zgrid.nodes
    c = sol_c1.zgrid.center
    # H(0) = 1 makes the node itself the right limit; extrapolate the left one
    right = V.values[c]
    left = 3 * V.values[c - 1] - 3 * V.values[c - 2] + V.values[c - 3]
    assert abs((right - left) + sol_c1.tau) < 1e-4
    tail = np.abs(V.values[[0, -1]])
    assert np.all(tail <= np.abs(sol_c1.tau - z[[0, -1]] ** 2) * 1e-10)
    assert np.max(np.abs(V.values[np.abs(z) > 6])) < 1e-5 * np.max(np.abs(V.values))


def test_shear_profile_satisfies_v_equation(sol_c1):
    prof = ShearProfile.from_solution(sol_c1)
    z = np.linspace(-6, 6, 1201)
    z = z[np.abs(z) > 0.05]
    t, C = sol_c1.tau, sol_c1.C
    res = (z * z - t) * prof.V(z, 1) - 2 * z * prof.V(z) - 1j * C * prof.V(z, 3)
    scale = max(abs(t), 36.0) ** 2 * np.max(np.abs(derivative_values(
        sol_c1.W.values, sol_c1.zgrid.nodes, 1)))
    assert np.max(np.abs(res)) < 1e-6 * scale
    assert np.allclose(prof.V(np.array([0.0])), build_V(sol_c1).values[sol_c1.zgrid.center])


def test_cache_round_trip(tmp_path, sol_c1):
    p = tmp_path / "s.json"
    save_solution(sol_c1, p, 1e-10)
    back = load_solution(p)
    assert back.tau == sol_c1.tau and np.array_equal(back.W.values, sol_c1.W.values)
    first = p.read_bytes()
    save_solution(back, p, 1e-10)
    assert p.read_bytes() == first


def test_solve_cached_hits(tmp_path):
    g = dict(z_max=8.0, n=401)
    a = solve_cached(0.5, tmp_path, **g)
    files = list(tmp_path.iterdir())
    b = solve_cached(0.5, tmp_path, **g)
    assert len(files) == 1 and a.tau == b.tau
