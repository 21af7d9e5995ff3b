import json

import numpy as np
import pytest

from prandtl_lab.baseflow import analytic_profile
from prandtl_lab.errors import InvalidArgument, SingularConfiguration
from prandtl_lab.quasimode import (QuasimodeConfig, assemble, cutoff, export_reports,
                                   incompressibility_defect, omega_value, phase_omega,
                                   predicted_amp, prepare, quasimode_slice, residual_bound_check,
                                   residual_field, substitution_residual, total_velocity, v_reg,
                                   v_sl)


def resolved(eps, ing, **kw):
    return QuasimodeConfig(eps, **kw).resolved(ing.flow, ing.curve)


# --- omega ------------------------------------------------------------------------

def test_omega_limit_and_growth_sign(shear_ing):
    a, mu, ua = shear_ing.curve.locate(0.0)
    tau = shear_ing.tau
    assert omega_value(ua, mu, 1e-12, tau) == pytest.approx(-1 / ua, rel=1e-5)
    for eps in (1e-2, 1e-3, 1e-4):
        assert omega_value(ua, mu, eps, tau).imag > 0


def test_omega_first_order_expansion(shear_ing):
    a, mu, ua = shear_ing.curve.locate(0.0)
    tau = shear_ing.tau

    def rel_err(eps):
        approx = -np.sqrt(eps / 2) * mu * tau.imag / ua ** 2
        return abs(omega_value(ua, mu, eps, tau).imag / approx - 1)

    # leading term correct, correction of relative size sqrt(eps)
    assert rel_err(1e-6) < 3e-3
    assert rel_err(1e-4) / rel_err(1e-6) == pytest.approx(10.0, rel=0.05)


def test_omega_singular_configuration():
    eps, mu, tau = 1e-2, 1.0, 2.0 + 0j
    ua = np.sqrt(eps / 2) * mu * tau.real
    with pytest.raises(SingularConfiguration):
        omega_value(ua, mu, eps, tau)


# --- cutoff and the two velocity pieces -------------------------------------------------

def test_cutoff_shape():
    r = np.linspace(-1, 1, 2001)
    phi = cutoff(r, 0.2, 0.6)
    assert np.all(phi[np.abs(r) <= 0.2] == 1) and np.all(phi[np.abs(r) >= 0.6] == 0)
    assert np.allclose(phi, phi[::-1])
    for k in range(1, 4):
        d = cutoff(r, 0.2, 0.6, k)
        assert np.all(d[np.abs(r) <= 0.2] == 0)
        num = np.gradient(cutoff(r, 0.2, 0.6, k - 1), r)
        assert np.max(np.abs(d - num)[5:-5]) <= 0.02 * np.max(np.abs(d)) + 1e-9


def test_v_reg_pieces(shear_ing):
    cfg = resolved(1e-2, shear_ing)
    a, mu, ua = shear_ing.curve.locate(0.0)
    s = np.sqrt(cfg.eps / 2) * mu
    y = np.array([0.1, a - 1e-9, a, 40.0])
    vals = v_reg(0.0, cfg, shear_ing, y)
    assert vals[0] == 0 and vals[1] == 0
    assert vals[2] == pytest.approx(s * shear_ing.tau, abs=1e-12)
    assert vals[3] == pytest.approx(1 - ua + s * shear_ing.tau, abs=1e-12)
    assert abs(v_reg(0.0, cfg, shear_ing, np.array([40.0]), k=1)[0]) <= 1e-12


def test_v_sl_support_and_sqrt_eps_scaling(shear_ing):
    a = shear_ing.curve.a[0]
    cfg1 = resolved(1e-4, shear_ing)
    cfg2 = resolved(1e-4 / 4, shear_ing, cutoff_inner=cfg1.cutoff_inner,
                    cutoff_outer=cfg1.cutoff_outer)
    y = np.linspace(0, 3 * a, 60001)
    v1 = v_sl(0.0, cfg1, shear_ing, y)
    v2 = v_sl(0.0, cfg2, shear_ing, y)
    assert np.all(v1[np.abs(y - a) > cfg1.cutoff_outer * (1 + 1e-12)] == 0)
    assert np.max(np.abs(v1)) / np.max(np.abs(v2)) == pytest.approx(2.0, rel=1e-3)


def test_jumps_cancel_at_critical_point(shear_ing):
    cfg = resolved(1e-3, shear_ing)
    a = shear_ing.curve.a[0]
    d = 1e-7
    left = total_velocity(0.0, np.array([a - d]), cfg, shear_ing, 3)
    right = total_velocity(0.0, np.array([a + d]), cfg, shear_ing, 3)
    scale = [np.max(np.abs(total_velocity(0.0, np.linspace(0, 3, 3001), cfg, shear_ing, 3)[k]))
             for k in range(4)]
    for k in range(3):
        assert abs(left[k][0] - right[k][0]) <= 1e-5 * scale[k]
    # each piece alone jumps by s tau at the critical point
    s = np.sqrt(cfg.eps / 2) * shear_ing.curve.mu[0]
    jump = v_sl(0.0, cfg, shear_ing, np.array([a + d]))[0] - v_sl(0.0, cfg, shear_ing,
                                                                  np.array([a - d]))[0]
    assert jump == pytest.approx(-s * shear_ing.tau, rel=1e-4)


# --- the assembled field ------------------------------------------------------------------

def test_wall_and_tail(shear_ing):
    cfg = resolved(1e-3, shear_ing)
    sl = quasimode_slice(0.1, cfg, shear_ing)
    y = sl.grid.nodes
    assert sl.u_hat[0] == 0 and sl.v_hat[0] == 0
    weighted = np.abs(np.exp(cfg.beta * y) * sl.u_hat)
    assert weighted[-1] <= 1e-7 * weighted.max()
    # beyond the layer only the regular piece survives: u_hat = -i E u0_y / omega
    far = y > sl.a + cfg.cutoff_outer + 1e-9
    expect = -1j * sl.phase * shear_ing.flow.profile.u(0.1, y[far], 1) / sl.omega
    assert np.allclose(sl.u_hat[far], expect, rtol=1e-10, atol=0)


def test_amplitude_factorization(shear_ing):
    field = assemble(QuasimodeConfig(1e-3, nx=5), shear_ing)
    u0 = field.slices[0].u_hat
    for sl in field.slices[1:]:
        assert np.allclose(sl.u_hat, sl.phase * u0, rtol=0, atol=1e-12 * abs(sl.phase))
    ratios = [np.max(np.abs(s.u_hat)) / a for s, a in zip(field.slices, field.predicted_amp)]
    assert np.ptp(ratios) <= 1e-10 * max(ratios)


def test_incompressibility_second_order(shear_ing):
    eps = 2.5e-3
    cfg = QuasimodeConfig(eps)
    d1 = incompressibility_defect(0.05, cfg, shear_ing, 0.1 * eps)
    d2 = incompressibility_defect(0.05, cfg, shear_ing, 0.05 * eps)
    assert d2 < d1
    assert d1 / d2 == pytest.approx(4.0, rel=0.1)


def test_incompressibility_on_x_dependent_flow():
    flow = analytic_profile("critical_xdep")
    from prandtl_lab.evolution import spectral_for_flow
    ing = prepare(flow, spectral_for_flow(flow))
    cfg = QuasimodeConfig(1e-2)
    d1 = incompressibility_defect(0.1, cfg, ing, 1e-3)
    d2 = incompressibility_defect(0.1, cfg, ing, 5e-4)
    assert d1 / d2 == pytest.approx(4.0, rel=0.15)


# --- residual ------------------------------------------------------------------------------

def test_split_matches_direct(shear_ing):
    cfg = resolved(1e-2, shear_ing)
    parts = residual_field(cfg, shear_ing, 0.0)
    assert np.max(np.abs(parts.total - parts.direct)) <= 1e-8 * np.max(np.abs(parts.direct))
    assert np.all(parts.I1 == 0)  # x-independent flow


def test_cancellation_identity(shear_ing):
    cfg = resolved(1e-3, shear_ing)
    parts = residual_field(cfg, shear_ing, 0.0)
    shear = shear_ing.shear
    scale = np.max(np.abs(shear.V(np.linspace(-6, 6, 1001), 0)))
    assert np.max(np.abs(parts.cancellation)) <= 1e-6 * scale


def test_regular_residual_support_and_bound(shear_ing):
    cfg = resolved(1e-3, shear_ing)
    parts = residual_field(cfg, shear_ing, 0.0)
    y = parts.grid.nodes
    below = y < parts.a
    assert np.all(parts.I2[below] == 0)
    a, mu, ua = shear_ing.curve.locate(0.0)
    om = omega_value(ua, mu, cfg.eps, shear_ing.tau)
    d3 = np.abs(shear_ing.flow.profile.u(0.0, y, 3))
    # I2 = (terms vanishing by the shear identity) + i d3 v_reg / omega
    assert np.max(np.abs(parts.I2)) <= np.max(d3 / abs(om)) * 1.5 + 1e-12


def test_I34_at_origin_is_sqrt_eps_piece(shear_ing):
    cfg = resolved(1e-3, shear_ing)
    parts = residual_field(cfg, shear_ing, 0.0)
    s = np.sqrt(cfg.eps / 2) * shear_ing.curve.mu[0]
    d3 = v_sl(0.0, cfg, shear_ing, parts.grid.nodes, k=3)
    assert np.allclose(parts.I34, 1j * s * shear_ing.tau * d3, rtol=1e-10, atol=1e-14)


def test_substitution_agrees_with_analytic_residual(shear_ing):
    cfg = resolved(1e-2, shear_ing)
    x = 0.05
    direct = substitution_residual(cfg, shear_ing, x, 1e-3 * cfg.eps)
    parts = residual_field(cfg, shear_ing, x)
    away = np.abs(parts.grid.nodes - parts.a) > 0.02
    err = np.max(np.abs(direct - parts.total)[away])
    assert err <= 0.02 * np.max(np.abs(parts.total[away]))


def test_x_dependent_residual_split(shear_ing):
    flow = analytic_profile("critical_xdep")
    from prandtl_lab.evolution import spectral_for_flow
    ing = prepare(flow, spectral_for_flow(flow))
    cfg = resolved(1e-2, ing)
    parts = residual_field(cfg, ing, 0.1)
    assert np.max(np.abs(parts.I1)) > 0
    assert np.max(np.abs(parts.total - parts.direct)) <= 1e-8 * np.max(np.abs(parts.direct))


# --- bounds and sandwich ------------------------------------------------------------------

@pytest.fixture(scope="module")
def ladder(shear_ing):
    return {eps: residual_bound_check(QuasimodeConfig(eps), shear_ing)
            for eps in (1e-2, 2.5e-3, 1e-3, 1e-4, 1e-4 / 16)}


def test_bound_constant_finite_and_growth_positive(ladder):
    for rep in ladder.values():
        assert np.isfinite(rep.bound_constant)
        assert rep.delta0_effective > 0
        assert rep.sandwich[0] > 0


def test_delta0_matches_first_order_prediction(ladder):
    for eps in (1e-3, 1e-4):
        rep = ladder[eps]
        assert rep.delta0_effective == pytest.approx(rep.delta0_predicted, rel=0.1)


def test_s0_ratio_uniform(ladder):
    lo = min(r.ratio_s0.min() for r in ladder.values())
    hi = max(r.ratio_s0.max() for r in ladder.values())
    assert lo > 0 and hi / lo <= 1.2


def test_s2_ratio_gains_quarter_power(ladder):
    r1 = ladder[1e-4].ratio_s2.max()
    r2 = ladder[1e-4 / 16].ratio_s2.max()
    assert r2 / r1 == pytest.approx(2.0, rel=0.15)


def test_growth_prediction_is_phase_modulus(shear_ing):
    cfg = resolved(1e-3, shear_ing)
    om = phase_omega(0.0, cfg, shear_ing)
    assert predicted_amp(0.2, cfg, shear_ing) == pytest.approx(np.exp(0.2 * om.imag / cfg.eps))


def test_export(tmp_path, ladder):
    paths = export_reports([ladder[1e-2], ladder[1e-3]], tmp_path)
    summary = json.loads(paths[2].read_text())
    assert [row["eps"] for row in summary["per_eps"]] == [1e-2, 1e-3]
    assert len(paths[0].read_text().splitlines()) == 1 + 2 * 9


# --- configuration -----------------------------------------------------------------------

def test_config_invariants(shear_ing):
    a = shear_ing.curve.a[0]
    with pytest.raises(InvalidArgument, match="wall"):
        resolved(1e-2, shear_ing, cutoff_inner=0.1, cutoff_outer=1.01 * a)
    with pytest.raises(InvalidArgument):
        resolved(1e-2, shear_ing, cutoff_inner=0.3, cutoff_outer=0.2)
    with pytest.raises(InvalidArgument):
        resolved(1e-2, shear_ing, x_span=0.5)
    with pytest.raises(InvalidArgument):
        resolved(1.5, shear_ing)
    with pytest.raises(InvalidArgument):
        resolved(1e-2, shear_ing, beta=1.5)
    # constant far field: beta equal to the decay rate is allowed
    assert resolved(1e-2, shear_ing, beta=1.0).beta == 1.0
    cfg = resolved(1e-2, shear_ing)
    assert 0 < cfg.cutoff_inner < cfg.cutoff_outer < a
    assert cfg.x_span == pytest.approx(1e-2 ** 0.25)
