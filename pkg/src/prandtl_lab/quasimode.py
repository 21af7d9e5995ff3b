"""The growing quasimode around a flow with a non-degenerate maximum of u0.

With s = sqrt(eps/2) mu, kappa = (mu^2/(2 eps))^(1/4) and z = kappa (y - a):

    v_reg = H(y - a) [u0 - u0(a) + s tau]
    v_sl  = phi(y - a) s V(z),          V = (tau - z^2)(W - H)
    u_hat = -i E d_y(v_reg + v_sl) / omega
    v_hat =  E [(v_reg + v_sl)/eps + i ((v_reg + v_sl)/omega)_x]

with omega = 1/(-u0(a) + s tau) and E = exp(-(i/eps) int_0^x omega).
The sum v_reg + v_sl equals H G_reg + G_sm with

    G_reg = u0 - u0(a) + s tau - phi (s tau - mu^2 (y - a)^2 / 2),
    G_sm  = phi s (tau - z^2) W(z),

both smooth; H G_reg is C^2 because G_reg and its first two derivatives
vanish at y = a.  All y-derivatives below are analytic (splines of the
spectral profile), x-derivatives are centred differences of the smooth
pieces with H held at the slice.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from math import comb
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import quad

from .baseflow import BaseFlow, CriticalCurve, critical_point_curve, find_critical_point
from .core import GridFn, WeightSpec, YGrid, fit_exponent, weighted_sup_norm
from .errors import InvalidArgument, SingularConfiguration
from .spectral import ShearProfile, SpectralSolution

# C^4 smoothstep 126t^5 - 420t^6 + 540t^7 - 315t^8 + 70t^9
_STEP = Polynomial([0, 0, 0, 0, 0, 126, -420, 540, -315, 70])
_STEP_D = [_STEP.deriv(k) for k in range(4)]


# --- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class QuasimodeConfig:
    eps: float
    beta: float = 0.5
    cutoff_inner: float | None = None
    cutoff_outer: float | None = None
    x_span: float | None = None
    nx: int = 9
    fd_step: float = 1e-4

    def resolved(self, flow: BaseFlow, curve: CriticalCurve) -> "QuasimodeConfig":
        """Fill defaults and check every invariant.

        Default cutoff: 1 on |y - a| <= a_min/20, 0 beyond 0.9 a_min, where a_min
        is the smallest critical height on the x-window.  A wide join keeps the
        cutoff derivatives out of the residual at moderate eps.
        """
        if not 0 < self.eps < 1:
            raise InvalidArgument("eps must lie in (0, 1)")
        a0 = float(curve.a[0])
        span = self.eps ** 0.25 if self.x_span is None else self.x_span
        if not 0 < span <= self.eps ** 0.25 * (1 + 1e-12):
            raise InvalidArgument("x_span must lie in (0, eps^(1/4)]")
        if span > curve.xs[-1] * (1 + 1e-12):
            raise InvalidArgument("x_span exceeds the tracked critical curve")
        a_min = float(np.min(curve.a[curve.xs <= span + 1e-12]))
        inner = 0.05 * a_min if self.cutoff_inner is None else self.cutoff_inner
        outer = 0.9 * a_min if self.cutoff_outer is None else self.cutoff_outer
        if not 0 < inner < outer:
            raise InvalidArgument("cutoff_inner must satisfy 0 < cutoff_inner < cutoff_outer")
        if not outer < min(a0, a_min):
            raise InvalidArgument("cutoff_outer reaches the wall: need cutoff_outer < a(x)")
        if self.beta < 0:
            raise InvalidArgument("beta must be non-negative")
        far_const = float(np.ptp(flow.U_far)) == 0.0
        if not (self.beta < flow.alpha_decay or (far_const and self.beta == flow.alpha_decay)):
            raise InvalidArgument("beta must be below the flow's decay rate "
                                  "(or equal to it when U_far is constant)")
        if self.nx < 2:
            raise InvalidArgument("nx must be at least 2")
        return replace(self, cutoff_inner=inner, cutoff_outer=outer, x_span=span)


def cutoff(r, inner: float, outer: float, k: int = 0):
    """Even C^4 cutoff: 1 on |r| <= inner, 0 on |r| >= outer; k-th derivative."""
    r = np.asarray(r, dtype=float)
    w = outer - inner
    t = np.clip((np.abs(r) - inner) / w, 0.0, 1.0)
    val = _STEP_D[k](t) / w ** k
    val = (1.0 - val) if k == 0 else -val * np.sign(r) ** k
    return val


# --- ingredients ------------------------------------------------------------------

@dataclass(frozen=True)
class Ingredients:
    flow: BaseFlow
    curve: CriticalCurve
    spec: SpectralSolution
    shear: ShearProfile

    @property
    def C(self) -> float:
        return self.curve.C_critical

    @property
    def tau(self) -> complex:
        return self.spec.tau


def prepare(flow: BaseFlow, spec: SpectralSolution, a0: float | None = None) -> Ingredients:
    """Track the critical curve and pair it with a spectral solution for C = u0(0, a)."""
    a0 = find_critical_point(flow, float(flow.xgrid.nodes[0])) if a0 is None else a0
    curve = critical_point_curve(flow, a0)
    if abs(spec.C - curve.C_critical) > 1e-8 * curve.C_critical:
        raise InvalidArgument(f"spectral solution has C = {spec.C}, flow needs {curve.C_critical}")
    return Ingredients(flow, curve, spec, ShearProfile.from_solution(spec))


def omega_value(ua: float, mu: float, eps: float, tau: complex) -> complex:
    den = -ua + np.sqrt(eps / 2) * mu * tau
    if abs(den) <= 1e-14 * max(1.0, abs(ua)):
        raise SingularConfiguration("phase denominator -u0(a) + sqrt(eps/2) mu tau vanishes")
    return 1.0 / den


def phase_omega(x: float, cfg: QuasimodeConfig, ing: Ingredients) -> complex:
    _, mu, ua = ing.curve.locate(x)
    return omega_value(ua, mu, cfg.eps, ing.tau)


def phase_integral(x: float, cfg: QuasimodeConfig, ing: Ingredients) -> complex:
    """int_0^x omega(eps, xi) d xi (adaptive quadrature; exact for x-independent flows)."""
    if x == 0:
        return 0j
    if ing.flow.x_independent:
        return phase_omega(0.0, cfg, ing) * x
    re = quad(lambda t: phase_omega(t, cfg, ing).real, 0.0, x, epsabs=1e-13, epsrel=1e-12)[0]
    im = quad(lambda t: phase_omega(t, cfg, ing).imag, 0.0, x, epsabs=1e-13, epsrel=1e-12)[0]
    return complex(re, im)


def predicted_amp(x: float, cfg: QuasimodeConfig, ing: Ingredients) -> float:
    return float(np.exp(phase_integral(x, cfg, ing).imag / cfg.eps))


# --- slice grids and the pieces of v_reg + v_sl -------------------------------

def slice_grid(a: float, outer: float, kappa: float, y_max: float, h_layer: float | None = None,
               h_wall: float = 0.01, h_far: float = 0.25, growth: float = 1.04) -> YGrid:
    """Nodes on [0, y_max] with one node exactly at a and a fine band |y - a| <= outer."""
    h_layer = h_layer or min(0.002, 0.05 / kappa)
    lo, hi = a - outer, a + outer
    wall = np.linspace(0.0, lo, max(int(np.ceil(lo / h_wall)), 2) + 1)
    n_half = max(int(np.ceil(outer / h_layer)), 8)
    band = np.concatenate([np.linspace(lo, a, n_half + 1)[1:],
                           np.linspace(a, hi, n_half + 1)[1:]])
    far = [hi]
    h = h_layer
    while far[-1] < y_max:
        h = min(h * growth, h_far)
        far.append(far[-1] + h)
    far = np.array(far[1:])
    far = far[far < y_max - 0.5 * h]
    nodes = np.concatenate([wall, band, far, [y_max]])
    return YGrid(nodes)


class Local(NamedTuple):
    a: float
    mu: float
    ua: float
    s: float
    kappa: float


def _local(x, cfg, ing) -> Local:
    a, mu, ua = ing.curve.locate(x)
    s = np.sqrt(cfg.eps / 2) * mu
    kappa = (mu * mu / (2 * cfg.eps)) ** 0.25
    return Local(a, mu, ua, s, kappa)


def _smooth_parts(x, y, cfg, ing, kmax=3):
    """Derivatives 0..kmax in y of G_reg and G_sm at (x, y) (complex arrays)."""
    loc = _local(x, cfg, ing)
    tau, prof = ing.tau, ing.flow.profile
    r = y - loc.a
    z = loc.kappa * r
    phis = [cutoff(r, cfg.cutoff_inner, cfg.cutoff_outer, k) for k in range(kmax + 1)]
    P = [loc.s * tau - 0.5 * loc.mu ** 2 * r * r, -loc.mu ** 2 * r,
         -loc.mu ** 2 + 0 * r, 0 * r]
    Phi = [ing.shear.phi(z, i) * loc.kappa ** i for i in range(kmax + 1)]
    G_reg, G_sm = [], []
    for k in range(kmax + 1):
        uk = np.asarray(prof.u(x, y, k), dtype=float)
        base = uk - (loc.ua - loc.s * tau) if k == 0 else uk + 0j
        base = base - sum(comb(k, i) * phis[k - i] * P[i] for i in range(k + 1))
        G_reg.append(base)
        G_sm.append(loc.s * sum(comb(k, i) * phis[k - i] * Phi[i] for i in range(k + 1)))
    return loc, G_reg, G_sm


def total_velocity(x, y, cfg, ing, kmax=3, H=None):
    """d^k/dy^k (v_reg + v_sl) for k = 0..kmax; H may be frozen from another slice."""
    loc, G_reg, G_sm = _smooth_parts(x, y, cfg, ing, kmax)
    if H is None:
        H = (y >= loc.a).astype(float)
    return [H * g + s for g, s in zip(G_reg, G_sm)]


def v_reg(x: float, cfg: QuasimodeConfig, ing: Ingredients, y=None, k: int = 0):
    """k-th y-derivative of the regular velocity.

    Returns a GridFn on the slice grid, or a plain array when ``y`` is given.
    """
    loc = _local(x, cfg, ing)
    grid = _grid_for(loc, cfg, ing) if y is None else None
    yy = grid.nodes if grid is not None else np.asarray(y, dtype=float)
    H = (yy >= loc.a).astype(float)
    uk = np.asarray(ing.flow.profile.u(x, yy, k), dtype=float)
    val = H * (uk - (loc.ua - loc.s * ing.tau) if k == 0 else uk + 0j)
    return GridFn(grid, val) if grid is not None else val


def v_sl(x: float, cfg: QuasimodeConfig, ing: Ingredients, y=None, k: int = 0):
    """k-th y-derivative of the shear-layer velocity (GridFn or array as in v_reg)."""
    loc = _local(x, cfg, ing)
    if loc.a - cfg.cutoff_outer <= 0:
        raise InvalidArgument("cutoff support reaches the wall")
    grid = _grid_for(loc, cfg, ing) if y is None else None
    yy = grid.nodes if grid is not None else np.asarray(y, dtype=float)
    r = yy - loc.a
    z = loc.kappa * r
    val = loc.s * sum(comb(k, i) * cutoff(r, cfg.cutoff_inner, cfg.cutoff_outer, k - i)
                      * loc.kappa ** i * ing.shear.V(z, i) for i in range(k + 1))
    val = np.asarray(val, dtype=complex)
    return GridFn(grid, val) if grid is not None else val


def _grid_for(loc: Local, cfg, ing) -> YGrid:
    return slice_grid(loc.a, cfg.cutoff_outer, loc.kappa, float(ing.flow.ygrid.y_max))


# --- slices -------------------------------------------------------------------------

@dataclass(frozen=True)
class Slice:
    x: float
    grid: YGrid
    a: float
    phase: complex          # E = exp(-(i/eps) int_0^x omega)
    omega: complex
    u_hat: np.ndarray       # with E included
    u_hat_y: np.ndarray
    u_hat_yy: np.ndarray
    v_hat: np.ndarray


def _x_derivative(fn, x, h):
    return (fn(x + h) - fn(x - h)) / (2 * h)


def quasimode_slice(x: float, cfg: QuasimodeConfig, ing: Ingredients,
                    grid: YGrid | None = None) -> Slice:
    loc = _local(x, cfg, ing)
    grid = grid or _grid_for(loc, cfg, ing)
    y = grid.nodes
    H = (y >= loc.a).astype(float)
    om = omega_value(loc.ua, loc.mu, cfg.eps, ing.tau)
    E = np.exp(-1j * phase_integral(x, cfg, ing) / cfg.eps)
    V = total_velocity(x, y, cfg, ing, 3, H)
    h = cfg.fd_step

    def quotient(xx):
        l2 = _local(xx, cfg, ing)
        return total_velocity(xx, y, cfg, ing, 0, H)[0] / omega_value(l2.ua, l2.mu, cfg.eps, ing.tau)

    dq = _x_derivative(quotient, x, h)
    u = -1j * E * V[1] / om
    return Slice(x, grid, loc.a, E, om, u, -1j * E * V[2] / om, -1j * E * V[3] / om,
                 E * (V[0] / cfg.eps + 1j * dq))


# --- the assembled field -----------------------------------------------------------

@dataclass(frozen=True)
class QuasimodeField:
    config: QuasimodeConfig
    ingredients: Ingredients
    slices: tuple
    xs: np.ndarray
    phase_omega: np.ndarray
    predicted_amp: np.ndarray

    @property
    def u_hat(self) -> np.ndarray:
        return np.array([s.u_hat for s in self.slices])

    @property
    def v_hat(self) -> np.ndarray:
        return np.array([s.v_hat for s in self.slices])


def assemble(cfg: QuasimodeConfig, ing: Ingredients, workers: int = 1) -> QuasimodeField:
    cfg = cfg.resolved(ing.flow, ing.curve)
    xs = np.linspace(0.0, cfg.x_span, cfg.nx)
    run = lambda x: quasimode_slice(float(x), cfg, ing)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            slices = tuple(pool.map(run, xs))
    else:
        slices = tuple(run(x) for x in xs)
    om = np.array([s.omega for s in slices])
    amp = np.array([abs(s.phase) for s in slices])
    return QuasimodeField(cfg, ing, slices, xs, om, amp)


def incompressibility_defect(x: float, cfg: QuasimodeConfig, ing: Ingredients, dx: float,
                             y=None) -> float:
    """max |d_x u_hat + d_y v_hat| relative to max |d_y v_hat|, with the phase restored.

    d_x u_hat is a centred difference of step dx on fixed y-nodes; d_y v_hat is
    analytic.  The defect is O(dx^2).
    """
    cfg = cfg.resolved(ing.flow, ing.curve)
    loc = _local(x, cfg, ing)
    if y is None:
        y = _grid_for(loc, cfg, ing).nodes
    band = np.abs(y - loc.a) > 0  # keep every node; u_hat is C^1 across a

    def u_at(xx):
        l2 = _local(xx, cfg, ing)
        om = omega_value(l2.ua, l2.mu, cfg.eps, ing.tau)
        E = np.exp(-1j * phase_integral(xx, cfg, ing) / cfg.eps)
        return -1j * E * total_velocity(xx, y, cfg, ing, 1)[1] / om

    dux = _x_derivative(u_at, x, dx)
    H = (y >= loc.a).astype(float)
    om = omega_value(loc.ua, loc.mu, cfg.eps, ing.tau)
    E = np.exp(-1j * phase_integral(x, cfg, ing) / cfg.eps)
    V1 = total_velocity(x, y, cfg, ing, 1, H)[1]

    def dq(xx):
        l2 = _local(xx, cfg, ing)
        return total_velocity(xx, y, cfg, ing, 1, H)[1] / omega_value(l2.ua, l2.mu, cfg.eps, ing.tau)

    dvy = E * (V1 / cfg.eps + 1j * _x_derivative(dq, x, cfg.fd_step))
    return float(np.max(np.abs(dux + dvy)[band]) / np.max(np.abs(dvy)))


# --- residual -----------------------------------------------------------------------

class ResidualParts(NamedTuple):
    grid: YGrid
    a: float
    I1: np.ndarray
    I2: np.ndarray
    I31: np.ndarray
    I32: np.ndarray
    I33: np.ndarray
    I34: np.ndarray
    direct: np.ndarray          # I1 + I2 + I3 from the unsplit formula
    cancellation: np.ndarray    # (z^2 - tau) V' - 2 z V - i C V''' where phi == 1, z != 0

    @property
    def I3(self):
        return self.I31 + self.I32 + self.I33 + self.I34

    @property
    def total(self):
        return self.I1 + self.I2 + self.I3


def residual_field(cfg: QuasimodeConfig, ing: Ingredients, x: float,
                   grid: YGrid | None = None) -> ResidualParts:
    """Amplitude residual I1 + I2 + I3 of the linearised equations (phase removed)."""
    cfg = cfg.resolved(ing.flow, ing.curve)
    loc = _local(x, cfg, ing)
    grid = grid or _grid_for(loc, cfg, ing)
    y = grid.nodes
    prof = ing.flow.profile
    eps, tau, C = cfg.eps, ing.tau, ing.C
    H = (y >= loc.a).astype(float)
    om = omega_value(loc.ua, loc.mu, eps, tau)
    r = y - loc.a
    z = loc.kappa * r
    u = [np.asarray(prof.u(x, y, k), dtype=float) for k in range(4)]
    ux = np.asarray(prof.ux(x, y), dtype=float)
    v0 = np.asarray(prof.v(x, y), dtype=float)

    V = total_velocity(x, y, cfg, ing, 3, H)

    def quotient(k):
        def q(xx):
            l2 = _local(xx, cfg, ing)
            return (total_velocity(xx, y, cfg, ing, k, H)[k]
                    / omega_value(l2.ua, l2.mu, eps, tau))
        return _x_derivative(q, x, cfg.fd_step)

    I1 = (-1j * u[0] * quotient(1) - 1j * v0 * V[2] / om - 1j * ux * V[1] / om
          + 1j * u[1] * quotient(0))

    reg = [H * (u[0] - (loc.ua - loc.s * tau)), H * u[1] + 0j, H * u[2] + 0j, H * u[3] + 0j]
    I2 = -(1 / om + u[0]) * reg[1] / eps + u[1] * reg[0] / eps + 1j * reg[3] / om

    phis = [cutoff(r, cfg.cutoff_inner, cfg.cutoff_outer, k) for k in range(4)]
    Vz = [ing.shear.V(z, i) for i in range(4)]
    s, kap = loc.s, loc.kappa
    sl = [s * sum(comb(k, i) * phis[k - i] * kap ** i * Vz[i] for i in range(k + 1))
          for k in range(4)]
    d2a = -loc.mu ** 2
    d1a = float(prof.u(x, loc.a, 1))
    I31 = -(u[0] - loc.ua - d1a * r - 0.5 * d2a * r * r) * sl[1] / eps
    I32 = (u[1] - d1a - d2a * r) * sl[0] / eps
    # the phi-proportional part of I33 vanishes by the V-equation; keep cutoff terms
    I33 = (s * s / eps) * (z * z - tau) * phis[1] * Vz[0] - 1j * C * s * (
        phis[3] * Vz[0] + 3 * kap * phis[2] * Vz[1] + 3 * kap ** 2 * phis[1] * Vz[2])
    I34 = 1j * (C - loc.ua + s * tau) * sl[3]
    I3_direct = -(1 / om + u[0]) * sl[1] / eps + u[1] * sl[0] / eps + 1j * sl[3] / om
    direct = I1 + I2 + I3_direct
    inside = (np.abs(r) <= cfg.cutoff_inner) & (z != 0)
    canc = np.where(inside, (z * z - tau) * Vz[1] - 2 * z * Vz[0] - 1j * C * Vz[3], 0.0)
    return ResidualParts(grid, loc.a, I1, I2, I31, I32, I33, I34, direct, canc)


def substitution_residual(cfg: QuasimodeConfig, ing: Ingredients, x: float, dx: float,
                          grid: YGrid | None = None) -> np.ndarray:
    """Amplitude residual by plugging (u_hat, v_hat) into the linearised equation.

    x-derivatives: centred differences of step dx on the phase-restored field;
    y-derivatives: the generic finite differences of :mod:`core`.
    """
    from .core import derivative_values
    cfg = cfg.resolved(ing.flow, ing.curve)
    loc = _local(x, cfg, ing)
    grid = grid or _grid_for(loc, cfg, ing)
    y = grid.nodes
    prof = ing.flow.profile

    def field(xx):
        sl = quasimode_slice(xx, cfg, ing, grid)
        return sl

    mid = field(x)
    u_x = (field(x + dx).u_hat - field(x - dx).u_hat) / (2 * dx)
    u = mid.u_hat
    uy = derivative_values(u, y, 1)
    uyy = derivative_values(u, y, 2)
    res = (-1j / cfg.eps * u + prof.u(x, y) * u_x + prof.v(x, y) * uy
           + u * prof.ux(x, y) + mid.v_hat * prof.u(x, y, 1) - uyy)
    return res / mid.phase


# --- bound checks -------------------------------------------------------------------

class ResidualReport(NamedTuple):
    eps: float
    xs: np.ndarray
    norms: dict               # name -> per-x weighted sup norms (I1, I2, I3, I31..I34)
    J_norm: np.ndarray
    amp: np.ndarray
    delta0_effective: float
    delta0_predicted: float
    bound_constant: float
    sandwich: tuple           # (lower_const, upper_const)
    ratio_s0: np.ndarray
    ratio_s2: np.ndarray
    solution_norm: np.ndarray


def _wnorm(values, grid, beta, s=0):
    return weighted_sup_norm(GridFn(grid, values), WeightSpec(beta, s)).value


def _w2_norm(sl: Slice, beta: float) -> float:
    """W^{2,inf}_beta norm from the analytic y-derivatives of u_hat."""
    y = sl.grid.nodes
    w = np.exp(beta * y)
    d0 = w * sl.u_hat
    d1 = w * (sl.u_hat_y + beta * sl.u_hat)
    d2 = w * (sl.u_hat_yy + 2 * beta * sl.u_hat_y + beta ** 2 * sl.u_hat)
    return float(max(np.max(np.abs(d0)), np.max(np.abs(d1)), np.max(np.abs(d2))))


def residual_bound_check(cfg: QuasimodeConfig, ing: Ingredients, workers: int = 1,
                         field: QuasimodeField | None = None) -> ResidualReport:
    """Weighted norms of the residual pieces over 0 <= x <= x_span and the growth sandwich."""
    field = field or assemble(cfg, ing, workers)
    cfg = field.config
    names = ("I1", "I2", "I3", "I31", "I32", "I33", "I34")

    def one(sl):
        parts = residual_field(cfg, ing, sl.x, sl.grid)
        vals = {n: _wnorm(getattr(parts, n), sl.grid, cfg.beta) for n in names}
        vals["J"] = abs(sl.phase) * _wnorm(parts.total, sl.grid, cfg.beta)
        vals["u0"] = _wnorm(sl.u_hat, sl.grid, cfg.beta)
        vals["u2"] = _w2_norm(sl, cfg.beta)
        return vals

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, field.slices))
    else:
        rows = [one(sl) for sl in field.slices]
    amp = field.predicted_amp
    norms = {n: np.array([r[n] for r in rows]) for n in names}
    J = np.array([r["J"] for r in rows])
    r0 = np.array([r["u0"] for r in rows]) / amp
    r2 = np.array([r["u2"] for r in rows]) / amp
    xs = field.xs
    rate = fit_exponent(xs[1:] / np.sqrt(cfg.eps), np.log(amp[1:])).rate if xs.size > 3 else \
        float(np.log(amp[-1]) / (xs[-1] / np.sqrt(cfg.eps)))
    d0_pred = float(np.mean(ing.curve.mu * abs(ing.tau.imag) / (np.sqrt(2) * ing.curve.ua ** 2)))
    lower = float(np.min(r2))
    upper = float(np.max(r2) * cfg.eps ** 0.25)
    return ResidualReport(cfg.eps, xs, norms, J, amp, float(rate), d0_pred,
                          float(np.max(J / amp)), (lower, upper), r0, r2,
                          np.array([r["u0"] for r in rows]))


def growth_sandwich_check(cfg: QuasimodeConfig, ing: Ingredients, workers: int = 1):
    rep = residual_bound_check(cfg, ing, workers)
    return rep.sandwich


# --- export ----------------------------------------------------------------------------

def export_reports(reports, directory) -> list:
    """Write per-x CSV rows, a per-eps summary CSV and a JSON summary; return the paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows_path, summ_path, json_path = (d / "quasimode_rows.csv", d / "quasimode_summary.csv",
                                       d / "quasimode_summary.json")
    with rows_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "x", "J_norm", "amp", "J_over_amp", "ratio_s0", "ratio_s2",
                    "I1", "I2", "I3", "I31", "I32", "I33", "I34"])
        for rep in reports:
            for i, x in enumerate(rep.xs):
                w.writerow([f"{rep.eps:.6g}", f"{x:.10g}", f"{rep.J_norm[i]:.10g}",
                            f"{rep.amp[i]:.10g}", f"{rep.J_norm[i] / rep.amp[i]:.10g}",
                            f"{rep.ratio_s0[i]:.10g}", f"{rep.ratio_s2[i]:.10g}"]
                           + [f"{rep.norms[n][i]:.10g}" for n in
                              ("I1", "I2", "I3", "I31", "I32", "I33", "I34")])
    summary = [summary_row(rep) for rep in reports]
    with summ_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        keys = list(summary[0])
        w.writerow(keys)
        for s in summary:
            w.writerow([f"{s[k]:.10g}" for k in keys])
    json_path.write_text(json.dumps({"per_eps": summary}, indent=1, sort_keys=True))
    return [rows_path, summ_path, json_path]


def summary_row(rep: ResidualReport) -> dict:
    return {"eps": rep.eps, "bound_constant": rep.bound_constant,
            "lower_const": rep.sandwich[0], "upper_const": rep.sandwich[1],
            "delta0_effective": rep.delta0_effective, "delta0_predicted": rep.delta0_predicted,
            "ratio_s0_min": float(np.min(rep.ratio_s0)),
            "ratio_s0_max": float(np.max(rep.ratio_s0))}
