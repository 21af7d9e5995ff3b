"""Single-mode march of the linearised Prandtl equation and the growth scan.

For u = e^{-ikt} u_hat(x, y) the linearised equations reduce to

    u0 w - d_y u0 * int_0^y w = L u_hat,      w = d_x u_hat,
    L u_hat = ik u_hat - v0 d_y u_hat - u_hat d_x u0 + d_y^2 u_hat,

after eliminating v_hat = -int_0^y w.  Writing T for the left operator
(trapezoid quadrature for the integral), the march is BDF2 in x,

    (3T - 2 dx L) u^{n+1} = T (4 u^n - u^{n-1}) + 2 dx F^{n+1},

started by a Richardson-extrapolated backward Euler step, with u = 0 at both
ends of the y-grid.  F is an optional forcing (used for the error equation of
the quasimode).
"""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve, solve_triangular

from .baseflow import BaseFlow, find_critical_point
from .core import GridFn, WeightSpec, YGrid, cumulative_matrix, derivative_values, \
    diff_matrix, fit_exponent, layered_grid, weighted_sup_norm
from .errors import CompatibilityError, InvalidArgument, StabilityError
from .quasimode import QuasimodeConfig, phase_integral, predicted_amp, prepare, \
    quasimode_slice, residual_field
from .spectral import find_tau


# --- the transport operator and its inverse -------------------------------------

def transport_matrix(u0: np.ndarray, du0: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Dense lower-triangular T with (T w)_j = u0_j w_j - du0_j * trapz_0^{y_j} w."""
    return np.diag(u0) - du0[:, None] * cumulative_matrix(nodes)


def apply_transport(w: GridFn, u0: np.ndarray, du0: np.ndarray) -> GridFn:
    """Forward Volterra operator by trapezoid quadrature."""
    return GridFn(w.grid, transport_matrix(u0, du0, w.grid.nodes) @ w.values)


def _check_wall(R: GridFn, tol: float):
    scale = float(np.max(np.abs(R.values)))
    if scale > 0 and abs(R.values[0]) > tol * scale:
        raise CompatibilityError(
            f"R(0) = {R.values[0]:.3e} does not vanish (relative {abs(R.values[0]) / scale:.2e})")


def _wall_profile(flow: BaseFlow, x: float, y: np.ndarray):
    u0 = np.asarray(flow.profile.u(x, y), dtype=float)
    du0 = np.asarray(flow.profile.u(x, y, 1), dtype=float)
    if np.any(u0[1:] <= 0):
        raise InvalidArgument("u0 must be positive above the wall")
    return u0, du0


def invert_transport(R: GridFn, flow: BaseFlow, x: float, tol: float = 1e-8) -> GridFn:
    """Solve u0 w - d_y u0 int_0^y w = R on R's grid.

    Forward substitution through the same trapezoid rule used by
    :func:`apply_transport`, so the pair are exact inverses up to rounding.
    The wall row is degenerate (u0 = 0 there); w(0) = 0 since R = O(y^2).
    """
    _check_wall(R, tol)
    y = R.grid.nodes
    u0, du0 = _wall_profile(flow, x, y)
    T = transport_matrix(u0, du0, y)
    w = np.zeros(y.size, dtype=np.result_type(R.values, float))
    w[1:] = solve_triangular(T[1:, 1:], R.values[1:], lower=True)
    return GridFn(R.grid, w)


def invert_transport_closed(R: GridFn, flow: BaseFlow, x: float, tol: float = 1e-8) -> GridFn:
    """The same inverse from w = R/u0 + d_y u0 int_0^y R/u0^2.

    At the wall u0 ~ lam y, so R/u0^2 -> R''(0)/(2 lam^2) and R/u0 -> R'(0)/lam;
    the first cell uses these limits.  Second-order accurate, independent of
    the discrete operator.
    """
    _check_wall(R, tol)
    y = R.grid.nodes
    u0, du0 = _wall_profile(flow, x, y)
    lam = du0[0]
    if not lam > 0:
        raise InvalidArgument("the wall shear must be positive")
    r = R.values
    q = np.empty_like(r, dtype=np.result_type(r, float))
    q[1:] = r[1:] / u0[1:] ** 2
    q[0] = derivative_values(r, y, 2)[0] / (2 * lam ** 2)
    p = np.empty_like(q)
    p[1:] = r[1:] / u0[1:]
    p[0] = derivative_values(r, y, 1)[0] / lam
    integral = cumulative_matrix(y) @ q
    return GridFn(R.grid, p + du0 * integral)


# --- the mode operator -------------------------------------------------------------

class ModeOperator(NamedTuple):
    T: np.ndarray
    L: np.ndarray


def mode_operator(flow: BaseFlow, x: float, k: float, grid: YGrid) -> ModeOperator:
    y = grid.nodes
    prof = flow.profile
    u0, du0 = _wall_profile(flow, x, y)
    v0 = np.asarray(prof.v(x, y), dtype=float)
    ux = np.asarray(prof.ux(x, y), dtype=float) * np.ones_like(y)
    D1 = diff_matrix(y, 1).toarray()
    D2 = diff_matrix(y, 2).toarray()
    L = 1j * k * np.eye(y.size) - v0[:, None] * D1 - np.diag(ux) + D2
    return ModeOperator(transport_matrix(u0, du0, y), L)


def _dirichlet(A: np.ndarray) -> np.ndarray:
    A = A.copy()
    A[0, :] = 0.0
    A[-1, :] = 0.0
    A[0, 0] = A[-1, -1] = 1.0
    return A


def _zero_ends(b: np.ndarray) -> np.ndarray:
    b[0] = b[-1] = 0.0
    return b


# --- runs --------------------------------------------------------------------------

@dataclass(frozen=True)
class ModeRun:
    """One march of a single time-Fourier mode from x = start_xi to X.

    ``forcing(x)`` returns the right-hand side F of the linearised equation on
    the initial grid, or None for the homogeneous problem.  ``dx`` defaults to
    min(0.01/k, 1e-3): the implicit scheme needs no parabolic step limit,
    the bound comes from resolving the ik rotation.
    """

    k: float
    flow: BaseFlow
    initial: GridFn
    start_xi: float = 0.0
    X: float = 0.1
    dx: float | None = None
    snapshots_every: int = 10
    beta: float = 0.5
    growth_ceiling: float = 1e3
    compat_tol: float = 5e-2
    forcing: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.k < 0:
            raise InvalidArgument("k must be non-negative")
        if not self.X > self.start_xi:
            raise InvalidArgument("X must exceed start_xi")
        if self.dx is not None and not self.dx > 0:
            raise InvalidArgument("dx must be positive")
        if self.snapshots_every < 1:
            raise InvalidArgument("snapshots_every must be at least 1")
        if abs(self.initial.values[0]) > 1e-12 * max(1.0, np.max(np.abs(self.initial.values))):
            raise InvalidArgument("initial data must vanish at the wall")

    @property
    def step(self) -> float:
        return self.dx if self.dx is not None else min(0.01 / max(self.k, 1e-300), 1e-3)


@dataclass(frozen=True)
class ModeEvolution:
    run: ModeRun
    xs: np.ndarray
    norms: np.ndarray
    snapshots: tuple
    gamma: float
    compat_defect: float

    @property
    def final(self) -> GridFn:
        return self.snapshots[-1]

    def amplification(self) -> np.ndarray:
        return self.norms / self.norms[0]


def _norm(values, grid, beta) -> float:
    return weighted_sup_norm(GridFn(grid, values), WeightSpec(beta, 0)).value


def _growth_rate(xs, norms) -> float:
    keep = xs >= xs[0] + 0.2 * (xs[-1] - xs[0])
    xs, norms = xs[keep], norms[keep]
    if xs.size < 3 or np.any(norms <= 0):
        return float("nan")
    return fit_exponent(xs, np.log(norms)).rate


def _wall_ratio(u, y) -> float:
    """|d_y^2 u(0)| relative to max |d_y^2 u|: the wall identity defect."""
    d2 = np.abs(derivative_values(u, y, 2))
    return float(d2[0] / d2.max()) if d2.max() > 0 else 0.0


class _Stepper:
    """Caches LU factors; coefficients are frozen when the flow is x-independent."""

    def __init__(self, run: ModeRun):
        self.run = run
        self.grid = run.initial.grid
        self.frozen = run.flow.x_independent
        self._ops = {}
        self._lu = {}

    def ops(self, x):
        key = 0.0 if self.frozen else x
        if key not in self._ops:
            if not self.frozen:
                self._ops.clear()
            self._ops[key] = mode_operator(self.run.flow, x, self.run.k, self.grid)
        return self._ops[key]

    def solve(self, x, a, b, rhs):
        """Solve (a T - b L) u = rhs at station x with Dirichlet ends."""
        op = self.ops(x)
        key = (0.0 if self.frozen else x, a, b)
        if key not in self._lu:
            if not self.frozen:
                self._lu = {k: v for k, v in self._lu.items() if k[0] == key[0]}
            self._lu[key] = lu_factor(_dirichlet(a * op.T - b * op.L))
        return lu_solve(self._lu[key], _zero_ends(rhs))

    def forcing(self, x):
        f = self.run.forcing
        return np.zeros(self.grid.count, dtype=complex) if f is None else np.asarray(f(x), complex)


def march_mode(run: ModeRun) -> ModeEvolution:
    """Advance u_hat from start_xi to X; see the module docstring for the scheme."""
    grid = run.initial.grid
    y = grid.nodes
    n = max(int(np.ceil((run.X - run.start_xi) / run.step - 1e-9)), 2)
    dx = (run.X - run.start_xi) / n
    st = _Stepper(run)
    u_prev = np.asarray(run.initial.values, dtype=complex)
    x0 = run.start_xi

    # first step: backward Euler at dx and at two dx/2, then extrapolate
    def be(u, x_new, h):
        T = st.ops(x_new).T
        return st.solve(x_new, 1.0, h, T @ u + h * st.forcing(x_new))

    big = be(u_prev, x0 + dx, dx)
    half = be(be(u_prev, x0 + dx / 2, dx / 2), x0 + dx, dx / 2)
    u_curr = 2 * half - big

    xs, norms, snaps = [x0], [_norm(u_prev, grid, run.beta)], [GridFn(grid, u_prev.copy())]
    wall = [_wall_ratio(u_prev, y)]

    def record(i, x, u):
        nrm = _norm(u, grid, run.beta)
        if not np.isfinite(nrm):
            raise StabilityError("non-finite solution", last_x=xs[-1])
        if norms[-1] > 0 and nrm > 0 and (np.log(nrm / norms[-1])
                                          > (i - last[0]) * np.log(run.growth_ceiling)):
            raise StabilityError(f"growth per step exceeded {run.growth_ceiling:g}",
                                 last_x=xs[-1])
        if i % run.snapshots_every == 0 or i == n:
            xs.append(x)
            norms.append(nrm)
            snaps.append(GridFn(grid, u.copy()))
            wall.append(_wall_ratio(u, y))
            last[0] = i

    last = [0]
    record(1, x0 + dx, u_curr)
    for i in range(2, n + 1):
        x_new = x0 + i * dx
        T = st.ops(x_new).T
        rhs = T @ (4 * u_curr - u_prev) + 2 * dx * st.forcing(x_new)
        u_prev, u_curr = u_curr, st.solve(x_new, 3.0, 2 * dx, rhs)
        record(i, x_new, u_curr)

    xs, norms = np.array(xs), np.array(norms)
    defect = float(max(wall))
    if defect > run.compat_tol:
        warnings.warn(f"wall identity drift {defect:.2e} exceeds {run.compat_tol:g}",
                      RuntimeWarning, stacklevel=2)
    return ModeEvolution(run, xs, norms, tuple(snaps), _growth_rate(xs, norms), defect)


# --- grids and initial data -------------------------------------------------------

def march_grid(flow: BaseFlow, k: float, focus: float | None = None, y_max: float | None = None,
               h_focus: float | None = None) -> YGrid:
    """Wall- and layer-resolving grid for frequency k (exact node at ``focus``)."""
    y_max = float(flow.ygrid.y_max) if y_max is None else y_max
    h_wall = min(0.02, 0.2 / np.sqrt(max(k, 1.0)))
    h_layer = h_focus or min(0.02, 0.1 * (1.0 / max(k, 1.0)) ** 0.25)
    h_wall = min(h_wall, h_layer)
    return layered_grid(y_max, h_wall, 0.5, focus=focus, h_focus=h_layer,
                        focus_width=0.6 if focus is not None else 0.0, growth=0.05)


def wall_bump(grid: YGrid, center: float = 2.0) -> GridFn:
    """Smooth test data y^3 e^{-(y - center)^2 / 2}: zero to second order at the wall."""
    y = grid.nodes
    return GridFn(grid, (y ** 3 * np.exp(-0.5 * (y - center) ** 2)).astype(complex))


# --- growth estimates ----------------------------------------------------------------

def operator_norm_lower_bound(k: float, flow: BaseFlow, x: float, xi: float,
                              trials: Sequence[GridFn], beta: float = 0.5,
                              dx: float | None = None) -> float:
    """max over trials of ||u(x)|| / ||u(xi)|| in the weighted sup norm."""
    if not trials:
        raise InvalidArgument("need at least one trial")
    best = 0.0
    for t in trials:
        n0 = _norm(t.values, t.grid, beta)
        if n0 == 0:
            raise InvalidArgument("trials must be nonzero")
        ev = march_mode(ModeRun(k, flow, t, xi, x, dx, snapshots_every=10 ** 9, beta=beta))
        best = max(best, ev.norms[-1] / n0)
    return best


@dataclass(frozen=True)
class ScanResult:
    flow_name: str
    ks: np.ndarray
    gammas: np.ndarray
    windows: np.ndarray
    slope: float
    intercept: float
    r_squared: float
    slope_stderr: float
    delta: float
    sigma: float
    regularized: np.ndarray
    evolutions: tuple = field(default=(), compare=False, repr=False)

    @property
    def gamma_over_sqrt_k(self) -> np.ndarray:
        return self.gammas / np.sqrt(self.ks)

    @property
    def regularized_ratios(self) -> np.ndarray:
        return self.regularized[1:] / self.regularized[:-1]

    def verdict(self, min_ratio: float = 1.5) -> bool:
        """Ill-posedness signature: regularized supremum grows by min_ratio per k-step."""
        return bool(self.slope > 0 and np.all(self.regularized_ratios >= min_ratio))


def regularized_sup(ev: ModeEvolution, delta: float, sigma: float) -> float:
    k = ev.run.k
    shift = ev.xs - ev.run.start_xi
    return float(np.max(np.exp(-delta * shift * np.sqrt(k)) * ev.norms) / (k ** sigma * ev.norms[0]))


@lru_cache(maxsize=16)
def _spectral_for(C: float):
    return find_tau(C, seeds=[-np.sqrt(C) * np.exp(0.25j * np.pi)])


def spectral_for_flow(flow: BaseFlow):
    """Spectral solution for C = u0(0, a(0)) of a flow with a critical point."""
    a0 = find_critical_point(flow, float(flow.xgrid.nodes[0]))
    C = float(flow.profile.u(float(flow.xgrid.nodes[0]), a0))
    return _spectral_for(round(C, 14))


def default_initial(flow: BaseFlow, k: float, grid: YGrid | None = None, spec=None):
    """Quasimode slice at eps = 1/k for flows with a critical point, else a wall bump.

    Returns (grid, initial GridFn).
    """
    if flow.monotone:
        grid = grid or march_grid(flow, k)
        return grid, wall_bump(grid)
    ing = prepare(flow, spec or spectral_for_flow(flow))
    cfg = QuasimodeConfig(1.0 / k).resolved(flow, ing.curve)
    grid = grid or march_grid(flow, k, focus=float(ing.curve.a[0]))
    return grid, GridFn(grid, quasimode_slice(0.0, cfg, ing, grid).u_hat)


def scan_one(k: float, flow: BaseFlow, x_window: float, dx: float | None = None,
             beta: float = 0.5, snapshots_every: int = 20) -> ModeEvolution:
    grid, init = default_initial(flow, k)
    X = min(x_window, k ** -0.25)
    return march_mode(ModeRun(k, flow, init, 0.0, X, dx, snapshots_every, beta))


def illposedness_scan(ks: Sequence[float], flow: BaseFlow, delta: float | None = None,
                      sigma: float = 0.0, x_window: float = 1.0, dx: float | None = None,
                      beta: float = 0.5, workers: int = 1) -> ScanResult:
    """March every k over [0, min(x_window, k^(-1/4))] and fit gamma(k) against sqrt(k).

    ``delta`` defaults to half the fitted slope.
    """
    ks = np.asarray(sorted(ks), dtype=float)
    if ks.size == 0 or np.any(ks <= 0):
        raise InvalidArgument("ks must be a nonempty list of positive frequencies")
    if delta is not None and delta < 0:
        raise InvalidArgument("delta must be non-negative")
    if not 0 <= sigma < 0.5:
        raise InvalidArgument("sigma must lie in [0, 1/2)")
    run = lambda k: scan_one(float(k), flow, x_window, dx, beta)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            evs = tuple(pool.map(run, ks))
    else:
        evs = tuple(run(k) for k in ks)
    gammas = np.array([e.gamma for e in evs])
    roots = np.sqrt(ks)
    if ks.size >= 3:
        fit = fit_exponent(roots, gammas)
        slope, intercept, r2 = fit
        resid = gammas - (slope * roots + intercept)
        sxx = float(np.sum((roots - roots.mean()) ** 2))
        stderr = float(np.sqrt(np.sum(resid ** 2) / max(ks.size - 2, 1) / sxx)) if sxx else 0.0
    else:
        slope = float(np.mean(gammas / roots))
        intercept, r2, stderr = 0.0, float("nan"), float("nan")
    d = slope / 2 if delta is None else delta
    d = max(d, 0.0)
    reg = np.array([regularized_sup(e, d, sigma) for e in evs])
    windows = np.array([e.xs[-1] for e in evs])
    return ScanResult(flow.name, ks, gammas, windows, float(slope), float(intercept), float(r2),
                      stderr, float(d), float(sigma), reg, evs)


# --- the quasimode error equation -----------------------------------------------------

@dataclass(frozen=True)
class ConsistencyReport:
    eps: float
    xs: np.ndarray
    error_norms: np.ndarray       # ||U_tilde(x)||
    predicted_amp: np.ndarray
    K: float                      # sup ||U_tilde|| / (sqrt(eps) amp)
    numeric_norms: np.ndarray     # homogeneous march from the quasimode slice
    history_ratio: np.ndarray     # (||u_num(x)|| / ||u_num(0)||) / amp(x)


def evolve_quasimode_consistency(eps: float, flow: BaseFlow, spec=None, X: float | None = None,
                                 dx: float | None = None, beta: float = 0.5,
                                 snapshots_every: int = 10,
                                 zero_forcing: bool = False) -> ConsistencyReport:
    """March U_tilde = u - u_quasimode from zero data, forced by minus the quasimode residual.

    Also marches the homogeneous problem from the quasimode slice and compares
    its norm history with the predicted amplitude.  For x-independent flows the
    quasimode is exact in its x-dependence, so X may exceed eps^(1/4).
    """
    k = 1.0 / eps
    ing = prepare(flow, spec or spectral_for_flow(flow))
    X = 5 * np.sqrt(eps) if X is None else X
    cfg = QuasimodeConfig(eps, beta=beta).resolved(flow, ing.curve)
    if not flow.x_independent and X > cfg.x_span * (1 + 1e-12):
        raise InvalidArgument("X beyond the quasimode window for an x-dependent flow")
    frozen = flow.x_independent
    grid = march_grid(flow, k, focus=float(ing.curve.a[0]))
    s0 = quasimode_slice(0.0, cfg, ing, grid)
    base_total = residual_field(cfg, ing, 0.0, grid).total if frozen else None

    def forcing(x):
        if zero_forcing:
            return np.zeros(grid.count, dtype=complex)
        E = np.exp(-1j * phase_integral(x, cfg, ing) / eps)
        total = base_total if frozen else residual_field(cfg, ing, x, grid).total
        return -E * total

    zero = GridFn(grid, np.zeros(grid.count, complex))
    err = march_mode(ModeRun(k, flow, zero, 0.0, X, dx, snapshots_every, beta, forcing=forcing))
    hom = march_mode(ModeRun(k, flow, GridFn(grid, s0.u_hat), 0.0, X, dx, snapshots_every, beta))
    amp = np.array([predicted_amp(x, cfg, ing) for x in err.xs])
    K = float(np.max(err.norms / (np.sqrt(eps) * amp)))
    ratio = (hom.norms / hom.norms[0]) / amp
    return ConsistencyReport(eps, err.xs, err.norms, amp, K, hom.norms, ratio)


# --- export --------------------------------------------------------------------------

def export_scan_csv(result: ScanResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    verdict = "yes" if result.verdict() else "no"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flow", "k", "gamma", "gamma_over_sqrt_k", "regularized_sup", "window",
                    "verdict"])
        for k, g, r, xw in zip(result.ks, result.gammas, result.regularized, result.windows):
            w.writerow([result.flow_name, f"{k:.10g}", f"{g:.10g}", f"{g / np.sqrt(k):.10g}",
                        f"{r:.10g}", f"{xw:.10g}", verdict])
    return path


def export_snapshots_csv(ev: ModeEvolution, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "re_u", "im_u"])
        for x, snap in zip(ev.xs, ev.snapshots):
            for yy, val in zip(snap.grid.nodes, snap.values):
                w.writerow([f"{x:.10g}", f"{yy:.10g}", f"{val.real:.12g}", f"{val.imag:.12g}"])
    return path
