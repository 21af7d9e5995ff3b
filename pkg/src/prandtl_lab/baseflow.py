"""Stationary base flows (u0, v0): an analytic catalog, gridded flows and the
critical-point curve a(x) along which d_y u0 vanishes.

Every flow carries a *profile*, an evaluator usable off-grid, because the
quasimode and the mode march need u0 and its y-derivatives on their own grids
(for example a grid with a node exactly at a(x)).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import RectBivariateSpline

from .core import XGrid, YGrid, build_stretched_grid, cumulative_integral, GridFn, \
    derivative_values
from .errors import InvalidArgument, TrackingError

CATALOG = ("monotone_exp", "critical_shear", "critical_xdep")
DEFAULT_A = 1.3


# --- evaluators -------------------------------------------------------------

class ShearFamily:
    """u0 = U(1 - e^{-y}) - A(x) y^2 e^{-y} with A(x) = A0 + A1 (1 - e^{-x}).

    A = 0 is the monotone control.  v0 follows from incompressibility in closed
    form: v0 = A'(x) [2 - e^{-y}(y^2 + 2y + 2)].
    """

    def __init__(self, U: float = 1.0, A0: float = 0.0, A1: float = 0.0, p_x: float = 0.0):
        self.U, self.A0, self.A1, self.px = float(U), float(A0), float(A1), float(p_x)

    def A(self, x):
        return self.A0 + self.A1 * (1 - np.exp(-np.asarray(x, dtype=float)))

    def dA(self, x):
        return self.A1 * np.exp(-np.asarray(x, dtype=float))

    @staticmethod
    def _y2e(y, k):
        # k-th y-derivative of y^2 e^{-y}
        return (-1) ** k * np.exp(-y) * (y * y - 2 * k * y + k * (k - 1))

    def u(self, x, y, dy: int = 0):
        y = np.asarray(y, dtype=float)
        base = self.U * (1 - np.exp(-y)) if dy == 0 else -self.U * (-1) ** dy * np.exp(-y)
        return base - self.A(x) * self._y2e(y, dy)

    def ux(self, x, y, dy: int = 0):
        return -self.dA(x) * self._y2e(np.asarray(y, dtype=float), dy)

    def v(self, x, y, dy: int = 0):
        y = np.asarray(y, dtype=float)
        if dy == 0:
            return self.dA(x) * (2 - np.exp(-y) * (y * y + 2 * y + 2))
        return -self.ux(x, y, dy - 1)

    def p_x(self, x):
        return np.full(np.shape(x), self.px) if np.ndim(x) else self.px

    def U_far(self, x):
        return np.full(np.shape(x), self.U) if np.ndim(x) else self.U

    def critical_points(self, x):
        """Closed-form zeros 1 -+ sqrt(1 - U/A) of d_y u0 (NaN where A <= U)."""
        A = self.A(x)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.sqrt(1 - self.U / A)
        return 1 - r, 1 + r


class GriddedProfile:
    """Spline evaluator over gridded (x, y) fields (quintic in y, cubic in x)."""

    def __init__(self, x, y, u0, v0, p_x, U_far):
        kx = min(3, len(x) - 1)
        self._u = RectBivariateSpline(x, y, u0, kx=kx, ky=5, s=0)
        self._v = RectBivariateSpline(x, y, v0, kx=kx, ky=5, s=0)
        self._x = np.asarray(x)
        self._px = np.asarray(p_x, dtype=float) * np.ones(len(x))
        self._U = np.asarray(U_far, dtype=float) * np.ones(len(x))

    def _eval(self, spl, x, y, dx, dy):
        xb, yb = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        out = spl.ev(xb.ravel(), yb.ravel(), dx=dx, dy=dy).reshape(xb.shape)
        return out if out.ndim else float(out)

    def u(self, x, y, dy=0):
        return self._eval(self._u, x, y, 0, dy)

    def ux(self, x, y, dy=0):
        if len(self._x) < 2:
            return 0.0 * np.asarray(y, dtype=float)
        return self._eval(self._u, x, y, 1, dy)

    def v(self, x, y, dy=0):
        return self._eval(self._v, x, y, 0, dy)

    def p_x(self, x):
        return np.interp(x, self._x, self._px)

    def U_far(self, x):
        return np.interp(x, self._x, self._U)


# --- the flow record ----------------------------------------------------------

@dataclass(frozen=True)
class BaseFlow:
    """Gridded base flow; 2-D fields are indexed [x-node, y-node]."""

    xgrid: XGrid
    ygrid: YGrid
    u0: np.ndarray
    v0: np.ndarray
    du0_dy: np.ndarray
    d2u0_dy2: np.ndarray
    du0_dx: np.ndarray
    p_x: np.ndarray
    U_far: np.ndarray
    alpha_decay: float
    profile: object = field(repr=False, compare=False)
    name: str = "custom"
    monotone: bool = False

    @property
    def x_independent(self) -> bool:
        return bool(np.max(np.abs(self.du0_dx)) == 0.0)


def _fill(profile, xgrid, ygrid, alpha_decay, name, monotone) -> BaseFlow:
    X, Y = np.meshgrid(xgrid.nodes, ygrid.nodes, indexing="ij")
    fields = {k: np.asarray(f, dtype=float) for k, f in dict(
        u0=profile.u(X, Y), v0=profile.v(X, Y), du0_dy=profile.u(X, Y, 1),
        d2u0_dy2=profile.u(X, Y, 2), du0_dx=profile.ux(X, Y)).items()}
    for a in fields.values():
        a.setflags(write=False)
    return BaseFlow(xgrid, ygrid, p_x=np.asarray(profile.p_x(xgrid.nodes), dtype=float) * np.ones(xgrid.count),
                    U_far=np.asarray(profile.U_far(xgrid.nodes), dtype=float) * np.ones(xgrid.count),
                    alpha_decay=alpha_decay, profile=profile, name=name, monotone=monotone,
                    **fields)


def default_ygrid(beta: float = 0.5, count: int = 801, stretch: float = 3.0) -> YGrid:
    """Truncation height 25/max(beta, 0.5) so e^{-beta y_max} is below 1e-10."""
    return build_stretched_grid(25.0 / max(beta, 0.5), count, stretch)


def analytic_profile(name: str, U: float = 1.0, A: float = DEFAULT_A, A1: float = 0.1,
                     p_x: float = 0.0, xgrid: XGrid | None = None,
                     ygrid: YGrid | None = None) -> BaseFlow:
    """Catalog flow ``monotone_exp``, ``critical_shear`` or ``critical_xdep``.

    ``A`` is the shear-defect amplitude (A0 for the x-dependent flow, whose
    amplitude is A + A1 (1 - e^{-x})).  A critical point needs A > U; A == U
    is the degenerate double root and is rejected.
    """
    if name not in CATALOG:
        raise InvalidArgument(f"unknown catalog flow {name!r}; choose from {CATALOG}")
    if not U > 0:
        raise InvalidArgument("U must be positive")
    xgrid = xgrid or XGrid.uniform(1.0, 11)
    ygrid = ygrid or default_ygrid()
    if name == "monotone_exp":
        prof = ShearFamily(U, 0.0, 0.0, p_x)
    else:
        prof = ShearFamily(U, A, A1 if name == "critical_xdep" else 0.0, p_x)
        amps = prof.A(xgrid.nodes)
        if np.any(np.abs(amps - U) <= 1e-9 * U):
            raise InvalidArgument("degenerate critical point: d2u0/dy2 vanishes at a (A == U)")
        if np.any(amps < U):
            raise InvalidArgument("no critical point: need A > U")
        a, _ = prof.critical_points(xgrid.nodes)
        if np.any(prof.u(xgrid.nodes, a) <= 0):
            raise InvalidArgument("u0 at the critical point must be positive")
    return _fill(prof, xgrid, ygrid, alpha_decay=1.0, name=name, monotone=name == "monotone_exp")


def gridded_flow(xgrid: XGrid, ygrid: YGrid, u0, v0, p_x, U_far, alpha_decay=1.0,
                 name="gridded", du0_dx=None) -> BaseFlow:
    """Wrap externally computed fields; derivatives come from the spline evaluator."""
    u0 = np.asarray(u0, dtype=float)
    prof = GriddedProfile(xgrid.nodes, ygrid.nodes, u0, np.asarray(v0, dtype=float),
                          p_x, U_far)
    flow = _fill(prof, xgrid, ygrid, alpha_decay, name, monotone=False)
    # keep the given fields rather than their spline reproductions
    object.__setattr__(flow, "u0", u0)
    object.__setattr__(flow, "v0", np.asarray(v0, dtype=float))
    if du0_dx is not None:
        object.__setattr__(flow, "du0_dx", np.asarray(du0_dx, dtype=float))
    return flow


# --- incompressibility --------------------------------------------------------

class V0Result(NamedTuple):
    v0: np.ndarray
    linear_growth: bool


def recover_v0(du0_dx: np.ndarray, ygrid: YGrid) -> V0Result:
    """v0 = -int_0^y d_x u0 dy' for every x-row; flags O(y) growth in the far field.

    Growth is flagged when |v0| at y_max exceeds 1.5x its value at y_max/2
    (a bounded limit gives ~1, linear growth gives 2).
    """
    du0_dx = np.atleast_2d(np.asarray(du0_dx, dtype=float))
    v0 = -np.array([cumulative_integral(GridFn(ygrid, row)).values.real for row in du0_dx])
    y = ygrid.nodes
    mid = int(np.searchsorted(y, 0.5 * y[-1]))
    far, half = np.abs(v0[:, -1]), np.abs(v0[:, mid])
    grows = bool(np.any((far > 1e-12) & (far > 1.5 * half)))
    return V0Result(v0, grows)


# --- critical-point curve -------------------------------------------------------

@dataclass(frozen=True)
class CriticalCurve:
    xs: np.ndarray
    a: np.ndarray
    mu: np.ndarray
    ua: np.ndarray
    C_critical: float
    profile: object = field(repr=False, compare=False)

    def locate(self, x: float, tol: float = 1e-13):
        """(a, mu, ua) at an arbitrary x, Newton-polished from the sampled curve."""
        a = _polish(self.profile, x, float(np.interp(x, self.xs, self.a)), tol)
        d2 = float(self.profile.u(x, a, 2))
        return a, np.sqrt(abs(d2)), float(self.profile.u(x, a))


def _polish(profile, x, a, tol=1e-13, max_iter=30):
    scale = 1.0
    for _ in range(max_iter):
        g, dg = float(profile.u(x, a, 1)), float(profile.u(x, a, 2))
        if dg == 0:
            break
        step = g / dg
        a -= step
        if abs(step) <= tol * max(scale, abs(a)):
            break
    return a


def critical_point_curve(flow: BaseFlow, a0: float, degeneracy: float = 1e-3,
                         tol: float = 1e-6) -> CriticalCurve:
    """Track a(x) from a(0) = a0 with a' = -d_xy u0 / d_yy u0, Newton-polished per node.

    Raises TrackingError (with the last valid x) when d_yy u0 at the curve
    shrinks below ``degeneracy`` times its initial size or u0(x, a(x)) <= 0.
    """
    prof = flow.profile
    x0 = float(flow.xgrid.nodes[0])
    shear_scale = float(np.max(np.abs(flow.du0_dy[0])))
    if abs(float(prof.u(x0, a0, 1))) > tol * shear_scale:
        raise InvalidArgument(f"a0 = {a0} is not a critical point of u0(0, .)")
    if float(prof.u(x0, a0, 2)) >= 0:
        raise InvalidArgument("critical point must be a maximum (d2u0/dy2 < 0)")
    a_prev = _polish(prof, x0, a0)
    curv0 = abs(float(prof.u(x0, a_prev, 2)))

    def rhs(x, a):
        return [-float(prof.ux(x, a[0], 1)) / float(prof.u(x, a[0], 2))]

    xs = flow.xgrid.nodes
    a_out, last = [], x0
    for i, x in enumerate(xs):
        if i > 0:
            sol = solve_ivp(rhs, (xs[i - 1], x), [a_prev], rtol=1e-10, atol=1e-12)
            a_prev = float(sol.y[0, -1])
        a_prev = _polish(prof, x, a_prev)
        d2 = float(prof.u(x, a_prev, 2))
        if not d2 < -degeneracy * curv0:
            raise TrackingError(f"critical point degenerates near x = {x:.6g}", last_x=last)
        if float(prof.u(x, a_prev)) <= 0:
            raise TrackingError(f"u0(x, a(x)) <= 0 near x = {x:.6g}", last_x=last)
        a_out.append(a_prev)
        last = float(x)
    a_arr = np.array(a_out)
    mu = np.sqrt(np.abs(prof.u(xs, a_arr, 2)))
    ua = np.asarray(prof.u(xs, a_arr), dtype=float)
    return CriticalCurve(xs.copy(), a_arr, mu, ua, float(ua[0]), prof)


def find_critical_point(flow: BaseFlow, x: float = 0.0) -> float:
    """First interior zero of d_y u0(x, .) with negative curvature, from the grid scan."""
    y = flow.ygrid.nodes
    g = np.asarray(flow.profile.u(x, y, 1))
    idx = np.nonzero((g[:-1] > 0) & (g[1:] <= 0))[0]
    if idx.size == 0:
        raise InvalidArgument("flow has no interior maximum of u0 at this x")
    j = idx[0]
    a = y[j] - g[j] * (y[j + 1] - y[j]) / (g[j + 1] - g[j])
    return _polish(flow.profile, x, a)


# --- diagnostics ----------------------------------------------------------------

class FlowDiagnostics(NamedTuple):
    steady_residual: float
    no_slip: float
    incompressibility: float
    far_field: float
    v0_linear_growth: bool
    min_wall_shear: float | None


def validate_baseflow(flow: BaseFlow, y0: float | None = None) -> FlowDiagnostics:
    """Residuals of the steady boundary-layer equation and the structural conditions.

    ``min_wall_shear`` is min d_y u0 over 0 < y <= y0 and is only reported for
    flows flagged monotone.
    """
    y = flow.ygrid.nodes
    res = (flow.u0 * flow.du0_dx + flow.v0 * flow.du0_dy + flow.p_x[:, None]
           - flow.d2u0_dy2)
    no_slip = float(max(np.max(np.abs(flow.u0[:, 0])), np.max(np.abs(flow.v0[:, 0]))))
    rec = recover_v0(flow.du0_dx, flow.ygrid)
    incompress = float(np.max(np.abs(flow.v0 - rec.v0)))
    far = float(np.max(np.abs(flow.u0[:, -1] - flow.U_far)))
    shear = None
    if flow.monotone:
        y0 = y[-1] if y0 is None else y0
        mask = (y > 0) & (y <= y0)
        shear = float(np.min(flow.du0_dy[:, mask]))
    return FlowDiagnostics(float(np.max(np.abs(res))), no_slip, incompress, far,
                           rec.linear_growth, shear)


def export_flow_csv(flow: BaseFlow, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "u0", "v0", "du0_dy", "d2u0_dy2"])
        for i, x in enumerate(flow.xgrid.nodes):
            for j, y in enumerate(flow.ygrid.nodes):
                w.writerow([f"{x:.12g}", f"{y:.12g}", f"{flow.u0[i, j]:.12g}",
                            f"{flow.v0[i, j]:.12g}", f"{flow.du0_dy[i, j]:.12g}",
                            f"{flow.d2u0_dy2[i, j]:.12g}"])


def slice_values(flow: BaseFlow, x: float, y: np.ndarray) -> dict:
    """u0, its y-derivatives up to 3, d_x u0 and v0 on an arbitrary y array."""
    p = flow.profile
    out = {f"u{k}": np.asarray(p.u(x, y, k), dtype=float) for k in range(4)}
    out["ux"] = np.asarray(p.ux(x, y), dtype=float)
    out["v"] = np.asarray(p.v(x, y), dtype=float)
    out["vy"] = np.asarray(p.v(x, y, 1), dtype=float)
    return out
