"""Steady boundary-layer flows through the von Mises variables.

With psi the stream function and omega = u^2, the steady equation becomes the
degenerate parabolic problem

    d_xi omega = sqrt(omega) d_psi^2 omega - 2 p_x,

marched here with sqrt(omega) frozen at the previous slice and the diffusion
implicit (a tridiagonal M-matrix, so omega stays in [0, max U^2]).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, solve_ivp
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.linalg import solve_banded as _lapack_banded
from scipy.optimize import brentq

from .baseflow import BaseFlow, gridded_flow, recover_v0
from .core import XGrid, YGrid, derivative_values, fit_exponent
from .errors import InvalidArgument, StabilityError


# --- boundary data -----------------------------------------------------------

@dataclass(frozen=True)
class SteadyBC:
    """Inflow profile u1 sampled on Y (Y[0] = 0), pressure gradient and outer flow."""

    Y: np.ndarray
    u1: np.ndarray
    p_x: Callable[[float], float]
    X: float
    U: Callable[[float], float]

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        u1 = np.asarray(self.u1, dtype=float)
        if Y.ndim != 1 or Y.shape != u1.shape or Y.size < 16:
            raise InvalidArgument("Y and u1 must be matching 1-D samples (at least 16)")
        if Y[0] != 0.0 or np.any(np.diff(Y) <= 0):
            raise InvalidArgument("Y must start at 0 and increase")
        if not np.all(np.isfinite(u1)):
            raise InvalidArgument("u1 must be finite")
        if not self.X > 0:
            raise InvalidArgument("march horizon X must be positive")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "u1", u1)

    @classmethod
    def from_function(cls, u1: Callable, X: float = 1.0, p_x=0.0, U=None,
                      Y_max: float = 15.0, count: int = 3001) -> "SteadyBC":
        Y = np.linspace(0.0, Y_max, count)
        px = p_x if callable(p_x) else (lambda x, c=float(p_x): c)
        vals = np.asarray(u1(Y), dtype=float)
        if U is None:
            U = lambda x, c=float(vals[-1]): c  # noqa: E731
        return cls(Y, vals, px, X, U)


def load_inflow_csv(path, X: float = 1.0, p_x=0.0, U=None) -> SteadyBC:
    """Read an inflow profile with columns ``Y, u1``."""
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"Y", "u1"} <= set(rows[0]):
        raise InvalidArgument(f"{path}: expected CSV columns Y, u1")
    Y = np.array([float(r["Y"]) for r in rows])
    u1 = np.array([float(r["u1"]) for r in rows])
    px = p_x if callable(p_x) else (lambda x, c=float(p_x): c)
    if U is None:
        U = lambda x, c=float(u1[-1]): c  # noqa: E731
    return SteadyBC(Y, u1, px, X, U)


def write_inflow_csv(path, Y, u1) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Y", "u1"])
        for a, b in zip(Y, u1):
            w.writerow([f"{a:.15g}", f"{b:.15g}"])


# --- inflow conditions -------------------------------------------------------------

class Condition(NamedTuple):
    name: str
    passed: bool
    measured: dict


class ConditionReport(NamedTuple):
    conditions: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def failed(self) -> list:
        return [c for c in self.conditions if not c.passed]

    def get(self, name) -> Condition:
        return next(c for c in self.conditions if c.name == name)

    def as_dict(self) -> dict:
        return {c.name: {"passed": c.passed, **c.measured} for c in self.conditions}


def check_oleinik_conditions(bc: SteadyBC, tol: float = 1e-3) -> ConditionReport:
    """Check the inflow against the hypotheses of the local steady theory.

    Compatibility passes when u1''(0) matches p_x(0) to ``tol`` (relative to
    max(1, |p_x(0)|)); the report also fits the order of u1''(Y) - p_x(0) near
    the wall and states whether the stronger O(Y^2) vanishing holds.
    """
    Y, u = bc.Y, bc.u1
    d1 = derivative_values(u, Y, 1)
    d2 = derivative_values(u, Y, 2)
    out = []
    out.append(Condition("no_slip", bool(abs(u[0]) <= tol), {"u1_0": float(u[0])}))
    out.append(Condition("wall_shear", bool(d1[0] > tol), {"du1_0": float(d1[0])}))
    out.append(Condition("positive", bool(np.all(u[1:] > 0)),
                         {"min_u1": float(np.min(u[1:]))}))
    U0 = float(bc.U(0.0))
    far = float(u[-1])
    far_ok = abs(far) > tol and abs(far - U0) <= tol * max(1.0, abs(U0))
    out.append(Condition("far_field", bool(far_ok), {"u1_far": far, "U0": U0}))

    px0 = float(bc.p_x(0.0))
    defect = float(d2[0] - px0)
    near = (Y > 0) & (Y <= 0.2 * Y[-1]) & (np.abs(d2 - px0) > 1e-12)
    sel = np.nonzero(near)[0][:40]
    order = float("nan")
    if sel.size >= 3:
        order = fit_exponent(np.log(Y[sel]), np.log(np.abs(d2[sel] - px0))).rate
    elif abs(defect) <= 1e-12:
        order = float("inf")
    out.append(Condition("compatibility", bool(abs(defect) <= tol * max(1.0, abs(px0))),
                         {"d2u1_0": float(d2[0]), "p_x0": px0, "defect": defect,
                          "order": order, "strict_quadratic": bool(order >= 1.8)}))

    tail = Y >= 0.3 * Y[-1]
    mags = np.abs(d1[tail])
    keep = mags > 1e-12
    if keep.sum() >= 3:
        fit = fit_exponent(Y[tail][keep], np.log(mags[keep]))
        m2 = -fit.rate
        out.append(Condition("derivative_decay", bool(m2 > 0),
                             {"m2": float(m2), "r_squared": float(fit.r_squared)}))
    else:
        out.append(Condition("derivative_decay", True, {"m2": float("inf"), "r_squared": 1.0}))
    return ConditionReport(tuple(out))


# --- Blasius oracle ---------------------------------------------------------------

class Blasius(NamedTuple):
    eta: np.ndarray
    f: np.ndarray
    fp: np.ndarray
    fpp0: float

    def u(self, eta):
        return np.interp(eta, self.eta, self.fp, right=1.0)

    def f_of(self, eta):
        return np.interp(eta, self.eta, self.f, right=np.nan)


def blasius(eta_max: float = 20.0, count: int = 20001) -> Blasius:
    """Shoot f''' + f f''/2 = 0, f(0) = f'(0) = 0, f'(inf) = 1 on f''(0)."""
    def rhs(_, s):
        return [s[1], s[2], -0.5 * s[0] * s[2]]

    def miss(c):
        sol = solve_ivp(rhs, (0, eta_max), [0.0, 0.0, c], rtol=1e-12, atol=1e-14)
        return sol.y[1, -1] - 1.0

    c = brentq(miss, 0.1, 1.0, xtol=1e-14)
    eta = np.linspace(0.0, eta_max, count)
    sol = solve_ivp(rhs, (0, eta_max), [0.0, 0.0, c], t_eval=eta, rtol=1e-12, atol=1e-14)
    return Blasius(eta, sol.y[0], sol.y[1], float(c))


# --- march --------------------------------------------------------------------

@dataclass(frozen=True)
class MarchResolution:
    n_psi: int = 401
    dxi: float = 0.005
    stretch_power: float = 2.0


@dataclass(frozen=True)
class MisesField:
    xi_grid: XGrid
    psi: np.ndarray
    omega: np.ndarray
    p_x: np.ndarray
    U: np.ndarray
    separated: bool = False
    wall_slope: np.ndarray | None = None


def _psi_grid(psi_max, n, power):
    zeta = np.linspace(0.0, 1.0, n)
    return psi_max * zeta ** power


def _second_diff(psi):
    """Three-point nonuniform d^2/dpsi^2 coefficients (lower, diag, upper) at interior nodes."""
    hm = psi[1:-1] - psi[:-2]
    hp = psi[2:] - psi[1:-1]
    lo = 2.0 / (hm * (hm + hp))
    up = 2.0 / (hp * (hm + hp))
    return lo, -(lo + up), up


def inflow_omega(bc: SteadyBC, psi: np.ndarray) -> np.ndarray:
    """omega_1(psi) from omega_1(int_0^Y u1) = u1(Y)^2."""
    psi_of_Y = cumulative_trapezoid(bc.u1, bc.Y, initial=0.0)
    if psi[-1] > psi_of_Y[-1] * (1 + 1e-12):
        raise InvalidArgument("psi_max exceeds the stream function carried by the inflow data")
    return PchipInterpolator(psi_of_Y, bc.u1 ** 2)(psi)


def von_mises_march(bc: SteadyBC, psi_max: float, resolution: MarchResolution = MarchResolution(),
                    check: bool = True, separation_ratio: float = 1e-3) -> MisesField:
    """March omega from xi = 0 to bc.X; stop early (flagged) at separation."""
    if check:
        rep = check_oleinik_conditions(bc)
        if not rep.passed:
            names = ", ".join(c.name for c in rep.failed())
            raise InvalidArgument(f"inflow violates: {names}")
    psi = _psi_grid(psi_max, resolution.n_psi, resolution.stretch_power)
    om = inflow_omega(bc, psi)
    if om[0] > 1e-10 * om.max():
        raise InvalidArgument("inflow omega must vanish at the wall")
    om[0] = 0.0
    nsteps = max(1, int(np.ceil(bc.X / resolution.dxi)))
    xi = np.linspace(0.0, bc.X, nsteps + 1)
    lo, di, up = _second_diff(psi)
    history = [om.copy()]
    slopes = [om[1] / psi[1]]
    ceiling = max(om.max(), max(float(bc.U(x)) ** 2 for x in xi))
    separated = False
    for n in range(nsteps):
        dx = xi[n + 1] - xi[n]
        s = np.sqrt(np.maximum(om[1:-1], 0.0))
        m = psi.size - 2
        ab = np.zeros((3, m))
        ab[0, 1:] = -dx * s[:-1] * up[:-1]
        ab[1] = 1.0 - dx * s * di
        ab[2, :-1] = -dx * s[1:] * lo[1:]
        rhs = om[1:-1] - 2.0 * dx * float(bc.p_x(xi[n]))
        Ufar2 = float(bc.U(xi[n + 1])) ** 2
        rhs[-1] += dx * s[-1] * up[-1] * Ufar2
        new = np.empty_like(om)
        new[0], new[-1] = 0.0, Ufar2
        new[1:-1] = _lapack_banded((1, 1), ab, rhs)
        if new.min() < -1e-10 * ceiling:
            raise StabilityError(f"omega went negative at xi = {xi[n + 1]:.6g}; reduce dxi",
                                 last_x=float(xi[n]))
        om = np.maximum(new, 0.0)
        history.append(om.copy())
        slopes.append(om[1] / psi[1])
        if slopes[-1] < separation_ratio * slopes[0]:
            separated = True
            break
    xi = xi[:len(history)]
    return MisesField(XGrid(xi), psi, np.array(history),
                      np.array([float(bc.p_x(x)) for x in xi]),
                      np.array([float(bc.U(x)) for x in xi]), separated, np.array(slopes))


# --- back to physical variables -------------------------------------------------

def _first_cell(psi1, psi2, w1, w2):
    """int_0^psi1 dpsi/sqrt(c1 psi + c2 psi^2) with c1, c2 fitted through two nodes."""
    c2 = (w2 / psi2 - w1 / psi1) / (psi2 - psi1)
    c1 = w1 / psi1 - c2 * psi1
    if c1 <= 0:
        return 2.0 * psi1 / np.sqrt(w1)
    r = abs(c2) * psi1 / c1
    if abs(c2) < 1e-14 * c1 / psi1:
        return 2.0 * np.sqrt(psi1 / c1)
    if c2 > 0:
        return 2.0 / np.sqrt(c2) * np.arcsinh(np.sqrt(r))
    return 2.0 / np.sqrt(-c2) * np.arcsin(min(1.0, np.sqrt(r)))


def stream_heights(psi: np.ndarray, omega_row: np.ndarray) -> np.ndarray:
    """Y(psi) = int_0^psi dpsi'/sqrt(omega).

    First cell analytic for omega = c1 psi + c2 psi^2; the rest by product
    integration with omega linear on each cell, 2 h/(sqrt(w_j) + sqrt(w_j+1)).
    """
    r = np.sqrt(omega_row)
    cells = 2.0 * np.diff(psi) / (r[:-1] + r[1:])
    cells[0] = _first_cell(psi[1], psi[2], omega_row[1], omega_row[2])
    return np.concatenate([[0.0], np.cumsum(cells)])


def invert_von_mises(mf: MisesField, ygrid: YGrid | None = None, count: int = 401,
                     alpha_decay: float = 1.0) -> BaseFlow:
    """Recover (u0, v0) on a Y-grid from omega(xi, psi)."""
    om = mf.omega
    scale = float(np.max(om))
    if np.any(np.abs(om[:, 0]) > 1e-10 * scale):
        raise InvalidArgument("omega must vanish at psi = 0")
    if np.any(om[:, 1:] <= 0):
        raise InvalidArgument("omega must be positive for psi > 0")
    heights = [stream_heights(mf.psi, row) for row in om]
    if ygrid is None:
        top = min(h[-1] for h in heights)
        ygrid = YGrid(np.linspace(0.0, top, count))
    y = ygrid.nodes
    if y[-1] > min(h[-1] for h in heights) * (1 + 1e-12):
        raise InvalidArgument("output grid extends beyond the transformed domain")
    u = np.array([CubicSpline(h, np.sqrt(row))(y) for h, row in zip(heights, om)])
    u[:, 0] = 0.0
    xs = mf.xi_grid.nodes
    if xs.size > 1:
        ux = np.gradient(u, xs, axis=0, edge_order=2)
    else:
        ux = np.zeros_like(u)
    v = recover_v0(ux, ygrid).v0
    return gridded_flow(mf.xi_grid, ygrid, u, v, mf.p_x, mf.U, alpha_decay, name="von_mises",
                        du0_dx=ux)
