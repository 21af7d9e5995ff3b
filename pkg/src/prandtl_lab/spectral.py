"""The shear-layer eigenvalue problem and the profile it produces.

We look for tau (Im tau < 0) and W on the line with

    (tau - z^2)^2 W' + i C ((tau - z^2) W)''' = 0,   W(-inf) = 0, W(+inf) = 1.

W never appears undifferentiated, so the problem is a second-order equation
for W' plus one quadrature; on the truncated line we impose W = W' = 0 on the
left, W' = 0 and W = 1 on the right, and drop the collocation row next to
z = 0.  The defect of that row (scaled to a jump in W'') is the eigenvalue
mismatch: it is analytic in tau and, unlike W'(z_max) under a unit
normalisation, it does not collapse to an exponentially thin Newton basin.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh_tridiagonal

from .core import (BandedMatrix, GridFn, ZGrid, complex_newton, derivative_values,
                   fit_exponent, solve_banded)
from .errors import InvalidArgument, NoConvergence, NumericFailure

DEFAULT_Z_MAX = 8.0
DEFAULT_COUNT = 1601
SEED_BOX = (-4.0, 4.0, -4.0, -0.05)


class DecayFit(NamedTuple):
    c: float
    C_prime: float
    r_squared: float


@dataclass(frozen=True)
class SpectralSolution:
    C: float
    tau: complex
    zgrid: ZGrid
    W: GridFn
    V: GridFn
    ode_residual: float
    bc_mismatch: float
    mismatch: complex
    decay_fit: DecayFit
    candidates: tuple = field(default=())

    @property
    def z_max(self):
        return self.zgrid.z_max


# --- discretization --------------------------------------------------------

def _ode_coefficients(tau, C, z):
    q = tau - z * z
    return 1j * C * q, -6j * C * z, q * q - 6j * C


def _midpoint_row(tau, C, zm, h):
    """Weights on W_{j-1..j+2} for the equation at the midpoint z_{j+1/2}."""
    a3, a2, a1 = _ode_coefficients(tau, C, zm)
    a3, a2, a1 = (np.atleast_1d(a)[:, None] for a in (a3, a2, a1))
    row = a3 * np.array([-1.0, 3.0, -3.0, 1.0]) / h ** 3
    row = row + a2 * np.array([1.0, -1.0, -1.0, 1.0]) / (2 * h * h)
    row = row + a1 * np.array([0.0, -1.0, 1.0, 0.0]) / h
    return row, a3[:, 0]


def _uniform_step(zgrid: ZGrid) -> float:
    h = np.diff(zgrid.nodes)
    if np.ptp(h) > 1e-9 * h.mean():
        raise InvalidArgument("collocation needs a uniform z-grid")
    return float(h.mean())


def solve_w_collocation(tau: complex, C: float, zgrid: ZGrid):
    """Solve the truncated problem at trial ``tau``; return (W, mismatch).

    W satisfies W(-z_max) = 0, W'(-z_max) = 0, W(z_max) = 1 (and W'(z_max) = 0)
    exactly; the mismatch is the jump in W'' left by the one collocation row
    that is not imposed.  It vanishes exactly at discrete eigenvalues.
    """
    tau = complex(tau)
    if tau.imag >= 0:
        raise InvalidArgument("trial tau must lie in the open lower half-plane")
    if C <= 0:
        raise InvalidArgument("C must be positive")
    z = zgrid.nodes
    n = z.size
    if n < 64:
        raise InvalidArgument("z-grid needs at least 64 nodes")
    h = _uniform_step(zgrid)
    drop = zgrid.center

    lower = upper = 2
    ab = np.zeros((lower + upper + 1, n), dtype=complex)
    rhs = np.zeros(n, dtype=complex)

    js = np.arange(1, n - 2)
    rows, a3 = _midpoint_row(tau, C, z[js] + 0.5 * h, h)
    # scale every row by h^3/a3 so the system is O(1) throughout
    rows = rows * (h ** 3 / a3)[:, None]
    # the lone missing row, rescaled so its defect approximates the W'' jump
    dropped = (drop, rows[drop - 1] / h ** 2)
    keep = js != drop
    js, rows = js[keep], rows[keep]
    ridx = np.arange(2, 2 + js.size)
    for k in range(4):
        cols = js - 1 + k
        ab[upper + ridx - cols, cols] = rows[:, k]
    ab[upper, 0] = 1.0
    for j, w in zip(range(3), np.array([-3.0, 4.0, -1.0]) / (2 * h)):
        ab[upper + 1 - j, j] = w
    r = n - 2
    for j, w in zip(range(n - 3, n), np.array([1.0, -4.0, 3.0]) / (2 * h)):
        ab[upper + r - j, j] = w
    ab[upper, n - 1] = 1.0
    rhs[n - 1] = 1.0

    W = solve_banded(BandedMatrix(ab, lower, upper), rhs)
    j, row = dropped
    mismatch = complex(row @ W[j - 1:j + 3])
    return GridFn(zgrid, W), mismatch


def w_residual(W: GridFn, tau: complex, C: float) -> GridFn:
    """Pointwise residual of the W-equation at interior nodes (zero at the ends).

    Uses the generic second-order stencils of :mod:`core`, not the collocation
    rows, so it is an independent check of a computed profile.
    """
    z = W.grid.nodes
    if z.size < 64:
        raise InvalidArgument("z-grid needs at least 64 nodes")
    a3, a2, a1 = _ode_coefficients(complex(tau), C, z)
    Wv = W.values
    res = (a3 * derivative_values(Wv, z, 3) + a2 * derivative_values(Wv, z, 2)
           + a1 * derivative_values(Wv, z, 1))
    res[:2] = 0.0
    res[-2:] = 0.0
    return GridFn(W.grid, res)


def residual_scale(tau: complex, z_max: float, W: GridFn) -> float:
    """Scale used to judge eigen-residuals: max(|tau|, z_max^2)^2 * ||W'||_sup."""
    dW = derivative_values(W.values, W.grid.nodes, 1)
    return max(abs(tau), z_max ** 2) ** 2 * float(np.max(np.abs(dW)))


# --- auxiliary eigenproblem -------------------------------------------------

class AuxiliaryEigen(NamedTuple):
    alphas: np.ndarray
    vectors: np.ndarray
    z: np.ndarray
    residuals: np.ndarray


def auxiliary_eigenproblem(C: float, z_max: float = 8.0, count: int = 4000,
                           n_keep: int = 4) -> AuxiliaryEigen:
    """Decaying eigenpairs of u''/(1+z^2) + 6z u'/(1+z^2)^2 + 6u/(1+z^2)^2 = (alpha/C) u.

    The operator is ((1+z^2)^3 u')'/(1+z^2)^4 + 6u/(1+z^2)^2, symmetric in the
    (1+z^2)^4 weight, so a conservative three-point scheme with Dirichlet ends
    gives a symmetric tridiagonal pencil.  Only bound states (positive alpha,
    negligible boundary amplitude) are returned; the negative eigenvalues are
    the truncated continuum and carry no seeding information.
    """
    if C <= 0:
        raise InvalidArgument("C must be positive")
    z = np.linspace(-z_max, z_max, count + 2)
    h = z[1] - z[0]
    zi = z[1:-1]
    zh = 0.5 * (z[1:] + z[:-1])
    p = (1 + zh ** 2) ** 3
    diag = -(p[:-1] + p[1:]) / h ** 2 + 6 * (1 + zi ** 2) ** 2
    off = p[1:-1] / h ** 2
    s = (1 + zi ** 2) ** -2.0
    dsym = C * diag * s * s
    esym = C * off * s[:-1] * s[1:]
    vals, vecs = eigh_tridiagonal(dsym, esym)
    order = np.argsort(np.abs(vals))
    keep_a, keep_v, keep_r = [], [], []
    for k in order:
        a = vals[k]
        if a <= 1e-8 * C:
            continue
        u = vecs[:, k] * s  # back to the unweighted eigenfunction
        u = u / np.max(np.abs(u))
        if max(abs(u[0]), abs(u[-1])) > 1e-6:
            continue
        # discrete eigen-residual of the original (non-symmetrized) pencil
        Au = np.empty_like(u)
        Au[:] = diag * u
        Au[:-1] += off * u[1:]
        Au[1:] += off * u[:-1]
        res = np.max(np.abs(C * Au / (1 + zi ** 2) ** 4 - a * u))
        keep_a.append(a)
        keep_v.append(u)
        keep_r.append(res)
        if len(keep_a) == n_keep:
            break
    vectors = np.array(keep_v).T if keep_v else np.zeros((zi.size, 0))
    return AuxiliaryEigen(np.array(keep_a), vectors, zi, np.array(keep_r))


def tau_seeds_from_auxiliary(alphas) -> list:
    """tau^2 = i*alpha under z -> sqrt(-tau) s; keep the lower half-plane root."""
    seeds = []
    for a in np.atleast_1d(alphas):
        t = np.sqrt(1j * complex(a))
        seeds.append(t if t.imag < 0 else -t)
    return seeds


# --- profile post-processing ------------------------------------------------

def build_V(sol_or_W, tau: complex | None = None) -> GridFn:
    """V(z) = (tau - z^2)(W(z) - H(z)) with H(0) = 1."""
    if isinstance(sol_or_W, SpectralSolution):
        W, tau = sol_or_W.W, sol_or_W.tau
    else:
        W = sol_or_W
    z = W.grid.nodes
    H = (z >= 0).astype(float)
    return GridFn(W.grid, (tau - z * z) * (W.values - H))


def _tail_fit(z2, mags, floor):
    keep = mags > floor
    if keep.sum() < 3:
        return None
    fit = fit_exponent(z2[keep], np.log(mags[keep]))
    return DecayFit(-fit.rate, float(np.exp(fit.intercept)), fit.r_squared)


def verify_gaussian_decay(sol_or_W, noise_floor: float = 1e-11) -> DecayFit:
    """Fit log|W| (left) and log|W-1| (right) against -c z^2.

    Windows are 0.3..0.8 z_max on each side; samples at or below the noise
    floor are dropped; derivative tails use a floor raised to the
    finite-difference roundoff level.  |W'| and |W''| are fitted the same way as a decay check.
    ``c`` and ``C_prime`` come from the weaker of the two value tails (the
    derivative fits carry polynomial prefactors that bias c); ``r_squared`` is
    the worst over all six fits.  A tail too short to fit gives c = 0.
    """
    W = sol_or_W.W if isinstance(sol_or_W, SpectralSolution) else sol_or_W
    z = W.grid.nodes
    zm = z[-1]
    Wv = W.values
    dW = derivative_values(Wv, z, 1)
    d2W = derivative_values(Wv, z, 2)
    left = (z >= -0.8 * zm) & (z <= -0.3 * zm)
    right = (z >= 0.3 * zm) & (z <= 0.8 * zm)
    # finite differences of O(1) values carry roundoff ~ eps_mach / h^k
    h = float(np.min(np.diff(z)))
    fl = [max(noise_floor, 100 * np.finfo(float).eps / h ** k) for k in (0, 1, 2)]
    fits = []
    for mask, g, floor in ((left, Wv, fl[0]), (right, Wv - 1.0, fl[0]), (left, dW, fl[1]),
                           (right, dW, fl[1]), (left, d2W, fl[2]), (right, d2W, fl[2])):
        zz, gg = z[mask], np.abs(g[mask])
        order = np.argsort(zz * zz)
        f = _tail_fit((zz * zz)[order], gg[order], floor)
        if f is None:
            return DecayFit(0.0, 0.0, 0.0)
        fits.append(f)
    value = min(fits[:2], key=lambda f: f.c)
    return DecayFit(value.c, value.C_prime, min(f.r_squared for f in fits))


# --- eigenvalue search -------------------------------------------------------

def mismatch_landscape(C, zgrid, box=SEED_BOX, cells=12, workers=1):
    re = np.linspace(box[0], box[1], cells)
    im = np.linspace(box[2], box[3], cells)
    taus = [complex(a, b) for b in im for a in re]

    def one(t):
        try:
            return abs(solve_w_collocation(t, C, zgrid)[1])
        except NumericFailure:
            return np.inf

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            vals = list(pool.map(one, taus))
    else:
        vals = [one(t) for t in taus]
    return np.array(taus), np.array(vals)


def _accept(tau, C, zgrid, tol, residual_tol):
    W, mis = solve_w_collocation(tau, C, zgrid)
    res = w_residual(W, tau, C)
    rel = float(np.max(np.abs(res.values))) / residual_scale(tau, zgrid.z_max, W)
    fit = verify_gaussian_decay(W)
    ok = tau.imag < 0 and abs(mis) <= 10 * tol and rel <= residual_tol and fit.c > 0
    return ok, W, mis, rel, fit


def find_tau(C: float, seeds=None, zgrid: ZGrid | None = None, tol: float = 1e-10,
             max_iter: int = 40, workers: int = 1,
             residual_tol: float = 1e-5) -> SpectralSolution:
    """Newton on the collocation mismatch from several seeds.

    Seeds default to the auxiliary-problem map plus the five best cells of a
    12x12 scan of the seed box.  Accepted roots must lie in the lower half-plane
    and show Gaussian tails; among several the most unstable (largest |Im tau|)
    is returned with every accepted root listed in ``candidates``.
    ``ode_residual`` is stored relative to :func:`residual_scale`.
    """
    if C <= 0:
        raise InvalidArgument("C must be positive")
    zgrid = zgrid or ZGrid.uniform(DEFAULT_Z_MAX, DEFAULT_COUNT)
    if seeds is None:
        seeds = tau_seeds_from_auxiliary(auxiliary_eigenproblem(C).alphas)
        taus, vals = mismatch_landscape(C, zgrid, workers=workers)
        finite = np.isfinite(vals)
        seeds += list(taus[finite][np.argsort(vals[finite])[:5]])
    else:
        seeds = [complex(s) for s in seeds]
        if not seeds or any(s.imag >= 0 for s in seeds):
            raise InvalidArgument("seeds must lie in the open lower half-plane")

    def mismatch(t):
        if t.imag >= 0:
            return complex(1e6)
        return solve_w_collocation(t, C, zgrid)[1]

    found = []
    for s in seeds:
        try:
            t = complex_newton(mismatch, s, tol=tol, max_iter=max_iter)
        except (NoConvergence, NumericFailure):
            continue
        if t.imag >= 0 or any(abs(t - f[0]) < 1e-7 * (1 + abs(t)) for f in found):
            continue
        ok, W, mis, interior, fit = _accept(t, C, zgrid, tol, residual_tol)
        if ok:
            found.append((t, W, mis, interior, fit))
    if not found:
        taus, vals = mismatch_landscape(C, zgrid, workers=workers)
        raise NoConvergence("no seed converged to an admissible tau",
                            landscape={"tau": taus, "abs_mismatch": vals})
    found.sort(key=lambda f: -abs(f[0].imag))
    tau, W, mis, interior, fit = found[0]
    bc = max(abs(W.values[0]), abs(W.values[-1] - 1.0),
             abs(derivative_values(W.values, zgrid.nodes, 1)[[0, -1]]).max())
    return SpectralSolution(C=float(C), tau=tau, zgrid=zgrid, W=W, V=build_V(W, tau),
                            ode_residual=float(interior), bc_mismatch=float(bc),
                            mismatch=mis, decay_fit=fit,
                            candidates=tuple(f[0] for f in found))


def refine_check(sol: SpectralSolution):
    """Interior residual of ``sol.W`` cubically interpolated onto a 2x finer grid.

    Returns (max residual, scale) with scale as in :func:`residual_scale`.
    """
    z = sol.zgrid.nodes
    fine = ZGrid.uniform(sol.z_max, 2 * (z.size - 1) + 1)
    spline = CubicSpline(z, sol.W.values)
    Wf = GridFn(fine, spline(fine.nodes))
    res = w_residual(Wf, sol.tau, sol.C)
    return float(np.max(np.abs(res.values))), residual_scale(sol.tau, sol.z_max, Wf)


# --- derivatives of the smooth part for the quasimode ----------------------

@dataclass(frozen=True)
class ShearProfile:
    """Cubic interpolants of Phi = (tau - z^2) W and its first three derivatives.

    V^(k)(z) = Phi^(k)(z) - H(z) d^k(tau - z^2)/dz^k; Phi''' is taken from the
    equation itself so V satisfies its own ODE up to interpolation error.
    """

    tau: complex
    C: float
    z_max: float
    splines: tuple

    @classmethod
    def from_solution(cls, sol: SpectralSolution) -> "ShearProfile":
        z = sol.zgrid.nodes
        W = sol.W.values
        W1 = derivative_values(W, z, 1)
        W2 = derivative_values(W, z, 2)
        a3, a2, a1 = _ode_coefficients(sol.tau, sol.C, z)
        W3 = -(a2 * W2 + a1 * W1) / a3
        q = sol.tau - z * z
        phi = [q * W,
               -2 * z * W + q * W1,
               -2 * W - 4 * z * W1 + q * W2,
               -6 * W1 - 6 * z * W2 + q * W3]
        return cls(sol.tau, sol.C, sol.z_max, tuple(CubicSpline(z, p) for p in phi))

    def phi(self, z, k: int = 0):
        """k-th derivative of the smooth part; zero-extended beyond the grid
        except for the algebraic tail on the right."""
        z = np.asarray(z, dtype=float)
        out = np.asarray(self.splines[k](np.clip(z, -self.z_max, self.z_max)), dtype=complex)
        right = z > self.z_max
        if np.any(right):
            zr = z[right]
            out[right] = [self.tau - zr * zr, -2 * zr, -2.0 + 0 * zr, 0 * zr][k]
        out[z < -self.z_max] = 0.0
        return out

    def V(self, z, k: int = 0):
        z = np.asarray(z, dtype=float)
        poly = [self.tau - z * z, -2 * z, -2.0 + 0 * z, 0 * z][k]
        return self.phi(z, k) - np.where(z >= 0, poly, 0.0)


# --- cache -------------------------------------------------------------------

def cache_key(C, z_max, n, tol) -> str:
    return f"C{C:.12g}_z{z_max:.6g}_n{n}_tol{tol:.1e}"


def save_solution(sol: SpectralSolution, path, tol: float) -> None:
    data = {
        "C": sol.C, "tau_re": sol.tau.real, "tau_im": sol.tau.imag,
        "z_max": sol.z_max, "n": sol.zgrid.count, "tol": tol,
        "W_re": sol.W.values.real.tolist(), "W_im": sol.W.values.imag.tolist(),
        "residual": sol.ode_residual, "bc_mismatch": sol.bc_mismatch,
        "mismatch": [sol.mismatch.real, sol.mismatch.imag],
        "decay_fit": sol.decay_fit._asdict(),
        "candidates": [[c.real, c.imag] for c in sol.candidates],
    }
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True))


def load_solution(path) -> SpectralSolution:
    d = json.loads(Path(path).read_text())
    zgrid = ZGrid.uniform(d["z_max"], d["n"])
    tau = complex(d["tau_re"], d["tau_im"])
    W = GridFn(zgrid, np.array(d["W_re"]) + 1j * np.array(d["W_im"]))
    return SpectralSolution(C=d["C"], tau=tau, zgrid=zgrid, W=W, V=build_V(W, tau),
                            ode_residual=d["residual"], bc_mismatch=d["bc_mismatch"],
                            mismatch=complex(*d["mismatch"]),
                            decay_fit=DecayFit(**d["decay_fit"]),
                            candidates=tuple(complex(*c) for c in d["candidates"]))


def solve_cached(C, cache_dir=None, z_max=DEFAULT_Z_MAX, n=DEFAULT_COUNT, tol=1e-10,
                 workers=1) -> SpectralSolution:
    if cache_dir is None:
        return find_tau(C, zgrid=ZGrid.uniform(z_max, n), tol=tol, workers=workers)
    path = Path(cache_dir) / f"spectral_{cache_key(C, z_max, n, tol)}.json"
    if path.exists():
        return load_solution(path)
    sol = find_tau(C, zgrid=ZGrid.uniform(z_max, n), tol=tol, workers=workers)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_solution(sol, path, tol)
    return sol
