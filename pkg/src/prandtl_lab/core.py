"""Grids, grid functions and the small numerical kernels everything else leans on.

All derivative stencils are built with Fornberg's recursion so the same code
serves uniform and stretched grids.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import lapack

from .errors import InvalidArgument, NoConvergence, NumericFailure


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = _frozen(self.nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise InvalidArgument("grid needs at least two nodes")
        if not np.all(np.isfinite(nodes)) or np.any(np.diff(nodes) <= 0):
            raise InvalidArgument("grid nodes must be finite and strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @property
    def count(self) -> int:
        return self.nodes.size

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.nodes)

    def __len__(self):
        return self.nodes.size


@dataclass(frozen=True)
class YGrid(Grid):
    """Wall-normal grid on [0, y_max]."""

    def __post_init__(self):
        super().__post_init__()
        if self.nodes[0] != 0.0:
            raise InvalidArgument("YGrid must start at y = 0")

    @property
    def y_max(self) -> float:
        return float(self.nodes[-1])


@dataclass(frozen=True)
class ZGrid(Grid):
    """Symmetric shear-layer grid on [-z_max, z_max] containing z = 0."""

    def __post_init__(self):
        super().__post_init__()
        n = self.nodes
        if not np.allclose(n, -n[::-1], atol=1e-13 * max(1.0, abs(n[-1]))):
            raise InvalidArgument("ZGrid must be symmetric about 0")
        if not np.any(n == 0.0):
            raise InvalidArgument("ZGrid must contain z = 0 as a node")

    @property
    def z_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def center(self) -> int:
        return int(np.flatnonzero(self.nodes == 0.0)[0])

    @classmethod
    def uniform(cls, z_max: float, count: int) -> "ZGrid":
        if count % 2 == 0:
            raise InvalidArgument("a uniform ZGrid needs an odd node count")
        nodes = np.linspace(-z_max, z_max, count)
        nodes[count // 2] = 0.0
        nodes[count // 2 + 1:] = -nodes[: count // 2][::-1]
        return cls(nodes)


@dataclass(frozen=True)
class XGrid(Grid):
    """Marching grid on [0, X]."""

    def __post_init__(self):
        super().__post_init__()
        if self.nodes[0] != 0.0:
            raise InvalidArgument("XGrid must start at x = 0")

    @property
    def X(self) -> float:
        return float(self.nodes[-1])

    @classmethod
    def uniform(cls, X: float, count: int) -> "XGrid":
        return cls(np.linspace(0.0, X, count))


@dataclass(frozen=True)
class GridFn:
    """Complex samples of a function on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values, dtype=complex)
        if values.shape != (self.grid.count,):
            raise InvalidArgument("values must have one entry per grid node")
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("grid function values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def nodes(self):
        return self.grid.nodes

    def __add__(self, other):
        return GridFn(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return GridFn(self.grid, self.values - _vals(other))

    def __mul__(self, c):
        return GridFn(self.grid, self.values * _vals(c))

    __rmul__ = __mul__

    def __neg__(self):
        return GridFn(self.grid, -self.values)


def _vals(other):
    return other.values if isinstance(other, GridFn) else other


@dataclass(frozen=True)
class WeightSpec:
    alpha: float = 0.0
    s: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise InvalidArgument("weight alpha must be non-negative")
        if self.s not in (0, 1, 2):
            raise InvalidArgument("derivative order s must be 0, 1 or 2")


# --- grids -----------------------------------------------------------------

def build_stretched_grid(y_max: float, count: int, stretch: float) -> YGrid:
    """Wall-clustered grid y = y_max sinh(stretch*zeta)/sinh(stretch)."""
    if not y_max > 0:
        raise InvalidArgument("y_max must be positive")
    if count < 16:
        raise InvalidArgument("count must be at least 16")
    if stretch < 0:
        raise InvalidArgument("stretch must be non-negative")
    zeta = np.linspace(0.0, 1.0, count)
    if stretch == 0:
        nodes = y_max * zeta
    else:
        nodes = y_max * np.sinh(stretch * zeta) / np.sinh(stretch)
    nodes[0], nodes[-1] = 0.0, y_max
    return YGrid(nodes)


def layered_grid(y_max: float, h_wall: float, h_far: float, focus: float | None = None,
                 h_focus: float | None = None, focus_width: float = 0.0,
                 growth: float = 0.08) -> YGrid:
    """Grid whose local spacing follows a smooth target h(y).

    The spacing is ``h_wall`` at the wall, ``h_focus`` on
    ``|y - focus| <= focus_width`` and relaxes geometrically (rate ``growth``
    per unit spacing) to ``h_far``.  When ``focus`` is given it is an exact node.
    """
    if not (y_max > 0 and 0 < h_wall <= h_far):
        raise InvalidArgument("need y_max > 0 and 0 < h_wall <= h_far")
    fine = np.linspace(0.0, y_max, 200001)

    def relax(dist, h0):
        return np.minimum(h_far, h0 + growth * np.maximum(dist, 0.0))

    h = relax(fine, h_wall)
    if focus is not None:
        if not 0 < focus < y_max:
            raise InvalidArgument("focus must lie inside (0, y_max)")
        h = np.minimum(h, relax(np.abs(fine - focus) - focus_width, h_focus or h_wall))
    density = cumulative_trapezoid(1.0 / h, fine, initial=0.0)

    def segment(lo, hi):
        mask = (fine >= lo) & (fine <= hi)
        d, y = density[mask], fine[mask]
        n = max(int(np.ceil(d[-1] - d[0])), 2)
        return np.interp(np.linspace(d[0], d[-1], n + 1), d, y)

    if focus is None:
        nodes = segment(0.0, y_max)
    else:
        left, right = segment(0.0, focus), segment(focus, y_max)
        left[-1] = focus
        nodes = np.concatenate([left, right[1:]])
    nodes[0], nodes[-1] = 0.0, y_max
    return YGrid(nodes)


# --- differentiation -------------------------------------------------------

def fornberg_weights(x0: float, xs: np.ndarray, m: int) -> np.ndarray:
    """Weights for the m-th derivative at x0 from samples at xs (Fornberg 1988)."""
    n = len(xs)
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, xs[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, xs[i] - x0
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


_STENCIL = {1: 3, 2: 3, 3: 5}
_ONE_SIDED = {1: 3, 2: 4, 3: 5}


def diff_matrix(nodes: np.ndarray, order: int) -> sp.csr_matrix:
    """Sparse second-order finite-difference matrix for d^order/dy^order.

    Interior rows are centred (3 points for orders 1-2, 5 points for order 3);
    rows too close to an end fall back to one-sided stencils of equal order.
    """
    if order not in _STENCIL:
        raise InvalidArgument("derivative order must be 1, 2 or 3")
    nodes = np.asarray(nodes, dtype=float)
    n = nodes.size
    if n < order + 2:
        raise InvalidArgument(f"order-{order} derivative needs at least {order + 2} nodes")
    width, half = _STENCIL[order], _STENCIL[order] // 2
    side = min(_ONE_SIDED[order], n)
    rows, cols, vals = [], [], []
    for j in range(n):
        if half <= j < n - half:
            idx = np.arange(j - half, j + half + 1)
        elif j < half:
            idx = np.arange(0, side)
        else:
            idx = np.arange(n - side, n)
        w = fornberg_weights(nodes[j], nodes[idx], order)
        rows.extend([j] * len(idx))
        cols.extend(idx)
        vals.extend(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def derivative(f: GridFn, order: int) -> GridFn:
    D = diff_matrix(f.grid.nodes, order)
    return GridFn(f.grid, D @ f.values)


def derivative_values(values: np.ndarray, nodes: np.ndarray, order: int) -> np.ndarray:
    """Array-level twin of :func:`derivative` (works on 2-D arrays along axis 0)."""
    return diff_matrix(nodes, order) @ values


def cumulative_integral(f: GridFn) -> GridFn:
    """F(y_j) = int_0^{y_j} f dy' by the composite trapezoid rule."""
    return GridFn(f.grid, cumulative_trapezoid(f.values, f.grid.nodes, initial=0.0))


def cumulative_matrix(nodes: np.ndarray) -> np.ndarray:
    """Dense lower-triangular matrix Q with (Q f)_j = trapezoid integral to y_j."""
    h = np.diff(nodes)
    n = nodes.size
    Q = np.zeros((n, n))
    for j in range(1, n):
        Q[j, :j] += 0.5 * h[:j]
        Q[j, 1:j + 1] += 0.5 * h[:j]
    return Q


# --- norms -----------------------------------------------------------------

class SupNorm(NamedTuple):
    value: float
    tail_warning: bool

    def __float__(self):
        return self.value


def weighted_sup_norm(f: GridFn, w: WeightSpec) -> SupNorm:
    """max_{j<=s} max_nodes |d^j/dy^j (e^{alpha y} f)|, sampled on nodes only.

    ``tail_warning`` is set when the largest weighted value sits on the last
    node, i.e. the truncation height is not resolving the decay.
    """
    y = f.grid.nodes
    g = np.exp(w.alpha * y) * f.values
    best, where = -1.0, 0
    for j in range(w.s + 1):
        gj = g if j == 0 else derivative_values(g, y, j)
        mags = np.abs(gj)
        k = int(np.argmax(mags))
        if mags[k] > best:
            best, where = float(mags[k]), k
    return SupNorm(best, bool(best > 0 and where == y.size - 1))


# --- banded linear algebra -------------------------------------------------

@dataclass(frozen=True)
class BandedMatrix:
    """LAPACK band storage: ab[u + i - j, j] = A[i, j]."""

    ab: np.ndarray
    lower: int
    upper: int

    def __post_init__(self):
        ab = np.array(self.ab, dtype=complex)
        if ab.shape[0] != self.lower + self.upper + 1:
            raise InvalidArgument("band storage height must be lower + upper + 1")
        object.__setattr__(self, "ab", ab)

    @property
    def n(self) -> int:
        return self.ab.shape[1]

    @classmethod
    def from_dense(cls, A, lower: int, upper: int) -> "BandedMatrix":
        A = np.asarray(A, dtype=complex)
        n = A.shape[0]
        ab = np.zeros((lower + upper + 1, n), dtype=complex)
        for i in range(n):
            for j in range(max(0, i - lower), min(n, i + upper + 1)):
                ab[upper + i - j, j] = A[i, j]
        return cls(ab, lower, upper)

    def to_dense(self) -> np.ndarray:
        n, u = self.n, self.upper
        A = np.zeros((n, n), dtype=complex)
        for i in range(n):
            for j in range(max(0, i - self.lower), min(n, i + u + 1)):
                A[i, j] = self.ab[u + i - j, j]
        return A

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        n, u = self.n, self.upper
        y = np.zeros(n, dtype=complex)
        for d in range(-self.lower, u + 1):
            # diagonal d holds A[i, i + d]
            row = self.ab[u - d]
            if d >= 0:
                y[: n - d] += row[d:] * x[d:]
            else:
                y[-d:] += row[: n + d] * x[: n + d]
        return y


def _band_lu(m: BandedMatrix):
    kl, ku = m.lower, m.upper
    ab = np.zeros((2 * kl + ku + 1, m.n), dtype=complex)
    ab[kl:] = m.ab
    lu, piv, info = lapack.zgbtrf(ab, kl, ku)
    return lu, piv, info


def _lu_solve(lu, piv, kl, ku, b):
    x, _ = lapack.zgbtrs(lu, kl, ku, b, piv)
    return x


def banded_condition(m: BandedMatrix) -> float:
    """1-norm condition number (dense evaluation; only used on the failure path)."""
    with np.errstate(all="ignore"):
        try:
            return float(np.linalg.cond(m.to_dense(), 1))
        except np.linalg.LinAlgError:
            return float("inf")


def solve_banded(matrix: BandedMatrix, rhs, max_condition: float = 1e13):
    """Solve a banded complex system; raise NumericFailure when singular to tolerance.

    Accepts a GridFn (returned as a GridFn on the same grid) or a plain array.
    """
    b = rhs.values if isinstance(rhs, GridFn) else np.asarray(rhs, dtype=complex)
    if b.shape != (matrix.n,):
        raise InvalidArgument("rhs length must match the matrix")
    lu, piv, info = _band_lu(matrix)
    if info > 0:
        raise NumericFailure("banded matrix is exactly singular", condition=np.inf)
    x = _lu_solve(lu, piv, matrix.lower, matrix.upper, b.astype(complex))
    diag = np.abs(lu[matrix.lower + matrix.upper])
    if diag.min() < 1e-10 * diag.max():
        cond = banded_condition(matrix)
        if cond > max_condition:
            raise NumericFailure(f"banded matrix singular to tolerance (cond ~ {cond:.2e})",
                                 condition=cond)
    if isinstance(rhs, GridFn):
        return GridFn(rhs.grid, x)
    return x


# --- root finding and fitting ----------------------------------------------

def complex_newton(residual: Callable[[complex], complex], seed: complex, tol: float = 1e-10,
                   max_iter: int = 50, step_scale: float = 1e-6) -> complex:
    """Newton iteration on a scalar analytic function of one complex variable.

    The derivative is a central difference with step ``step_scale*(1+|tau|)``
    along the real axis (enough for an analytic residual).
    """
    tau = complex(seed)
    f = complex(residual(tau))
    best, best_f = tau, abs(f)
    for _ in range(max_iter):
        if abs(f) <= tol:
            return tau
        h = step_scale * (1.0 + abs(tau))
        df = (complex(residual(tau + h)) - complex(residual(tau - h))) / (2 * h)
        if not np.isfinite(df) or abs(df) < 1e-14 * max(abs(f), 1e-300) or df == 0:
            raise NoConvergence("Newton derivative vanished", best=best, residual=best_f)
        tau = tau - f / df
        f = complex(residual(tau))
        if not np.isfinite(f):
            raise NoConvergence("residual became non-finite", best=best, residual=best_f)
        if abs(f) < best_f:
            best, best_f = tau, abs(f)
    if abs(f) <= tol:
        return tau
    raise NoConvergence(f"no convergence in {max_iter} iterations", best=best, residual=best_f)


class ExponentFit(NamedTuple):
    rate: float
    intercept: float
    r_squared: float


def fit_exponent(xs, log_values) -> ExponentFit:
    """Least-squares line log_values ~ rate*xs + intercept."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(log_values, dtype=float)
    if xs.size < 3 or ys.size != xs.size:
        raise InvalidArgument("need at least 3 paired samples")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise InvalidArgument("samples must be finite")
    if np.any(np.diff(xs) <= 0):
        raise InvalidArgument("xs must be strictly increasing")
    rate, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (rate * xs + intercept)
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0
    else:
        r2 = float(np.clip(1.0 - np.sum(resid ** 2) / ss_tot, 0.0, 1.0))
    return ExponentFit(float(rate), float(intercept), r2)
