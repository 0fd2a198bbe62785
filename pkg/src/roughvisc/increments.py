"""Discrete increments on uniform time grids.

A ``k``-parameter increment is stored as a vectorised callable over grid
indices, optionally backed by a dense table.  This keeps O(n) storage for
objects such as ``delta g`` or rough-path areas while still allowing every
pair (or triple) to be queried.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# Pair tables above this size are never materialised in one piece.
_CHUNK_FLOATS = 2_000_000


class SewingHypothesisWarning(UserWarning):
    """The coboundary of a sewing input does not look of order > 1."""


class NotCocycleError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t1: float
    n: int

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise ValueError(f"need t0 < t1, got [{self.t0}, {self.t1}]")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"need a positive integer number of intervals, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        return (self.t1 - self.t0) / self.n

    @property
    def points(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n + 1)

    @property
    def is_dyadic(self) -> bool:
        return self.n & (self.n - 1) == 0

    def time(self, i):
        return self.t0 + self.h * np.asarray(i)

    def coarsen(self, factor: int) -> "TimeGrid":
        if self.n % factor:
            raise ValueError(f"factor {factor} does not divide n={self.n}")
        return TimeGrid(self.t0, self.t1, self.n // factor)

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t0, self.t1, self.n * factor)

    def to_dict(self) -> dict:
        return {"t0": self.t0, "t1": self.t1, "n": self.n}


@dataclass
class GridPath:
    """Values of a (possibly vector or function valued) path at grid points."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.grid.n + 1:
            raise ValueError(
                f"expected {self.grid.n + 1} samples, got {self.values.shape[0]}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("path values must be finite")

    @property
    def vshape(self) -> tuple:
        return self.values.shape[1:]

    def restrict(self, factor: int) -> "GridPath":
        return GridPath(self.grid.coarsen(factor), self.values[::factor])


def _as_index(i):
    return np.asarray(i, dtype=np.intp)


class Increment2:
    """Two-parameter increment ``f_{t_i t_j}`` evaluated by grid index.

    ``fn(i, j)`` must broadcast integer index arrays and return an array of
    shape ``broadcast(i, j).shape + vshape``.
    """

    def __init__(self, grid: TimeGrid, fn: Callable, vshape: tuple):
        self.grid = grid
        self._fn = fn
        self.vshape = tuple(vshape)

    @classmethod
    def from_table(cls, grid: TimeGrid, table) -> "Increment2":
        table = np.asarray(table, dtype=float)
        if table.shape[:2] != (grid.n + 1, grid.n + 1):
            raise ValueError("table must be (n+1, n+1, ...)")
        return cls(grid, lambda i, j: table[i, j], table.shape[2:])

    @classmethod
    def zeros(cls, grid: TimeGrid, vshape=()) -> "Increment2":
        vshape = tuple(vshape)

        def fn(i, j):
            shape = np.broadcast(np.asarray(i), np.asarray(j)).shape
            return np.zeros(shape + vshape)

        return cls(grid, fn, vshape)

    def __call__(self, i, j) -> np.ndarray:
        return self._fn(_as_index(i), _as_index(j))

    def adjacent(self) -> np.ndarray:
        k = np.arange(self.grid.n)
        return self(k, k + 1)

    def table(self) -> np.ndarray:
        idx = np.arange(self.grid.n + 1)
        return self(idx[:, None], idx[None, :])

    def restrict(self, factor: int) -> "Increment2":
        return Increment2(
            self.grid.coarsen(factor),
            lambda i, j: self._fn(i * factor, j * factor),
            self.vshape,
        )

    def _combine(self, other, op):
        if isinstance(other, Increment2):
            return Increment2(self.grid, lambda i, j: op(self._fn(i, j), other._fn(i, j)), self.vshape)
        return NotImplemented

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, scalar):
        if isinstance(scalar, (Increment2, Increment3)):
            return NotImplemented
        return Increment2(self.grid, lambda i, j: scalar * self._fn(i, j), self.vshape)

    __rmul__ = __mul__

    def __neg__(self):
        return -1.0 * self


class Increment3:
    """Three-parameter increment ``h_{t_i t_u t_j}`` evaluated by grid index."""

    def __init__(self, grid: TimeGrid, fn: Callable, vshape: tuple):
        self.grid = grid
        self._fn = fn
        self.vshape = tuple(vshape)

    def __call__(self, i, u, j) -> np.ndarray:
        return self._fn(_as_index(i), _as_index(u), _as_index(j))

    def __add__(self, other):
        return Increment3(self.grid, lambda i, u, j: self._fn(i, u, j) + other._fn(i, u, j), self.vshape)

    def __sub__(self, other):
        return Increment3(self.grid, lambda i, u, j: self._fn(i, u, j) - other._fn(i, u, j), self.vshape)

    def __mul__(self, scalar):
        return Increment3(self.grid, lambda i, u, j: scalar * self._fn(i, u, j), self.vshape)

    __rmul__ = __mul__

    def __neg__(self):
        return -1.0 * self


def delta1(g: GridPath) -> Increment2:
    """``(delta g)_{st} = g_t - g_s``."""
    v = g.values
    return Increment2(g.grid, lambda i, j: v[j] - v[i], g.vshape)


def delta2(h: Increment2) -> Increment3:
    """``(delta h)_{sut} = h_{st} - h_{su} - h_{ut}``."""
    return Increment3(h.grid, lambda i, u, j: h(i, j) - h(i, u) - h(u, j), h.vshape)


def delta3(h: Increment3):
    """``(delta h)_{suvt} = h_{uvt} - h_{svt} + h_{sut} - h_{suv}``, as a plain callable."""
    return lambda s, u, v, t: h(u, v, t) - h(s, v, t) + h(s, u, t) - h(s, u, v)


def vnorm(values, ndim: int, norm: str = "euclid") -> np.ndarray:
    """Norm over the trailing ``ndim`` axes."""
    values = np.asarray(values)
    if ndim == 0:
        return np.abs(values)
    axes = tuple(range(values.ndim - ndim, values.ndim))
    if norm == "sup":
        return np.max(np.abs(values), axis=axes)
    if norm == "euclid":
        return np.sqrt(np.sum(values * values, axis=axes))
    raise ValueError(f"unknown norm {norm!r}")


@dataclass
class HolderReport:
    exponent: float
    norm_estimate: float
    argmax_pair: tuple
    estimated: bool = False
    n_pairs: int = 0


def _sampled_pairs(n: int, n_random: int, seed: int):
    # all adjacent pairs, all dyadic lags from every start, plus random pairs
    i_parts, j_parts = [np.arange(n)], [np.arange(1, n + 1)]
    lag = 2
    while lag <= n:
        s = np.arange(0, n - lag + 1)
        i_parts.append(s)
        j_parts.append(s + lag)
        lag *= 2
    rng = np.random.default_rng(seed)
    a = rng.integers(0, n + 1, size=n_random)
    b = rng.integers(0, n + 1, size=n_random)
    keep = a != b
    i_parts.append(np.minimum(a, b)[keep])
    j_parts.append(np.maximum(a, b)[keep])
    return np.concatenate(i_parts), np.concatenate(j_parts)


def holder_norm(
    f: Increment2,
    mu: float,
    *,
    norm: str = "euclid",
    n_max: int = 4096,
    n_random: int = 200_000,
    seed: int = 0,
) -> HolderReport:
    """Estimate ``sup_{s<t} |f_st| / |t-s|^mu`` over grid pairs.

    Exact (all pairs) for ``n <= n_max``; otherwise all adjacent pairs, all
    dyadic-lag pairs and ``n_random`` random pairs are used and the report is
    flagged as estimated.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    n, h = f.grid.n, f.grid.h
    vdim = len(f.vshape)
    best, arg, count = 0.0, (0, min(1, n)), 0

    def scan(i, j):
        nonlocal best, arg, count
        if i.size == 0:
            return
        vals = vnorm(f(i, j), vdim, norm) / ((j - i) * h) ** mu
        count += i.size
        k = int(np.argmax(vals))
        if vals[k] > best:
            best, arg = float(vals[k]), (int(i[k]), int(j[k]))

    if n <= n_max:
        vsize = max(1, int(np.prod(f.vshape)))
        rows = max(1, _CHUNK_FLOATS // (vsize * (n + 1)))
        idx = np.arange(n + 1)
        for start in range(0, n, rows):
            ii = idx[start:start + rows]
            I, J = np.meshgrid(ii, idx, indexing="ij")
            mask = J > I
            scan(I[mask], J[mask])
        return HolderReport(mu, best, arg, estimated=False, n_pairs=count)

    i, j = _sampled_pairs(n, n_random, seed)
    vsize = max(1, int(np.prod(f.vshape)))
    step = max(1, _CHUNK_FLOATS // vsize)
    for start in range(0, i.size, step):
        scan(i[start:start + step], j[start:start + step])
    return HolderReport(mu, best, arg, estimated=True, n_pairs=count)


def dyadic_lags(n: int, max_fraction: float = 0.5) -> np.ndarray:
    lags, lag = [], 1
    while lag <= max(1, int(n * max_fraction)):
        lags.append(lag)
        lag *= 2
    return np.array(lags)


def lag_maxima(f: Increment2, lags=None, *, norm: str = "euclid") -> tuple[np.ndarray, np.ndarray]:
    """``max_s |f_{s, s+L}|`` for each lag ``L`` (in grid steps)."""
    n = f.grid.n
    lags = dyadic_lags(n) if lags is None else np.asarray(lags)
    out = []
    for lag in lags:
        s = np.arange(0, n - lag + 1)
        out.append(float(np.max(vnorm(f(s, s + lag), len(f.vshape), norm))))
    return lags, np.array(out)


def fit_log2_slope(x, y) -> float:
    """Least-squares slope of ``log2 y`` against ``log2 x``; non-positive ``y`` are dropped."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    keep = (x > 0) & (y > 0) & np.isfinite(y)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log2(x[keep]), np.log2(y[keep]), 1)[0])


def empirical_order(f: Increment2, lags=None, *, norm: str = "euclid") -> float:
    """Hölder order of ``f`` from a log2 regression over dyadic separations."""
    lags, m = lag_maxima(f, lags, norm=norm)
    return fit_log2_slope(lags * f.grid.h, m)


def increment3_order(h: Increment3, lags=None, *, norm: str = "euclid") -> float:
    """Order of a 3-increment from midpoint triples ``(s, s+L/2, s+L)``."""
    n = h.grid.n
    if lags is None:
        lags = dyadic_lags(n)[1:]
    xs, ys = [], []
    for lag in lags:
        s = np.arange(0, n - lag + 1)
        v = vnorm(h(s, s + lag // 2, s + lag), len(h.vshape), norm)
        xs.append(lag * h.grid.h)
        ys.append(float(np.max(v)))
    return fit_log2_slope(xs, ys)


def sew_integral(g: Increment2, *, check: bool = True) -> Increment2:
    """Finest-grid sewing of ``g``: ``(delta f)_{ij} = sum_{k=i}^{j-1} g_{k,k+1}``.

    With ``check`` the Hölder order of ``delta g`` is measured and a
    :class:`SewingHypothesisWarning` is issued when it is not above one.
    """
    adj = g.adjacent()
    cum = np.concatenate([np.zeros((1,) + adj.shape[1:]), np.cumsum(adj, axis=0)])
    if check and g.grid.n >= 4:
        dg = delta2(g)
        order = increment3_order(dg)
        if np.isfinite(order) and order <= 1.0:
            warnings.warn(
                f"measured order of delta g is {order:.3f} <= 1; sewing limit may not exist",
                SewingHypothesisWarning,
                stacklevel=2,
            )
    return Increment2(g.grid, lambda i, j: cum[j] - cum[i], g.vshape)


def _all_triples(n: int):
    idx = np.arange(n + 1)
    I, U, J = np.meshgrid(idx, idx, idx, indexing="ij")
    mask = (I < U) & (U < J)
    return I[mask], U[mask], J[mask]


def _sampled_triples(n: int, n_random: int, seed: int):
    parts = [[], [], []]
    lag = 2
    while lag <= n:
        s = np.arange(0, n - lag + 1)
        for u_off in {1, lag // 2, lag - 1}:
            parts[0].append(s)
            parts[1].append(s + u_off)
            parts[2].append(s + lag)
        lag *= 2
    rng = np.random.default_rng(seed)
    r = np.sort(rng.integers(0, n + 1, size=(n_random, 3)), axis=1)
    keep = (r[:, 0] < r[:, 1]) & (r[:, 1] < r[:, 2])
    for c in range(3):
        parts[c].append(r[keep, c])
    return tuple(np.concatenate(p) for p in parts)


def triples(n: int, *, n3_max: int = 128, n_random: int = 200_000, seed: int = 0):
    """All ordered triples for small grids, a structured sample otherwise."""
    if n <= n3_max:
        return _all_triples(n) + (False,)
    return _sampled_triples(n, n_random, seed) + (True,)


def holder_norm3(
    h: Increment3,
    mu: float,
    *,
    gammas=None,
    reduce: str = "min",
    norm: str = "euclid",
    n3_max: int = 128,
    seed: int = 0,
) -> float:
    """Single-split surrogate of the 3-increment norm.

    For each split exponent ``g`` this computes
    ``sup |h_sut| / (|u-s|^g |t-u|^(mu-g))``; every such value bounds the
    infimum-over-decompositions norm from above.  ``reduce`` combines the
    candidates (``"min"`` is the tightest available bound).
    """
    if gammas is None:
        gammas = (mu / 4, mu / 2, 3 * mu / 4)
    i, u, j, _ = triples(h.grid.n, n3_max=n3_max, seed=seed)
    if i.size == 0:
        return 0.0
    dt = h.grid.h
    vals = vnorm(h(i, u, j), len(h.vshape), norm)
    a, b = (u - i) * dt, (j - u) * dt
    cands = [float(np.max(vals / (a ** g * b ** (mu - g)))) for g in gammas]
    return min(cands) if reduce == "min" else max(cands)


@dataclass
class LambdaReport:
    mu: float
    lambda_norm: float
    h_norm: float
    bound: float
    ratio: float
    ok: bool
    lam: Increment2 = field(repr=False)


def lambda_residual_check(
    h: Increment3,
    mu: float,
    *,
    slack: float = 1e-6,
    cocycle_tol: float = 1e-10,
    reduce: str = "min",
    n3_max: int = 128,
) -> LambdaReport:
    """Realise ``Lambda h`` by sewing and test ``||Lambda h||_mu <= ||h||_mu / (2^mu - 2)``.

    The preimage used is ``g_st = -h_{a s t}`` (``a`` the first grid point),
    whose coboundary is ``h`` whenever ``h`` is a cocycle.  ``Lambda h`` is
    then ``g - sew(g)``.
    """
    if mu <= 1:
        raise ValueError("mu must exceed 1")
    n = h.grid.n
    qi, qu, qv, qt = _cocycle_quadruples(n)
    scale = 1.0
    if qi.size:
        i3, u3, j3, _ = triples(n, n3_max=min(n3_max, 64))
        scale = max(1.0, float(np.max(np.abs(h(i3, u3, j3)))) if i3.size else 1.0)
        defect = float(np.max(np.abs(delta3(h)(qi, qu, qv, qt))))
        if defect > cocycle_tol * scale:
            raise NotCocycleError(f"delta h has size {defect:.3e}; input is not a cocycle")

    g = Increment2(h.grid, lambda s, t: -h(np.zeros_like(s), s, t), h.vshape)
    sewn = sew_integral(g, check=False)
    lam = g - sewn
    lam_norm = holder_norm(lam, mu).norm_estimate
    h_norm = holder_norm3(h, mu, reduce=reduce, n3_max=n3_max)
    bound = h_norm / (2.0 ** mu - 2.0)
    ratio = lam_norm / bound if bound > 0 else (0.0 if lam_norm == 0 else math.inf)
    ok = lam_norm <= bound * (1.0 + slack) + 1e-300
    return LambdaReport(mu, lam_norm, h_norm, bound, ratio, bool(ok), lam)


def _cocycle_quadruples(n: int, n_random: int = 20_000, seed: int = 1):
    if n < 3:
        e = np.array([], dtype=np.intp)
        return e, e, e, e
    rng = np.random.default_rng(seed)
    q = np.sort(rng.integers(0, n + 1, size=(n_random, 4)), axis=1)
    keep = (q[:, 0] < q[:, 1]) & (q[:, 1] < q[:, 2]) & (q[:, 2] < q[:, 3])
    q = q[keep]
    return q[:, 0], q[:, 1], q[:, 2], q[:, 3]


def dump_increment_csv(f: Increment2, path) -> None:
    """Write every pair ``i <= j`` as ``i,j,s,t,value_0,...`` (17 significant digits)."""
    n = f.grid.n
    vsize = max(1, int(np.prod(f.vshape)))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "s", "t"] + [f"value_{k}" for k in range(vsize)])
        for i in range(n + 1):
            j = np.arange(i, n + 1)
            vals = np.asarray(f(np.full_like(j, i), j)).reshape(j.size, vsize)
            for jj, row in zip(j, vals):
                w.writerow(
                    [i, int(jj), f"{f.grid.time(i):.17g}", f"{f.grid.time(jj):.17g}"]
                    + [f"{v:.17g}" for v in row]
                )
