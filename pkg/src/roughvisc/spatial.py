"""Uniform spatial grids: central differences and C^1 cubic interpolation.

Field arrays carry the flattened spatial-point axis ``P`` followed by
``ncomp`` trailing component axes, i.e. shape ``(*lead, P, *comp)``.
Derivative axes are appended last.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

_SNAP = 1e-10


class DomainError(ValueError):
    """Evaluation requested outside the region where data are valid."""


@dataclass(frozen=True)
class SpaceGrid:
    lower: tuple
    upper: tuple
    cells: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        if len(cells) == 1 and len(lo) > 1:
            cells = cells * len(lo)
        if not (len(lo) == len(hi) == len(cells)):
            raise ValueError("lower, upper and cells must have equal length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("need lower < upper in every direction")
        if any(c < 2 for c in cells):
            raise ValueError("need at least two cells per direction")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def interval(cls, a: float, b: float, cells: int) -> "SpaceGrid":
        return cls((a,), (b,), (cells,))

    @property
    def m(self) -> int:
        return len(self.cells)

    @property
    def nodes(self) -> tuple:
        return tuple(c + 1 for c in self.cells)

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.cells)

    def axes(self) -> list:
        return [np.linspace(a, b, c + 1) for a, b, c in zip(self.lower, self.upper, self.cells)]

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def padded(self, extra: int) -> "SpaceGrid":
        """Same spacing, ``extra`` more cells on every side."""
        h = self.spacing
        return SpaceGrid(
            tuple(np.array(self.lower) - extra * h),
            tuple(np.array(self.upper) + extra * h),
            tuple(c + 2 * extra for c in self.cells),
        )

    def inflated(self, factor: float) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = np.array(self.lower), np.array(self.upper)
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * factor
        return mid - half, mid + half

    def contains(self, pts, margin: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts)
        lo = np.array(self.lower) + margin
        hi = np.array(self.upper) - margin
        return np.all((pts >= lo - 1e-12) & (pts <= hi + 1e-12), axis=-1)

    def interior_mask(self, width: int = 1) -> np.ndarray:
        idx = np.meshgrid(*[np.arange(n) for n in self.nodes], indexing="ij")
        ok = np.ones(self.nodes, dtype=bool)
        for k, n in enumerate(self.nodes):
            ok &= (idx[k] >= width) & (idx[k] <= n - 1 - width)
        return ok.ravel()

    def fractional_index(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, self.m)
        s = (pts - np.array(self.lower)) / self.spacing
        r = np.round(s)
        return np.where(np.abs(s - r) < _SNAP, r, s)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "cells": list(self.cells)}


def embed_index(inner: SpaceGrid, outer: SpaceGrid) -> np.ndarray:
    """Flat indices in ``outer`` of the nodes of ``inner`` (same spacing, aligned grids)."""
    offset = np.rint((np.array(inner.lower) - np.array(outer.lower)) / outer.spacing).astype(int)
    if not np.allclose(outer.spacing, inner.spacing) or np.any(offset < 0) or np.any(
        offset + np.array(inner.nodes) > np.array(outer.nodes)
    ):
        raise ValueError("inner grid is not an aligned sub-grid of the outer grid")
    idx = np.meshgrid(*[np.arange(n) + o for n, o in zip(inner.nodes, offset)], indexing="ij")
    return np.ravel_multi_index(tuple(i.ravel() for i in idx), outer.nodes)


def _to_nodes(f, space: SpaceGrid, ncomp: int):
    f = np.asarray(f, dtype=float)
    paxis = f.ndim - 1 - ncomp
    if f.shape[paxis] != space.size:
        raise ValueError(f"field has {f.shape[paxis]} points, grid has {space.size}")
    shape = f.shape[:paxis] + space.nodes + f.shape[paxis + 1:]
    return f.reshape(shape), paxis


def _central(g, axis: int, h: float):
    out = np.full_like(g, np.nan)
    src = [slice(None)] * g.ndim
    lo, hi, mid = list(src), list(src), list(src)
    hi[axis], lo[axis], mid[axis] = slice(2, None), slice(None, -2), slice(1, -1)
    out[tuple(mid)] = (g[tuple(hi)] - g[tuple(lo)]) / (2 * h)
    return out


def gradient(f, space: SpaceGrid, ncomp: int = 0) -> np.ndarray:
    """Second-order central differences; NaN on boundary nodes."""
    g, paxis = _to_nodes(f, space, ncomp)
    h = space.spacing
    parts = [_central(g, paxis + k, h[k]) for k in range(space.m)]
    d = np.stack(parts, axis=-1)
    return d.reshape(np.asarray(f).shape + (space.m,))


def hessian(f, space: SpaceGrid, ncomp: int = 0) -> np.ndarray:
    """Central-difference Hessian (three-point second differences on the diagonal)."""
    g, paxis = _to_nodes(f, space, ncomp)
    h = space.spacing
    m = space.m
    f = np.asarray(f)
    out = np.empty(f.shape + (m, m))
    view = out.reshape(g.shape + (m, m))
    for a in range(m):
        ax = paxis + a
        sec = np.full_like(g, np.nan)
        sl = [slice(None)] * g.ndim
        c, p, q = list(sl), list(sl), list(sl)
        c[ax], p[ax], q[ax] = slice(1, -1), slice(2, None), slice(None, -2)
        sec[tuple(c)] = (g[tuple(p)] - 2 * g[tuple(c)] + g[tuple(q)]) / h[a] ** 2
        view[..., a, a] = sec
        da = _central(g, ax, h[a])
        for b in range(a + 1, m):
            dab = _central(da, paxis + b, h[b])
            view[..., a, b] = dab
            view[..., b, a] = dab
    return out


def _keys_weights(u):
    u2, u3 = u * u, u * u * u
    return (
        0.5 * (-u3 + 2 * u2 - u),
        0.5 * (3 * u3 - 5 * u2 + 2),
        0.5 * (-3 * u3 + 4 * u2 + u),
        0.5 * (u3 - u2),
    )


class _Stencil:
    """Flattened node indices and Keys weights of a batch of query points."""

    def __init__(self, space: SpaceGrid, pts):
        s = space.fractional_index(pts)
        nodes = np.array(space.nodes)
        self.outside = np.any((s < -_SNAP) | (s > nodes - 1 + _SNAP), axis=-1)
        s = np.clip(s, 0, nodes - 1)
        base = np.minimum(np.floor(s).astype(np.intp), nodes - 2)
        u = s - base
        Q, m = s.shape
        # C-order strides of the node array
        strides = np.append(np.cumprod(nodes[::-1])[::-1][1:], 1)
        idx = np.zeros((Q, 1), dtype=np.intp)
        w = np.ones((Q, 1))
        for k in range(m):
            wk = np.stack(_keys_weights(u[:, k]), axis=1)  # (Q, 4)
            ik = np.clip(base[:, k, None] + np.arange(-1, 3), 0, nodes[k] - 1) * strides[k]
            idx = (idx[:, :, None] + ik[:, None, :]).reshape(Q, -1)
            w = (w[:, :, None] * wk[:, None, :]).reshape(Q, -1)
        self.idx, self.w = idx, w
        self.nz = w != 0.0

    def apply(self, flat):
        """``flat`` has shape ``(N_nodes, R)``; returns ``(Q, R)``."""
        vals = flat[self.idx]  # (Q, S, R)
        prod = np.where(self.nz[..., None], vals * self.w[..., None], 0.0)
        return prod.sum(axis=1)


def interpolate(f, space: SpaceGrid, pts, ncomp: int = 0, *, return_outside: bool = False, stencil=None):
    """Tensor-product Keys cubic (C^1, exact on quadratics) at arbitrary points.

    Queries outside the box use constant extension (clamped position).  Nodes
    are reproduced exactly.  Returns shape ``(*lead, Q, *comp)``.  A prepared
    ``stencil`` (from :func:`make_stencil`) can be passed to reuse weights.
    """
    g, paxis = _to_nodes(f, space, ncomp)
    st = stencil if stencil is not None else _Stencil(space, pts)
    lead = g.shape[:paxis]
    trail = g.shape[paxis + space.m:]
    gm = np.moveaxis(g, list(range(paxis, paxis + space.m)), list(range(space.m)))
    flat = gm.reshape(space.size, -1)
    res = st.apply(flat).reshape((st.idx.shape[0],) + lead + trail)
    out = np.moveaxis(res, 0, len(lead))
    if return_outside:
        return out, st.outside
    return out


def make_stencil(space: SpaceGrid, pts) -> _Stencil:
    return _Stencil(space, pts)


def time_lerp(a, b, lam: float):
    """``a + lam (b - a)``, returning ``a`` itself when ``lam == 0``."""
    if lam == 0.0:
        return a
    return a + lam * (b - a)


def monotone_hermite(v, y, dy) -> CubicHermiteSpline:
    """Cubic Hermite interpolant with exact slopes where they keep it monotone.

    On intervals violating the Fritsch-Carlson condition the slopes are replaced
    by PCHIP slopes.
    """
    v = np.asarray(v, dtype=float)
    y = np.asarray(y, dtype=float)
    dy = np.asarray(dy, dtype=float).copy()
    sec = np.diff(y) / np.diff(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = dy[:-1] / sec
        b = dy[1:] / sec
    bad = ~np.isfinite(a) | ~np.isfinite(b) | (a * a + b * b > 9.0) | (a < 0) | (b < 0)
    if np.any(bad):
        pchip = PchipInterpolator(v, y).derivative()(v)
        idx = np.flatnonzero(bad)
        dy[idx] = pchip[idx]
        dy[idx + 1] = pchip[idx + 1]
    return CubicHermiteSpline(v, y, dy)
