"""Weakly and strongly controlled paths, the compensated rough integral and compositions.

Array layout (time axis first):

* weak:   ``z (n+1, *c)``, ``zx (n+1, *c, d)``
* strong: adds ``zxx (n+1, *c, d, d)`` and ``zt (n+1, *c)``

Spatial paths use ``c = (P, m)`` with the points of a :class:`SpaceGrid`.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .increments import GridPath, HolderReport, Increment2, empirical_order, holder_norm
from .indexing import contract_x, contract_xx
from .rough_path import RoughPath
from .spatial import DomainError, SpaceGrid, gradient, hessian, interpolate

logger = logging.getLogger(__name__)

ORDER_SLACK = 0.1


def _left_cumsum(inc):
    return np.concatenate([np.zeros((1,) + inc.shape[1:]), np.cumsum(inc, axis=0)])


@dataclass
class WeakControlled:
    rp: RoughPath
    z: np.ndarray
    zx: np.ndarray
    kappa: float = 0.45

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.zx = np.asarray(self.zx, dtype=float)
        n1, d = self.rp.grid.n + 1, self.rp.dim
        if self.z.shape[0] != n1 or self.zx.shape != self.z.shape + (d,):
            raise ValueError(f"expected z (n+1, *c) and zx (n+1, *c, {d}); got {self.z.shape}, {self.zx.shape}")
        if not self.kappa <= self.rp.gamma + 1e-12:
            raise ValueError("kappa must not exceed the driver's gamma")

    @property
    def grid(self):
        return self.rp.grid


@dataclass
class OrderReport:
    increment: Increment2
    holder: HolderReport
    order: float
    target: float
    ok: bool


def _order_report(inc: Increment2, target: float, norm: str = "sup") -> OrderReport:
    hold = holder_norm(inc, target, norm=norm, n_max=512)
    order = empirical_order(inc, norm=norm)
    if hold.norm_estimate <= 1e-13:
        ok = True
    else:
        ok = bool(np.isfinite(order) and order >= target - ORDER_SLACK)
    return OrderReport(inc, hold, order, target, ok)


def remainder_weak(w: WeakControlled) -> OrderReport:
    """``rho = delta z - zx dx`` together with its measured order against ``2 kappa``."""
    z, zx, rp = w.z, w.zx, w.rp

    def rho(i, j):
        return z[j] - z[i] - contract_x(zx[i], rp.dx(i, j))

    inc = Increment2(w.grid, rho, z.shape[1:])
    return _order_report(inc, 2 * w.kappa)


@dataclass
class StrongControlled:
    rp: RoughPath
    z: np.ndarray
    zx: np.ndarray
    zxx: np.ndarray
    zt: np.ndarray
    kappa: float = 0.45
    space: SpaceGrid | None = None

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.zx = np.asarray(self.zx, dtype=float)
        self.zxx = np.asarray(self.zxx, dtype=float)
        self.zt = np.asarray(self.zt, dtype=float)
        n1, d = self.rp.grid.n + 1, self.rp.dim
        s = self.z.shape
        if s[0] != n1:
            raise ValueError("z must have n+1 time slices")
        if self.zx.shape != s + (d,) or self.zxx.shape != s + (d, d) or self.zt.shape != s:
            raise ValueError("inconsistent component shapes")
        if self.space is not None and (len(s) < 2 or s[1] != self.space.size):
            raise ValueError("spatial path needs shape (n+1, P, ...) matching the space grid")

    @property
    def grid(self):
        return self.rp.grid

    def drift_integral(self) -> np.ndarray:
        """Left Riemann sums ``I(zt)_{0 t_k}``, shape like ``z``."""
        return _left_cumsum(self.zt[:-1] * self.grid.h)

    def weak(self) -> WeakControlled:
        return WeakControlled(self.rp, self.z, self.zx, self.kappa)

    def flat(self) -> Increment2:
        """``z^flat = dz - zx dx - zxx x2 - I(zt)``."""
        z, zx, zxx, rp = self.z, self.zx, self.zxx, self.rp
        Iz = self.drift_integral()

        def fn(i, j):
            return (
                z[j] - z[i]
                - contract_x(zx[i], rp.dx(i, j))
                - contract_xx(zxx[i], rp.x2(i, j))
                - (Iz[j] - Iz[i])
            )

        return Increment2(self.grid, fn, self.z.shape[1:])

    def sharp(self) -> Increment2:
        """``z^sharp = d(zx) - zxx dx``."""
        zx, zxx, rp = self.zx, self.zxx, self.rp

        def fn(i, j):
            return zx[j] - zx[i] - contract_x(zxx[i], rp.dx(i, j))

        return Increment2(self.grid, fn, self.zx.shape[1:])

    def remainder_orders(self) -> dict:
        return {
            "flat": _order_report(self.flat(), 3 * self.kappa),
            "sharp": _order_report(self.sharp(), 2 * self.kappa),
        }

    def time_slice(self, k: int) -> dict:
        return {"z": self.z[k], "zx": self.zx[k], "zxx": self.zxx[k], "zt": self.zt[k]}

    # -- I/O -------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "roughvisc.strong_controlled",
            "kappa": self.kappa,
            "space": None if self.space is None else self.space.to_dict(),
            "roughpath": self.rp.to_dict(include_area=False),
            "z": self.z.tolist(),
            "zx": self.zx.tolist(),
            "zxx": self.zxx.tolist(),
            "zt": self.zt.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "StrongControlled":
        rp = RoughPath.from_dict(doc["roughpath"])
        sp = doc.get("space")
        space = None if sp is None else SpaceGrid(tuple(sp["lower"]), tuple(sp["upper"]), tuple(sp["cells"]))
        return cls(rp, np.array(doc["z"]), np.array(doc["zx"]), np.array(doc["zxx"]),
                   np.array(doc["zt"]), doc["kappa"], space)

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load_json(cls, path) -> "StrongControlled":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save_csv(self, path) -> None:
        """Rows ``t, theta..., z..., zx..., zxx..., zt...`` (one per time and spatial point)."""
        n1 = self.grid.n + 1
        times = self.grid.points
        if self.space is not None:
            pts = self.space.points
            P = self.space.size
        else:
            pts = np.zeros((1, 0))
            P = 1
        z = self.z.reshape(n1, P, -1)
        zx = self.zx.reshape(n1, P, -1)
        zxx = self.zxx.reshape(n1, P, -1)
        zt = self.zt.reshape(n1, P, -1)
        header = ["t"] + [f"theta{k}" for k in range(pts.shape[1])]
        for name, arr in (("z", z), ("zx", zx), ("zxx", zxx), ("zt", zt)):
            header += [f"{name}_{k}" for k in range(arr.shape[2])]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(n1):
                for q in range(P):
                    row = [times[k]] + list(pts[q]) + list(z[k, q]) + list(zx[k, q]) + list(zxx[k, q]) + list(zt[k, q])
                    w.writerow([f"{v:.17g}" for v in row])


def rough_integral(mu: WeakControlled, eta=None, rp: RoughPath | None = None, z0=None,
                   space: SpaceGrid | None = None) -> StrongControlled:
    """Compensated sums ``sum [mu_l dx^l + eta dt + mu^{x;lk} x^{2;kl}]`` on the finest grid.

    ``mu.z`` has shape ``(n+1, *c, d)`` and ``mu.zx`` shape ``(n+1, *c, d, d)``.
    The result carries ``zx = mu``, ``zxx = mu^x`` and ``zt = eta``.
    """
    rp = mu.rp if rp is None else rp
    if rp.grid != mu.rp.grid:
        raise ValueError("integrand and driver live on different grids")
    if 2 * mu.kappa + rp.gamma <= 1:
        raise ValueError(f"need 2 kappa + gamma > 1, got kappa={mu.kappa}, gamma={rp.gamma}")
    if mu.z.shape[-1] != rp.dim:
        raise ValueError("integrand's last axis must match the driver dimension")
    cshape = mu.z.shape[1:-1]
    h = rp.grid.h
    eta = np.zeros((rp.grid.n + 1,) + cshape) if eta is None else np.asarray(
        eta.values if isinstance(eta, GridPath) else eta, dtype=float)
    if eta.shape != (rp.grid.n + 1,) + cshape:
        raise ValueError("drift has the wrong shape")
    dx = rp.dx_adjacent()
    x2 = rp.x2_adjacent()
    step = contract_x(mu.z[:-1], dx) + eta[:-1] * h + contract_xx(mu.zx[:-1], x2)
    z = _left_cumsum(step)
    if z0 is not None:
        z = z + np.asarray(z0, dtype=float)
    return StrongControlled(rp, z, mu.z, mu.zx, eta, mu.kappa, space)


def compose_smooth(w: WeakControlled, G: Callable, dG: Callable) -> WeakControlled:
    """``zhat = G(t, z)``, ``zhat^x = D_z G(t, z) zx``.

    The last axis of ``w.z`` is the vector component (use length one for scalar
    paths).  ``G(t, z) -> (..., k)`` and ``dG(t, z) -> (..., k, m)``; ``t`` is
    shaped to broadcast against ``z[..., 0]``.
    """
    if w.z.ndim < 2:
        raise ValueError("z needs an explicit component axis")
    t = w.grid.points.reshape((-1,) + (1,) * (w.z.ndim - 2))
    val = np.asarray(G(t, w.z), dtype=float)
    jac = np.asarray(dG(t, w.z), dtype=float)
    zhx = np.einsum("...km,...ml->...kl", jac, w.zx)
    return WeakControlled(w.rp, val, zhx, w.kappa)


# -- fields for composition -------------------------------------------------

class ControlledField:
    """A time-dependent controlled field ``z_t(.)`` on ``R^m`` evaluated at arbitrary points.

    ``eval(k, pts)`` returns a dict with keys ``z (Q, K)``, ``zx (Q, K, d)``,
    ``zxx (Q, K, d, d)``, ``zt (Q, K)``, ``Dz (Q, K, m)``, ``D2z (Q, K, m, m)``
    and ``Dzx (Q, K, d, m)``.
    """

    def eval(self, k: int, pts) -> dict:
        raise NotImplementedError


class CallbackField(ControlledField):
    def __init__(self, fn: Callable, times):
        self.fn = fn
        self.times = np.asarray(times)

    def eval(self, k, pts):
        return self.fn(k, self.times[k], np.asarray(pts, dtype=float))


class DeterministicField(ControlledField):
    """A deterministic ``chi(t, theta)`` (no rough components) from callbacks.

    ``value(t, pts) -> (Q, K)``, ``grad -> (Q, K, m)``, ``hess -> (Q, K, m, m)``,
    ``dt -> (Q, K)``.
    """

    def __init__(self, value, grad, hess, dt, times, d: int):
        self.value, self.grad, self.hess, self.dt = value, grad, hess, dt
        self.times = np.asarray(times)
        self.d = d

    def eval(self, k, pts):
        t = self.times[k]
        pts = np.asarray(pts, dtype=float)
        v = np.asarray(self.value(t, pts))
        Q, K = v.shape
        m = pts.shape[1]
        return {
            "z": v,
            "zx": np.zeros((Q, K, self.d)),
            "zxx": np.zeros((Q, K, self.d, self.d)),
            "zt": np.asarray(self.dt(t, pts)),
            "Dz": np.asarray(self.grad(t, pts)),
            "D2z": np.asarray(self.hess(t, pts)),
            "Dzx": np.zeros((Q, K, self.d, m)),
        }


class GridField(ControlledField):
    """A spatial :class:`StrongControlled` read by C^1 cubic interpolation.

    Spatial derivatives default to central differences of the grid data (NaN on
    the boundary, hence a shrunken valid domain); explicit derivative arrays can
    be supplied instead.
    """

    def __init__(self, strong: StrongControlled, Dz=None, D2z=None, Dzx=None):
        if strong.space is None:
            raise ValueError("GridField needs a spatial path")
        self.s = strong
        sp = strong.space
        self.Dz = gradient(strong.z, sp, ncomp=1) if Dz is None else np.asarray(Dz)
        self.D2z = hessian(strong.z, sp, ncomp=1) if D2z is None else np.asarray(D2z)
        self.Dzx = gradient(strong.zx, sp, ncomp=2) if Dzx is None else np.asarray(Dzx)

    def eval(self, k, pts):
        sp = self.s.space
        pts = np.asarray(pts, dtype=float)
        out = {}
        for key, arr, nc in (
            ("z", self.s.z[k], 1), ("zx", self.s.zx[k], 2), ("zxx", self.s.zxx[k], 3),
            ("zt", self.s.zt[k], 1), ("Dz", self.Dz[k], 2), ("D2z", self.D2z[k], 3),
            ("Dzx", self.Dzx[k], 3),
        ):
            val, outside = interpolate(arr, sp, pts, ncomp=nc, return_outside=True)
            if np.any(outside) or not np.all(np.isfinite(val)):
                bad = np.flatnonzero(outside | ~np.all(np.isfinite(val.reshape(val.shape[0], -1)), axis=1))
                raise DomainError(
                    f"composition leaves the valid domain of the outer field at time index {k}, "
                    f"e.g. point {pts[bad[0]].tolist()} ({bad.size} points)"
                )
            out[key] = val
        return out


def compose_strong(zf: ControlledField, y: StrongControlled, space: SpaceGrid | None = None) -> StrongControlled:
    """Composition ``(z o y)_t(theta) = z_t(y_t(theta))`` with its strong decomposition.

    ``y`` has values ``(n+1, P, m)``.  Components::

        x : z^x(y) + Dz(y) y^x
        xx: z^xx(y) + Dz y^xx + Dz^{x;l2} y^{x;l1} + Dz^{x;l1} y^{x;l2} + D2z y^{x;l1} y^{x;l2}
        t : z^t(y) + Dz y^t
    """
    if y.z.ndim != 3:
        raise ValueError("y must have shape (n+1, P, m)")
    n1 = y.grid.n + 1
    outs = {k: [] for k in ("z", "zx", "zxx", "zt")}
    for k in range(n1):
        f = zf.eval(k, y.z[k])
        yx, yxx, yt = y.zx[k], y.zxx[k], y.zt[k]
        Dz, D2z, Dzx = f["Dz"], f["D2z"], f["Dzx"]
        cx = f["zx"] + np.einsum("qkj,qjl->qkl", Dz, yx)
        cross = np.einsum("qkbj,qja->qkab", Dzx, yx)  # Dz^{x;l2} y^{x;l1}
        cxx = (
            f["zxx"]
            + np.einsum("qkj,qjab->qkab", Dz, yxx)
            + cross
            + np.swapaxes(cross, -1, -2)
            + np.einsum("qkij,qia,qjb->qkab", D2z, yx, yx)
        )
        ct = f["zt"] + np.einsum("qkj,qj->qk", Dz, yt)
        outs["z"].append(f["z"])
        outs["zx"].append(cx)
        outs["zxx"].append(cxx)
        outs["zt"].append(ct)
    return StrongControlled(
        y.rp,
        np.stack(outs["z"]), np.stack(outs["zx"]), np.stack(outs["zxx"]), np.stack(outs["zt"]),
        y.kappa, y.space if space is None else space,
    )


def identity_path(rp: RoughPath, space: SpaceGrid, kappa: float | None = None) -> StrongControlled:
    """``y_t(theta) = theta`` with vanishing rough and drift components."""
    n1, d = rp.grid.n + 1, rp.dim
    P, m = space.size, space.m
    z = np.broadcast_to(space.points, (n1, P, m)).copy()
    return StrongControlled(
        rp, z, np.zeros((n1, P, m, d)), np.zeros((n1, P, m, d, d)), np.zeros((n1, P, m)),
        rp.gamma if kappa is None else kappa, space,
    )


# -- Taylor expansion -----------------------------------------------------------

@dataclass
class TaylorResult:
    predicted: np.ndarray
    actual: np.ndarray
    remainder: np.ndarray


class _SpatialDerivatives:
    def __init__(self, z: StrongControlled):
        self.z = z
        self.Dz = gradient(z.z, z.space, ncomp=1)
        self.Dzx = gradient(z.zx, z.space, ncomp=2)


def taylor_expand(z: StrongControlled, s: int, theta: int, t: int, nu: int, *, cache=None) -> TaylorResult:
    """Space-time expansion of a spatial strongly controlled path, base ``(s, theta)``.

    ``s, t`` are time indices and ``theta, nu`` spatial node indices.
    """
    if z.space is None:
        raise ValueError("needs a spatial path")
    der = cache if cache is not None else _SpatialDerivatives(z)
    if not z.space.interior_mask()[theta]:
        raise DomainError("base point must be an interior node")
    pts = z.space.points
    dth = pts[nu] - pts[theta]
    dx = z.rp.dx(s, t)
    x2 = z.rp.x2(s, t)
    Dz = der.Dz[s, theta]
    Dzx = der.Dzx[s, theta]
    pred = (
        z.z[s, theta]
        + z.zt[s, theta] * (z.grid.time(t) - z.grid.time(s))
        + contract_x(z.zx[s, theta], dx)
        + contract_xx(z.zxx[s, theta], x2)
        + Dz @ dth
        + np.einsum("klj,l,j->k", Dzx, dx, dth)
    )
    actual = z.z[t, nu]
    return TaylorResult(pred, actual, actual - pred)


def taylor_box_remainder(z: StrongControlled, s: int, theta: int, radius: float, *, max_times: int = 64,
                         cache=None) -> float:
    """``sup |R|`` of :func:`taylor_expand` over ``0 <= t - s <= radius``, ``|nu - theta|_inf <= radius``.

    Vectorised over the box; at most ``max_times`` evenly spaced time levels
    (always including the outermost) are sampled.
    """
    if z.space is None:
        raise ValueError("needs a spatial path")
    sp = z.space
    der = cache if cache is not None else _SpatialDerivatives(z)
    if not sp.interior_mask()[theta]:
        raise DomainError("base point must be an interior node")
    g = z.grid
    kmax = min(g.n, s + int(np.floor(radius / g.h + 1e-9)))
    ts = np.unique(np.linspace(s, kmax, min(max_times, kmax - s + 1)).round().astype(int))
    pts = sp.points
    near = np.all(np.abs(pts - pts[theta]) <= radius + 1e-12, axis=1)
    nus = np.flatnonzero(near)
    dth = pts[nus] - pts[theta]
    K = z.z.shape[2:]
    zs = z.z[s, theta]
    Dz = der.Dz[s, theta]
    Dzx = der.Dzx[s, theta]
    worst = 0.0
    for t in ts:
        dx = z.rp.dx(s, t)
        x2 = z.rp.x2(s, t)
        base = zs + z.zt[s, theta] * (g.time(t) - g.time(s)) + contract_x(z.zx[s, theta], dx) \
            + contract_xx(z.zxx[s, theta], x2)
        pred = base[None] + np.einsum("kj,qj->qk", Dz.reshape(-1, sp.m), dth).reshape((nus.size,) + K) \
            + np.einsum("klj,l,qj->qk", Dzx.reshape(-1, z.rp.dim, sp.m), dx, dth).reshape((nus.size,) + K)
        worst = max(worst, float(np.max(np.abs(z.z[t, nus] - pred))))
    return worst


def strong_as_integral_check(z: StrongControlled, stride: int = 1) -> float:
    """Sup discrepancy between ``delta z`` and the compensated integral of its own components.

    ``stride > 1`` evaluates the compensated sums on the coarser partition made of
    every ``stride``-th grid point (used for convergence studies of flows).
    """
    rp = z.rp if stride == 1 else z.rp.restrict(stride)
    sl = slice(None, None, stride)
    mu = WeakControlled(rp, z.zx[sl], z.zxx[sl], min(z.kappa, rp.gamma))
    rebuilt = rough_integral(mu, z.zt[sl], rp, z0=z.z[0])
    return float(np.max(np.abs(rebuilt.z - z.z[sl])))


# -- expansion coefficients ---------------------------------------------------

@dataclass
class ExpansionPoint:
    s: float
    theta: np.ndarray
    z0: float
    a: float
    b: np.ndarray
    c: np.ndarray
    p: np.ndarray
    q: np.ndarray
    X: np.ndarray = field(default=None)


def sigma_targets(sigma, theta, u, p, X):
    """Vectorised ``b (Q, d)``, ``q (Q, m, d)`` and ``c (Q, d, d)`` from ``(u, p, X)``.

    ``b^l = sigma^l``, ``q^{jl} = d_theta^j [sigma^l]`` (total derivative along
    ``theta -> (theta, u(theta), Du(theta))``) and
    ``c^{lk} = b^k d_u sigma^l + q^{jk} d_{p^j} sigma^l``.
    """
    th = np.atleast_2d(np.asarray(theta, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    pp = np.atleast_2d(np.asarray(p, dtype=float))
    X = np.asarray(X, dtype=float).reshape(pp.shape[0], pp.shape[1], pp.shape[1])
    b = sigma.sigma(th, u, pp)
    su = sigma.du(th, u, pp)
    sp = sigma.dp(th, u, pp)  # [q, l, j]
    st = sigma.dtheta(th, u, pp)  # [q, l, j]
    ql = st + su[:, :, None] * pp[:, None, :] + np.einsum("qli,qij->qlj", sp, X)
    q = np.swapaxes(ql, 1, 2)  # [q, j, l]
    c = su[:, :, None] * b[:, None, :] + np.einsum("qlj,qjk->qlk", sp, q)
    return b, q, c


def jet_coefficients(sigma, theta, z0, p, X):
    """Single-point version of :func:`sigma_targets`."""
    b, q, c = sigma_targets(sigma, theta, z0, p, X)
    return b[0], q[0], c[0]


def expansion_coefficients(u: StrongControlled, F: Callable, sigma, s: int, theta: int) -> ExpansionPoint:
    """Coefficients ``(a, b, c, p, q)`` of the space-time expansion of a strong solution.

    ``u`` is scalar-valued (``z`` of shape ``(n+1, P, 1)``); ``F(t, theta, p)``
    is vectorised over points.
    """
    sp = u.space
    if sp is None:
        raise ValueError("needs a spatial path")
    if not sp.interior_mask()[theta]:
        raise DomainError("expansion point must be an interior node (no one-sided stencils)")
    Du = gradient(u.z[s], sp, ncomp=1)[theta, 0]
    D2u = hessian(u.z[s], sp, ncomp=1)[theta, 0]
    th = sp.points[theta]
    z0 = float(u.z[s, theta, 0])
    t = float(u.grid.time(s))
    a = float(np.asarray(F(t, th[None, :], Du[None, :])).ravel()[0])
    b, q, c = jet_coefficients(sigma, th, z0, Du, D2u)
    return ExpansionPoint(t, th, z0, a, b, c, Du, q, D2u)
