"""Vector-field families, scalar noise coefficients and the noise coefficient sigma(theta, u, p)."""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np


def _fd_check(f, df, pts, eps=1e-5, tol=1e-6, what="derivative"):
    """Compare ``df(pts)`` (derivative axis last) with central differences of ``f``."""
    pts = np.asarray(pts, dtype=float)
    m = pts.shape[-1]
    analytic = np.asarray(df(pts))
    worst, scale = 0.0, 1.0
    for j in range(m):
        e = np.zeros(m)
        e[j] = eps
        num = (np.asarray(f(pts + e)) - np.asarray(f(pts - e))) / (2 * eps)
        worst = max(worst, float(np.max(np.abs(num - analytic[..., j]))))
        scale = max(scale, float(np.max(np.abs(num))))
    if worst > tol * scale:
        raise ValueError(f"{what} callback disagrees with finite differences by {worst:.3e}")
    return worst


@dataclass
class VectorFieldFamily:
    """Vector fields ``A_1..A_d`` on ``R^m``.

    ``field(pts) -> (Q, m, d)`` with ``[q, i, l] = A^i_l``;
    ``jac(pts) -> (Q, m, d, m)`` with last axis ``d/d theta^j``;
    ``hess(pts) -> (Q, m, d, m, m)``.
    """

    m: int
    d: int
    field: Callable
    jac: Callable
    hess: Callable
    name: str = "custom"
    params: dict = dc_field(default_factory=dict)
    is_zero: bool = False
    bound: float | None = None

    def validate(self, box=None, n_samples: int = 16, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        if box is None:
            pts = rng.normal(size=(n_samples, self.m))
        else:
            lo, hi = (np.asarray(b, dtype=float) for b in box)
            pts = rng.uniform(lo, hi, size=(n_samples, self.m))
        val = np.asarray(self.field(pts))
        if val.shape != (n_samples, self.m, self.d) or not np.all(np.isfinite(val)):
            raise ValueError(f"vector field must return finite (Q, {self.m}, {self.d}) arrays")
        _fd_check(self.field, self.jac, pts, what="jacobian")
        _fd_check(self.jac, self.hess, pts, what="hessian")

    def bracket(self, pts) -> np.ndarray:
        """``[A_{l2} A^i_{l1}] = A^k_{l2} d_k A^i_{l1}`` stored at ``[q, i, l1, l2]``."""
        a = self.field(pts)
        da = self.jac(pts)
        return np.einsum("qkb,qiak->qiab", a, da)

    def bracket_jac(self, pts) -> np.ndarray:
        """d/d theta^j of :meth:`bracket`, shape ``(Q, m, d, d, m)``."""
        a = self.field(pts)
        da = self.jac(pts)
        d2a = self.hess(pts)
        return np.einsum("qkbj,qiak->qiabj", da, da) + np.einsum("qkb,qiakj->qiabj", a, d2a)


def _const_like(pts, val):
    pts = np.asarray(pts, dtype=float)
    return np.broadcast_to(val, (pts.shape[0],) + val.shape).copy()


def vf_zero(m: int = 1, d: int = 1) -> VectorFieldFamily:
    z = np.zeros((m, d))
    return VectorFieldFamily(
        m, d,
        lambda p: _const_like(p, z),
        lambda p: _const_like(p, np.zeros((m, d, m))),
        lambda p: _const_like(p, np.zeros((m, d, m, m))),
        name="zero", params={}, is_zero=True, bound=0.0,
    )


def vf_const(c) -> VectorFieldFamily:
    c = np.atleast_2d(np.asarray(c, dtype=float))
    m, d = c.shape
    return VectorFieldFamily(
        m, d,
        lambda p: _const_like(p, c),
        lambda p: _const_like(p, np.zeros((m, d, m))),
        lambda p: _const_like(p, np.zeros((m, d, m, m))),
        name="const", params={"c": c.tolist()}, is_zero=not np.any(c),
        bound=float(np.max(np.abs(c))),
    )


def vf_linear(M, b=None) -> VectorFieldFamily:
    """``A^i_l(theta) = M[i, l, j] theta^j + b[i, l]``."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1, 1)
    m, d = M.shape[0], M.shape[1]
    b = np.zeros((m, d)) if b is None else np.asarray(b, dtype=float).reshape(m, d)
    return VectorFieldFamily(
        m, d,
        lambda p: np.einsum("ilj,qj->qil", M, np.asarray(p, dtype=float)) + b,
        lambda p: _const_like(p, M),
        lambda p: _const_like(p, np.zeros((m, d, m, m))),
        name="linear", params={"M": M.tolist(), "b": b.tolist()},
    )


def vf_sine(amp, freq=1.0, phase=None) -> VectorFieldFamily:
    """``A^i_l(theta) = amp[i, l] sin(freq theta^i + phase[i, l])`` (bounded, smooth)."""
    amp = np.atleast_2d(np.asarray(amp, dtype=float))
    m, d = amp.shape
    ph = np.zeros((m, d)) if phase is None else np.asarray(phase, dtype=float).reshape(m, d)
    w = float(freq)
    eye = np.eye(m)

    def field(p):
        p = np.asarray(p, dtype=float)
        return amp * np.sin(w * p[:, :, None] + ph)

    def jac(p):
        p = np.asarray(p, dtype=float)
        return (amp * w * np.cos(w * p[:, :, None] + ph))[..., None] * eye[:, None, :]

    def hess(p):
        p = np.asarray(p, dtype=float)
        diag = -amp * w * w * np.sin(w * p[:, :, None] + ph)
        return diag[..., None, None] * (eye[:, None, :, None] * eye[:, None, None, :])

    return VectorFieldFamily(
        m, d, field, jac, hess, name="sine",
        params={"amp": amp.tolist(), "freq": w, "phase": ph.tolist()},
        bound=float(np.max(np.abs(amp))),
    )


@dataclass
class ScalarFamily:
    """Scalar coefficients ``H_1..H_d : R -> R`` with two derivatives, vectorised as ``(..., d)``."""

    d: int
    f: Callable
    df: Callable
    d2f: Callable
    name: str = "custom"
    params: dict = dc_field(default_factory=dict)
    is_zero: bool = False

    def validate(self, lo: float = -3.0, hi: float = 3.0, n_samples: int = 16) -> None:
        v = np.linspace(lo, hi, n_samples)[:, None]
        _fd_check(lambda x: self.f(x[:, 0]), lambda x: self.df(x[:, 0])[..., None], v, what="H'")
        _fd_check(lambda x: self.df(x[:, 0]), lambda x: self.d2f(x[:, 0])[..., None], v, what="H''")

    def bracket(self, v) -> np.ndarray:
        """``[H_{l2} H_{l1}'](v) = H_{l1}'(v) H_{l2}(v)`` at ``[..., l1, l2]``."""
        return self.df(v)[..., :, None] * self.f(v)[..., None, :]


def _vec(v, d, fn):
    v = np.asarray(v, dtype=float)
    return fn(v[..., None] * np.ones(d))


def h_zero(d: int = 1) -> ScalarFamily:
    z = lambda v: _vec(v, d, np.zeros_like)
    return ScalarFamily(d, z, z, z, name="zero", is_zero=True)


def h_const(c) -> ScalarFamily:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    d = c.size
    return ScalarFamily(
        d,
        lambda v: _vec(v, d, lambda x: np.zeros_like(x) + c),
        lambda v: _vec(v, d, np.zeros_like),
        lambda v: _vec(v, d, np.zeros_like),
        name="const", params={"c": c.tolist()}, is_zero=not np.any(c),
    )


def h_linear(a, b=0.0) -> ScalarFamily:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    d = a.size
    b = np.broadcast_to(np.asarray(b, dtype=float), (d,))
    return ScalarFamily(
        d,
        lambda v: _vec(v, d, lambda x: a * x + b),
        lambda v: _vec(v, d, lambda x: np.zeros_like(x) + a),
        lambda v: _vec(v, d, np.zeros_like),
        name="linear", params={"a": a.tolist(), "b": b.tolist()},
    )


def h_tanh(a=1.0, w=1.0) -> ScalarFamily:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    d = a.size
    w = float(w)

    def f(v):
        return _vec(v, d, lambda x: a * np.tanh(w * x))

    def df(v):
        return _vec(v, d, lambda x: a * w / np.cosh(w * x) ** 2)

    def d2f(v):
        return _vec(v, d, lambda x: -2 * a * w * w * np.tanh(w * x) / np.cosh(w * x) ** 2)

    return ScalarFamily(d, f, df, d2f, name="tanh", params={"a": a.tolist(), "w": w})


def h_sin(a=1.0, w=1.0) -> ScalarFamily:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    d = a.size
    w = float(w)
    return ScalarFamily(
        d,
        lambda v: _vec(v, d, lambda x: a * np.sin(w * x)),
        lambda v: _vec(v, d, lambda x: a * w * np.cos(w * x)),
        lambda v: _vec(v, d, lambda x: -a * w * w * np.sin(w * x)),
        name="sin", params={"a": a.tolist(), "w": w},
    )


class Sigma:
    """Noise coefficient ``sigma^l(theta, u, p)`` with its partial derivatives.

    Shapes for ``Q`` evaluation points in ``R^m``: ``sigma -> (Q, d)``,
    ``du -> (Q, d)``, ``dp -> (Q, d, m)``, ``dtheta -> (Q, d, m)`` (explicit
    dependence only).
    """

    kind = "generic"

    def __init__(self, d: int, m: int):
        self.d, self.m = d, m

    def sigma(self, theta, u, p):
        raise NotImplementedError

    def du(self, theta, u, p):
        raise NotImplementedError

    def dp(self, theta, u, p):
        raise NotImplementedError

    def dtheta(self, theta, u, p):
        raise NotImplementedError


class ZeroSigma(Sigma):
    kind = "zero"

    def sigma(self, theta, u, p):
        return np.zeros((np.asarray(u).shape[0], self.d))

    du = sigma

    def dp(self, theta, u, p):
        return np.zeros((np.asarray(u).shape[0], self.d, self.m))

    dtheta = dp


class TransportSigma(Sigma):
    """``sigma^l = -p^i A^i_l(theta)``."""

    kind = "transport"

    def __init__(self, A: VectorFieldFamily):
        super().__init__(A.d, A.m)
        self.A = A

    def sigma(self, theta, u, p):
        return -np.einsum("qi,qil->ql", p, self.A.field(theta))

    def du(self, theta, u, p):
        return np.zeros((np.asarray(u).shape[0], self.d))

    def dp(self, theta, u, p):
        return -np.swapaxes(self.A.field(theta), 1, 2)

    def dtheta(self, theta, u, p):
        return -np.einsum("qi,qilj->qlj", p, self.A.jac(theta))


class SemilinearSigma(Sigma):
    """``sigma^l = H_l(u)``."""

    kind = "semilinear"

    def __init__(self, H: ScalarFamily, m: int = 1):
        super().__init__(H.d, m)
        self.H = H

    def sigma(self, theta, u, p):
        return self.H.f(np.asarray(u, dtype=float))

    def du(self, theta, u, p):
        return self.H.df(np.asarray(u, dtype=float))

    def dp(self, theta, u, p):
        return np.zeros((np.asarray(u).shape[0], self.d, self.m))

    dtheta = dp
