"""Named builtins used by configuration files: Hamiltonians, vector fields, H families, initial data."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fields import (
    ScalarFamily,
    VectorFieldFamily,
    h_const,
    h_linear,
    h_sin,
    h_tanh,
    h_zero,
    vf_const,
    vf_linear,
    vf_sine,
    vf_zero,
)


class RegistryError(KeyError):
    pass


@dataclass
class Hamiltonian:
    """``F(t, theta, p)`` vectorised over points: ``theta (Q, m)``, ``p (Q, m)`` -> ``(Q,)``.

    ``lip_p`` bounds ``|dF/dp_k|`` for every component ``k``; ``bound`` is
    ``sup |F|`` when known.
    """

    fn: Callable
    lip_p: float
    bound: float | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    is_zero: bool = False
    p_only: bool = True

    def __call__(self, t, theta, p):
        return self.fn(t, theta, p)


def _norm(p):
    return np.sqrt(np.sum(np.asarray(p, dtype=float) ** 2, axis=-1))


def F_zero() -> Hamiltonian:
    return Hamiltonian(lambda t, th, p: np.zeros(np.shape(p)[0]), 0.0, 0.0, "zero", {}, True)


def F_const(c: float = 1.0) -> Hamiltonian:
    c = float(c)
    return Hamiltonian(lambda t, th, p: np.full(np.shape(p)[0], c), 0.0, abs(c), "const", {"c": c}, c == 0.0)


def F_abs_grad(c: float = -1.0) -> Hamiltonian:
    """``c |p|`` (Euclidean)."""
    c = float(c)
    return Hamiltonian(lambda t, th, p: c * _norm(p), abs(c), None, "abs_grad", {"c": c}, c == 0.0)


def F_quadratic(c: float = 0.5, cap: float = 100.0) -> Hamiltonian:
    """``c min(|p|^2, cap)``: bounded and Lipschitz."""
    c, cap = float(c), float(cap)
    return Hamiltonian(
        lambda t, th, p: c * np.minimum(_norm(p) ** 2, cap),
        2 * abs(c) * np.sqrt(cap), abs(c) * cap, "quadratic", {"c": c, "cap": cap}, c == 0.0,
    )


def F_table(p, F) -> Hamiltonian:
    """Piecewise-linear ``F`` of a scalar gradient, constant beyond the table."""
    p = np.asarray(p, dtype=float)
    F = np.asarray(F, dtype=float)
    if p.ndim != 1 or p.shape != F.shape or p.size < 2 or np.any(np.diff(p) <= 0):
        raise ValueError("custom-table needs strictly increasing p and matching F")
    lip = float(np.max(np.abs(np.diff(F) / np.diff(p))))

    def fn(t, th, q):
        q = np.asarray(q, dtype=float)
        return np.interp(q[..., 0], p, F)

    return Hamiltonian(fn, lip, float(np.max(np.abs(F))), "custom-table", {"p": p.tolist(), "F": F.tolist()},
                       not np.any(F))


HAMILTONIANS = {
    "zero": lambda **kw: F_zero(),
    "const": lambda c=1.0: F_const(c),
    "abs_grad": lambda c=-1.0: F_abs_grad(c),
    "quadratic": lambda c=0.5, cap=100.0: F_quadratic(c, cap),
    "custom-table": lambda p, F: F_table(p, F),
}


def make_hamiltonian(spec) -> Hamiltonian:
    spec = _spec(spec)
    name = spec.pop("name")
    if name not in HAMILTONIANS:
        raise RegistryError(f"unknown Hamiltonian {name!r}; known: {sorted(HAMILTONIANS)}")
    return HAMILTONIANS[name](**spec)


def _spec(spec) -> dict:
    if isinstance(spec, str):
        return {"name": spec}
    return dict(spec)


def make_vector_fields(spec, m: int = 1, d: int = 1) -> VectorFieldFamily:
    spec = _spec(spec)
    name = spec.pop("name")
    if name == "zero":
        return vf_zero(m, d)
    if name == "const":
        c = np.asarray(spec.get("c", 1.0), dtype=float)
        return vf_const(np.broadcast_to(c, (m, d)) if c.ndim < 2 else c)
    if name == "linear":
        # either a full tensor M[i, l, j] or per-component rates a[i, l] (A^i_l = a_il theta^i)
        if "M" in spec:
            M = np.asarray(spec["M"], dtype=float)
        else:
            a = np.broadcast_to(np.asarray(spec.get("a", 1.0), dtype=float), (m, d))
            M = a[:, :, None] * np.eye(m)[:, None, :]
        b = spec.get("b")
        return vf_linear(M, None if b is None else np.broadcast_to(np.asarray(b, dtype=float), (m, d)))
    if name == "sine":
        amp = np.asarray(spec.get("amp", 0.5), dtype=float)
        ph = spec.get("phase")
        return vf_sine(np.broadcast_to(amp, (m, d)), spec.get("freq", 1.0),
                       None if ph is None else np.broadcast_to(np.asarray(ph, dtype=float), (m, d)))
    raise RegistryError(f"unknown vector fields {name!r}; known: ['const', 'linear', 'sine', 'zero']")


def make_noise_family(spec, d: int = 1) -> ScalarFamily:
    spec = _spec(spec)
    name = spec.pop("name")
    if name == "zero":
        return h_zero(d)
    bc = lambda v: np.broadcast_to(np.asarray(v, dtype=float), (d,))
    if name == "const":
        return h_const(bc(spec.get("c", 1.0)))
    if name == "linear":
        return h_linear(bc(spec.get("a", 1.0)), spec.get("b", 0.0))
    if name == "tanh":
        return h_tanh(bc(spec.get("a", 1.0)), spec.get("w", 1.0))
    if name == "sin":
        return h_sin(bc(spec.get("a", 1.0)), spec.get("w", 1.0))
    raise RegistryError(f"unknown H family {name!r}; known: ['const', 'linear', 'sin', 'tanh', 'zero']")


@dataclass
class InitialDatum:
    """``alpha(theta)`` for ``theta (Q, m)`` -> ``(Q,)``."""

    fn: Callable
    name: str
    params: dict

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 1:
            theta = theta[:, None]
        return self.fn(theta)


def make_initial(spec) -> InitialDatum:
    spec = _spec(spec)
    name = spec.pop("name")
    amp = float(spec.get("amp", 1.0))
    center = np.asarray(spec.get("center", 0.0), dtype=float)
    width = float(spec.get("width", 0.5))
    if name == "gaussian":
        fn = lambda th: amp * np.exp(-np.sum((th - center) ** 2, axis=1) / (2 * width ** 2))
    elif name == "neg_abs":
        fn = lambda th: -amp * np.sqrt(np.sum((th - center) ** 2, axis=1))
    elif name == "sine":
        k = float(spec.get("freq", 1.0))
        fn = lambda th: amp * np.sin(k * np.sum(th - center, axis=1))
    elif name == "tanh":
        fn = lambda th: amp * np.tanh(np.sum(th - center, axis=1) / width)
    elif name == "bump":
        def fn(th):
            r = np.sqrt(np.sum((th - center) ** 2, axis=1)) / width
            return amp * np.where(r < 1, np.cos(0.5 * np.pi * np.minimum(r, 1.0)) ** 4, 0.0)
    elif name == "const":
        fn = lambda th: np.full(th.shape[0], amp)
    else:
        raise RegistryError(f"unknown initial datum {name!r}; known: bump, const, gaussian, neg_abs, sine, tanh")
    params = {"amp": amp, "center": center.tolist(), "width": width, **spec}
    return InitialDatum(fn, name, params)
