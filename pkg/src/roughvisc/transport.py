"""Rough transport equation via flow transformation.

``du = F(t, theta, Du) dt - Du . A_l(theta) dx^l`` is reduced to the
deterministic problem ``u_hat_t = alpha + int F_hat(r, theta, Du_hat) dr`` with
``F_hat(r, theta, p) = F(r, phi_r(theta), p J_r(theta)^{-1})`` and then
``u = u_hat o zeta``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .controlled import StrongControlled, sigma_targets
from .fields import TransportSigma, VectorFieldFamily
from .flow import Flow, solve_flow
from .increments import TimeGrid
from .registry import Hamiltonian
from .rough_path import RoughPath
from .spatial import DomainError, SpaceGrid, embed_index, gradient, hessian, interpolate

logger = logging.getLogger(__name__)

DEFAULT_CFL = 0.9


class CFLError(ValueError):
    pass


class NumericalAbort(RuntimeError):
    pass


@dataclass
class HJSolution:
    """Grid values at the rough-grid times plus scheme metadata."""

    space: SpaceGrid
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def save_csv(self, path, stride: int = 1) -> None:
        """Rows ``t, theta..., u`` with 17 significant digits."""
        write_field_csv(path, self.space, self.times, self.values, stride=stride)


def write_field_csv(path, space: SpaceGrid, times, values, stride: int = 1, name: str = "u") -> None:
    pts = space.points
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"theta{i}" for i in range(space.m)] + [name])
        for k in range(0, len(times), stride):
            for q in range(space.size):
                w.writerow([f"{v:.17g}" for v in (times[k], *pts[q], values[k, q])])


@dataclass
class TransportProblem:
    F: Hamiltonian
    A: VectorFieldFamily
    alpha: Callable
    rp: RoughPath
    space: SpaceGrid
    cfl: float = DEFAULT_CFL

    def __post_init__(self):
        if self.A.m != self.space.m:
            raise ValueError("vector fields and spatial box have different dimensions")
        if self.A.d != self.rp.dim:
            raise ValueError("number of vector fields does not match the driver dimension")
        a0 = np.asarray(self.alpha(self.space.points), dtype=float)
        if a0.shape != (self.space.size,) or not np.all(np.isfinite(a0)):
            raise ValueError("initial datum must be finite on the grid")
        _sample_hamiltonian(self.F, self.space)


def _sample_hamiltonian(F: Hamiltonian, space: SpaceGrid, n: int = 64, seed: int = 0) -> None:
    """Sanity check of the declared Lipschitz constant on random gradients."""
    rng = np.random.default_rng(seed)
    th = rng.uniform(space.lower, space.upper, size=(n, space.m))
    p = rng.normal(scale=3.0, size=(n, space.m))
    e = rng.normal(scale=1e-3, size=(n, space.m))
    v0 = np.asarray(F(0.0, th, p), dtype=float)
    v1 = np.asarray(F(0.0, th, p + e), dtype=float)
    if not (np.all(np.isfinite(v0)) and np.all(np.isfinite(v1))):
        raise ValueError("Hamiltonian is not finite on sampled gradients")
    ratio = np.abs(v1 - v0) / np.abs(e).sum(axis=1)
    if np.max(ratio) > F.lip_p * (1 + 1e-6) + 1e-9:
        raise ValueError(f"sampled Lipschitz ratio {np.max(ratio):.4g} exceeds declared lip_p {F.lip_p:.4g}")


# -- deterministic scheme ---------------------------------------------------

def one_sided_gradients(u, space: SpaceGrid):
    """Forward and backward differences per direction; zero across the box edge."""
    g = u.reshape(space.nodes)
    h = space.spacing
    plus, minus = [], []
    for k in range(space.m):
        d = np.diff(g, axis=k) / h[k]
        pad = [(0, 0)] * space.m
        pad[k] = (0, 1)
        plus.append(np.pad(d, pad).ravel())
        pad[k] = (1, 0)
        minus.append(np.pad(d, pad).ravel())
    return np.stack(plus, axis=1), np.stack(minus, axis=1)


def solve_hj(
    ham: Callable,
    u0,
    space: SpaceGrid,
    tgrid: TimeGrid,
    dissipation,
    *,
    cfl: float = DEFAULT_CFL,
    substeps: int | None = None,
    ham_bound: float | None = None,
    check_bounds: bool = True,
) -> HJSolution:
    """Explicit Lax-Friedrichs scheme for ``u_t = ham(k, lam, t, u, p)``.

    ``k`` is the rough-grid interval, ``lam`` the fraction inside it.  Each of
    the ``n`` intervals is split into ``substeps`` PDE steps (chosen from the
    CFL bound when omitted).  ``dissipation`` is a per-direction bound on
    ``|d ham / d p_i|``; monotonicity requires ``dt sum_i a_i / dtheta_i <= cfl``.
    """
    a = np.broadcast_to(np.asarray(dissipation, dtype=float), (space.m,))
    h = space.spacing
    rate = float(np.sum(a / h))
    if substeps is None:
        substeps = max(1, int(np.ceil(tgrid.h * rate / cfl - 1e-12)))
    dt = tgrid.h / substeps
    cfl_number = dt * rate
    if cfl_number > cfl * (1 + 1e-12):
        raise CFLError(f"CFL number {cfl_number:.4f} exceeds {cfl} (dt={dt:.3g})")
    u = np.asarray(u0, dtype=float).copy()
    out = np.empty((tgrid.n + 1, space.size))
    out[0] = u
    umax0, umin0 = float(np.max(u)), float(np.min(u))
    fmax = 0.0
    bound_ok = True
    for k in range(tgrid.n):
        for j in range(substeps):
            lam = j / substeps
            t = tgrid.t0 + (k + lam) * tgrid.h
            pp, pm = one_sided_gradients(u, space)
            pbar = 0.5 * (pp + pm)
            hv = ham(k, lam, t, u, pbar)
            fmax = max(fmax, float(np.max(np.abs(hv))))
            u = u + dt * (hv + 0.5 * np.sum(a * (pp - pm), axis=1))
        if not np.all(np.isfinite(u)):
            raise NumericalAbort(f"non-finite values in the HJ solve at t={tgrid.time(k + 1):.6g}")
        out[k + 1] = u
        if check_bounds:
            tk = tgrid.time(k + 1) - tgrid.t0
            b = ham_bound if ham_bound is not None else fmax
            slack = 1e-9 * max(1.0, abs(umax0), abs(umin0))
            if np.max(u) > umax0 + tk * b + slack or np.min(u) < umin0 - tk * b - slack:
                bound_ok = False
    meta = {
        "scheme": "lax-friedrichs",
        "dt": dt,
        "substeps": substeps,
        "cfl_number": cfl_number,
        "cfl_limit": cfl,
        "dissipation": a.tolist(),
        "sup_hamiltonian": fmax,
        "stability_bounds_hold": bound_ok,
    }
    return HJSolution(space, tgrid.points, out, meta)


# -- transformation -----------------------------------------------------------

class HatF:
    """``F_hat(r, theta, p) = F(r, phi_r(theta), p J_r(theta)^{-1})``.

    On PDE nodes the flow data are read directly (the flow grid contains the PDE
    grid); in between rough-grid times they are interpolated linearly.  The
    inverse Jacobian ``J^{-1}`` stands in for ``D zeta`` at ``phi_r(theta)``.
    Arbitrary ``(r, theta)`` queries interpolate the flow in space.
    """

    def __init__(self, F: Hamiltonian, flow: Flow, space: SpaceGrid):
        self.F, self.flow, self.space = F, flow, space
        self.node_index = embed_index(space, flow.space)
        self.phi = flow.phi.z[:, self.node_index]
        self.Jinv = np.linalg.inv(flow.dphi[:, self.node_index])
        # per-direction dissipation: lip_F * max sum_k |Jinv[i, k]|
        self.dissipation = F.lip_p * np.max(np.abs(self.Jinv).sum(axis=3), axis=(0, 1))

    def on_nodes(self, k: int, lam: float, t: float, u, p):
        if lam == 0.0:
            ph, Ji = self.phi[k], self.Jinv[k]
        else:
            ph = self.phi[k] + lam * (self.phi[k + 1] - self.phi[k])
            Ji = self.Jinv[k] + lam * (self.Jinv[k + 1] - self.Jinv[k])
        return self.F(t, ph, np.einsum("qj,qji->qi", p, Ji))

    def __call__(self, r: float, theta, p):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        p = np.atleast_2d(np.asarray(p, dtype=float))
        g = self.flow.rp.grid
        s = (r - g.t0) / g.h
        k = int(np.clip(np.floor(s), 0, g.n - 1))
        lam = float(s - k)
        fsp = self.flow.space
        ph = [interpolate(self.flow.phi.z[j], fsp, theta, ncomp=1, return_outside=True) for j in (k, k + 1)]
        Jd = [interpolate(self.flow.dphi[j], fsp, theta, ncomp=2) for j in (k, k + 1)]
        if np.any(ph[0][1]) or np.any(ph[1][1]):
            raise DomainError("F_hat evaluated outside the flow's box")
        phv = ph[0][0] + lam * (ph[1][0] - ph[0][0])
        Jv = Jd[0] + lam * (Jd[1] - Jd[0])
        return self.F(r, phv, np.einsum("qj,qji->qi", p, np.linalg.inv(Jv)))


def build_hatF(F: Hamiltonian, flow: Flow, space: SpaceGrid | None = None) -> HatF:
    return HatF(F, flow, flow.target if space is None else space)


@dataclass
class TransportResult:
    u: HJSolution
    uhat: HJSolution
    flow: Flow
    diagnostics: dict


def solve_deterministic(F: Hamiltonian, alpha, space: SpaceGrid, tgrid: TimeGrid, cfl=DEFAULT_CFL) -> HJSolution:
    """The ``A = 0`` problem ``u_t = F(t, theta, Du)``."""
    pts = space.points
    return solve_hj(
        lambda k, lam, t, u, p: F(t, pts, p),
        alpha(pts), space, tgrid, F.lip_p, cfl=cfl, ham_bound=F.bound,
    )


def solve_transport(problem: TransportProblem, flow: Flow | None = None) -> TransportResult:
    rp, space = problem.rp, problem.space
    alpha0 = np.asarray(problem.alpha(space.points), dtype=float)
    if flow is None:
        flow = solve_flow(problem.A, rp, space)
    if flow.is_identity:
        uhat = solve_deterministic(problem.F, problem.alpha, space, rp.grid, problem.cfl)
        diag = {"identity_flow": True, "inverse_residual": 0.0, "extension_used": False, **uhat.meta}
        return TransportResult(uhat, uhat, flow, diag)
    hat = build_hatF(problem.F, flow, space)
    uhat = solve_hj(hat.on_nodes, alpha0, space, rp.grid, hat.dissipation, cfl=problem.cfl,
                    ham_bound=problem.F.bound)
    zeta_nodes = flow.zeta.z[:, hat.node_index]
    if not np.all(np.isfinite(zeta_nodes)):
        raise DomainError("inverse flow undefined on the PDE box")
    u = np.empty_like(uhat.values)
    extension = False
    for k in range(rp.grid.n + 1):
        val, outside = interpolate(uhat.values[k], space, zeta_nodes[k], ncomp=0, return_outside=True)
        u[k] = val
        extension |= bool(np.any(outside))
    if extension:
        logger.warning("inverse flow leaves the PDE box; constant extension of u_hat was used")
    diag = {
        "identity_flow": False,
        "inverse_residual": flow.inverse_residual(),
        "extension_used": extension,
        "flow_cells": list(flow.space.cells),
        **uhat.meta,
    }
    return TransportResult(HJSolution(space, rp.grid.points, u, dict(uhat.meta)), uhat, flow, diag)


# -- strong solutions -------------------------------------------------------------

def check_strong_transport(u: StrongControlled, problem: TransportProblem, margin: int = 2) -> dict:
    """Sup residuals of ``u^x = sigma(u, Du)``, ``u^xx`` and ``u^t = F`` on interior nodes."""
    sp = u.space
    if sp is None:
        raise ValueError("needs a spatial strongly controlled candidate")
    sig = TransportSigma(problem.A)
    mask = sp.interior_mask(margin)
    pts = sp.points[mask]
    res = {"x": 0.0, "xx": 0.0, "t": 0.0}
    z_all = u.z.reshape(u.grid.n + 1, sp.size)
    zx = u.zx.reshape(u.grid.n + 1, sp.size, -1)
    zxx = u.zxx.reshape(u.grid.n + 1, sp.size, u.rp.dim, u.rp.dim)
    zt = u.zt.reshape(u.grid.n + 1, sp.size)
    for k in range(u.grid.n + 1):
        z = z_all[k]
        Du = gradient(z, sp)[mask]
        D2u = hessian(z, sp)[mask]
        b, q, c = sigma_targets(sig, pts, z[mask], Du, D2u)
        Fv = np.asarray(problem.F(u.grid.time(k), pts, Du), dtype=float)
        res["x"] = max(res["x"], float(np.max(np.abs(zx[k, mask] - b))))
        res["xx"] = max(res["xx"], float(np.max(np.abs(zxx[k, mask] - c))))
        res["t"] = max(res["t"], float(np.max(np.abs(zt[k, mask] - Fv))))
    return res
