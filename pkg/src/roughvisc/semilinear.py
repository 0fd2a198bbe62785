"""Semilinear rough PDE ``du = F(Du) dt + H_l(u) dx^l`` via the scalar flow.

With ``phi_t(v)`` the flow of ``dy = H_l(y) dx^l`` and ``J = d_v phi``, the
function ``u_tilde = phi^{-1}(u)`` solves the deterministic problem
``u_tilde_t = F_tilde(r, u_tilde, Du_tilde)``, ``F_tilde(r, v, p) = F(J p) / J``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .fields import ScalarFamily, VectorFieldFamily
from .flow import exponential_jacobian, solve_points
from .registry import Hamiltonian
from .rough_path import RoughPath
from .spatial import DomainError, SpaceGrid, gradient, interpolate, monotone_hermite
from .transport import DEFAULT_CFL, HJSolution, solve_deterministic, solve_hj

logger = logging.getLogger(__name__)

DEFAULT_V_CELLS = 256
MONO_TOL = 1e-8  # round-off level for the sampled d_v F_tilde


class MonotonicityError(RuntimeError):
    """The scalar flow failed to be strictly increasing in ``v``."""


class SchemeMonotonicityWarning(UserWarning):
    pass


def scalar_vector_field(H: ScalarFamily) -> VectorFieldFamily:
    """``H_1..H_d`` viewed as vector fields on ``R``."""
    return VectorFieldFamily(
        1, H.d,
        lambda y: H.f(y[:, 0])[:, None, :],
        lambda y: H.df(y[:, 0])[:, None, :, None],
        lambda y: H.d2f(y[:, 0])[:, None, :, None, None],
        name=H.name, params=H.params, is_zero=H.is_zero,
    )


@dataclass
class ScalarFlow:
    """Scalar flow ``phi_t(v)`` on a uniform ``v`` grid with both Jacobian routes.

    ``J`` is the exponential-formula Jacobian (used downstream), ``J_var`` the
    derivative of the discrete stepper, ``dJ`` the ``v``-derivative of ``J``.
    """

    rp: RoughPath
    H: ScalarFamily
    vspace: SpaceGrid
    phi: np.ndarray
    J: np.ndarray
    J_var: np.ndarray
    dJ: np.ndarray

    def __post_init__(self):
        self._splines = {}

    @property
    def v(self) -> np.ndarray:
        return self.vspace.points[:, 0]

    @property
    def v_range(self) -> tuple:
        return self.vspace.lower[0], self.vspace.upper[0]

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        lo, hi = self.v_range
        tol = 1e-10 * max(1.0, abs(lo), abs(hi))
        if np.any(v < lo - tol) or np.any(v > hi + tol) or not np.all(np.isfinite(v)):
            raise DomainError(
                f"v outside the scalar-flow grid [{lo:.6g}, {hi:.6g}]: "
                f"got [{np.nanmin(v):.6g}, {np.nanmax(v):.6g}]"
            )
        return v

    def phi_at(self, k: int, v):
        """Monotone cubic Hermite interpolation of ``phi_k``.

        The slopes are ``J_var``, the exact derivative of the discrete map that
        produced ``phi``; the exponential-formula ``J`` differs from it by the
        time-discretisation error, which would make interpolation first order in ``dv``.
        """
        v = self._check(v)
        if self.H.is_zero:
            return v.copy()
        sp = self._splines.get(k)
        if sp is None:
            sp = self._splines[k] = monotone_hermite(self.v, self.phi[k], self.J_var[k])
        return sp(v)

    def J_at(self, k: int, v):
        v = self._check(v)
        return interpolate(self.J[k], self.vspace, v.reshape(-1, 1)).reshape(v.shape)

    def dJ_at(self, k: int, v):
        v = self._check(v)
        return interpolate(self.dJ[k], self.vspace, v.reshape(-1, 1)).reshape(v.shape)

    def jacobian_agreement(self) -> float:
        """Relative sup difference between the two Jacobian routes."""
        return float(np.max(np.abs(self.J - self.J_var) / np.abs(self.J)))

    def min_jacobian(self) -> float:
        return float(min(np.min(self.J), np.min(self.J_var)))


def solve_scalar_flow(H: ScalarFamily, rp: RoughPath, vspace: SpaceGrid) -> ScalarFlow:
    """Scalar flow and its Jacobian on the nodes of ``vspace``.

    Raises :class:`MonotonicityError` when any Jacobian is non-positive.
    """
    if vspace.m != 1:
        raise ValueError("the v grid is one-dimensional")
    if H.d != rp.dim:
        raise ValueError("number of H components does not match the driver dimension")
    n1, V = rp.grid.n + 1, vspace.size
    v = vspace.points
    if H.is_zero:
        phi = np.broadcast_to(v[:, 0], (n1, V)).copy()
        one = np.ones((n1, V))
        return ScalarFlow(rp, H, vspace, phi, one, one.copy(), np.zeros((n1, V)))
    A = scalar_vector_field(H)
    phi, Jv = solve_points(A, rp, v, jacobian=True)
    J = exponential_jacobian(A, rp, phi)
    J_var = Jv[:, :, 0, 0]
    if not (np.all(J_var > 0) and np.all(J > 0)):
        bad = np.argwhere(J_var <= 0)[0]
        raise MonotonicityError(
            f"d_v phi <= 0 at t={rp.grid.time(int(bad[0])):.6g}, v={v[bad[1], 0]:.6g}; step too coarse"
        )
    dJ = np.gradient(J, v[:, 0], axis=1, edge_order=2)
    return ScalarFlow(rp, H, vspace, phi[:, :, 0], J, J_var, dJ)


class TildeF:
    """``F_tilde(r, v, p) = F(J_r(v) p) / J_r(v)`` closed over the scalar flow."""

    def __init__(self, F: Hamiltonian, sflow: ScalarFlow, points=None):
        self.F, self.sflow, self.points = F, sflow, points

    def _J(self, k, lam, v):
        Jk = self.sflow.J_at(k, v)
        if lam == 0.0:
            return Jk
        return Jk + lam * (self.sflow.J_at(k + 1, v) - Jk)

    def on_nodes(self, k: int, lam: float, t: float, u, p):
        J = self._J(k, lam, u)
        return self.F(t, self.points, J[:, None] * p) / J

    def __call__(self, r: float, v, p):
        g = self.sflow.rp.grid
        s = (r - g.t0) / g.h
        k = int(np.clip(np.floor(s), 0, g.n - 1))
        v = np.atleast_1d(np.asarray(v, dtype=float))
        p = np.asarray(p, dtype=float).reshape(v.size, -1)
        J = self._J(k, float(s - k), v)
        return self.F(r, self.points, J[:, None] * p) / J


def build_tildeF(F: Hamiltonian, sflow: ScalarFlow, points=None) -> TildeF:
    return TildeF(F, sflow, points)


@dataclass
class SemilinearProblem:
    F: Hamiltonian
    H: ScalarFamily
    alpha: object
    rp: RoughPath
    space: SpaceGrid
    v_range: tuple | None = None
    v_cells: int = DEFAULT_V_CELLS
    cfl: float = DEFAULT_CFL

    def __post_init__(self):
        if self.H.d != self.rp.dim:
            raise ValueError("number of H components does not match the driver dimension")
        a0 = np.asarray(self.alpha(self.space.points), dtype=float)
        if a0.shape != (self.space.size,) or not np.all(np.isfinite(a0)):
            raise ValueError("initial datum must be finite on the grid")
        lo, hi = float(a0.min()) - 1.0, float(a0.max()) + 1.0
        v = np.linspace(lo, hi, 33)
        for vals in (self.H.f(v), self.H.df(v), self.H.d2f(v)):
            if not np.all(np.isfinite(vals)):
                raise ValueError("H and its derivatives must be finite on the v range")


@dataclass
class SemilinearResult:
    u: HJSolution
    utilde: HJSolution
    sflow: ScalarFlow | None
    diagnostics: dict


def _hamiltonian_bound(F: Hamiltonian, alpha0, space: SpaceGrid, jratio: float) -> float:
    if F.bound is not None:
        return F.bound
    # unbounded-in-p builtins: |F(0)| + lip |Du| with the slope of alpha inflated by the Jacobian spread
    Da = gradient(alpha0, space)
    lip_alpha = float(np.nanmax(np.abs(Da).sum(axis=1))) if np.any(np.isfinite(Da)) else 0.0
    f0 = float(np.max(np.abs(F(0.0, space.points[:1], np.zeros((1, space.m))))))
    return f0 + F.lip_p * lip_alpha * jratio


def _v_space(alpha0, margin: float, cells: int) -> SpaceGrid:
    lo, hi = float(np.min(alpha0)), float(np.max(alpha0))
    pad = max(margin, 1e-3 * max(1.0, hi - lo))
    return SpaceGrid.interval(lo - pad, hi + pad, cells)


def solve_semilinear(problem: SemilinearProblem, *, max_range_iterations: int = 4) -> SemilinearResult:
    rp, space, F = problem.rp, problem.space, problem.F
    alpha0 = np.asarray(problem.alpha(space.points), dtype=float)
    if problem.H.is_zero:
        u = solve_deterministic(F, problem.alpha, space, rp.grid, problem.cfl)
        return SemilinearResult(u, u, None, {"identity_flow": True, **u.meta})
    T = rp.grid.t1 - rp.grid.t0
    if problem.v_range is not None:
        vspace = SpaceGrid.interval(*problem.v_range, problem.v_cells)
        sflow = solve_scalar_flow(problem.H, rp, vspace)
    else:
        jratio, inv_j = 1.0, 1.0
        margin = 0.0
        for _ in range(max_range_iterations):
            need = T * _hamiltonian_bound(F, alpha0, space, jratio) * max(1.0, inv_j)
            if margin >= need and margin > 0:
                break
            margin = max(1.25 * need, 0.05)
            vspace = _v_space(alpha0, margin, problem.v_cells)
            sflow = solve_scalar_flow(problem.H, rp, vspace)
            inv_j = float(np.max(1.0 / sflow.J))
            jratio = float(np.max(sflow.J) / np.min(sflow.J))
    hat = build_tildeF(F, sflow, space.points)
    mono = _sampled_dv_tildeF(hat, alpha0, space)
    if mono > MONO_TOL:
        warnings.warn(
            f"sampled d_v F_tilde reaches {mono:.3g} > 0; the scheme is not monotone in u",
            SchemeMonotonicityWarning, stacklevel=2,
        )
    utilde = solve_hj(hat.on_nodes, alpha0, space, rp.grid, F.lip_p, cfl=problem.cfl)
    lo, hi = sflow.v_range
    if np.min(utilde.values) < lo or np.max(utilde.values) > hi:
        raise DomainError(
            f"u_tilde range [{np.min(utilde.values):.6g}, {np.max(utilde.values):.6g}] "
            f"exits the v grid [{lo:.6g}, {hi:.6g}]"
        )
    u = np.empty_like(utilde.values)
    for k in range(rp.grid.n + 1):
        u[k] = sflow.phi_at(k, utilde.values[k])
    diag = {
        "identity_flow": False,
        "v_range": [lo, hi],
        "v_cells": problem.v_cells,
        "min_dv_phi": sflow.min_jacobian(),
        "jacobian_route_gap": sflow.jacobian_agreement(),
        "sampled_max_dv_tildeF": mono,
        **utilde.meta,
    }
    return SemilinearResult(HJSolution(space, rp.grid.points, u, dict(utilde.meta)), utilde, sflow, diag)


def _sampled_dv_tildeF(hat: TildeF, alpha0, space: SpaceGrid, n: int = 64, seed: int = 0) -> float:
    """Largest sampled ``d_v F_tilde`` (central differences in ``v``) over a few times."""
    rng = np.random.default_rng(seed)
    sf = hat.sflow
    lo, hi = sf.v_range
    eps = 1e-4 * max(1.0, hi - lo)
    v = rng.uniform(lo + eps, hi - eps, size=n)
    Da = gradient(alpha0, space)
    scale = float(np.nanmax(np.abs(Da))) if np.any(np.isfinite(Da)) else 1.0
    p = rng.uniform(-1, 1, size=(n, space.m)) * max(scale, 1e-3)
    pts = space.points[rng.integers(0, space.size, size=n)]
    ng = sf.rp.grid.n
    worst = -np.inf
    for k in np.unique(np.linspace(0, ng, 9).astype(int)):
        t = sf.rp.grid.time(int(k))
        Jp, Jm = sf.J_at(int(k), v + eps), sf.J_at(int(k), v - eps)
        fp = hat.F(t, pts, Jp[:, None] * p) / Jp
        fm = hat.F(t, pts, Jm[:, None] * p) / Jm
        worst = max(worst, float(np.max((fp - fm) / (2 * eps))))
    return worst


def check_condition_M(F: Hamiltonian, p_samples, C: float | None = None, eps: float = 1e-6) -> dict:
    """Sampled ``g(p) = p . DF(p) - F(p)`` (central differences for ``DF``).

    Case (a) is ``g <= C``, case (b) is ``g >= -C``.  Without ``C`` the
    smallest constants for which each case holds on the samples are reported
    and the cases count as holding when those are finite.  Sampling cannot
    certify an almost-everywhere statement; these are estimates only.
    """
    p = np.asarray(p_samples, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    Q, m = p.shape
    th = np.zeros((Q, m))
    DF = np.empty((Q, m))
    for i in range(m):
        e = np.zeros(m)
        e[i] = eps
        DF[:, i] = (F(0.0, th, p + e) - F(0.0, th, p - e)) / (2 * eps)
    g = np.sum(p * DF, axis=1) - F(0.0, th, p)
    sup, inf = float(np.max(g)), float(np.min(g))
    const_a, const_b = max(sup, 0.0), max(-inf, 0.0)
    if C is None:
        holds_a, holds_b = bool(np.isfinite(sup)), bool(np.isfinite(inf))
    else:
        tol = 1e-6 * max(1.0, abs(C))
        holds_a, holds_b = sup <= C + tol, inf >= -C - tol
    return {
        "holds_a": bool(holds_a),
        "holds_b": bool(holds_b),
        "constant_estimate": {"a": const_a, "b": const_b},
        "sup": sup,
        "inf": inf,
        "argmax": p[int(np.argmax(g))].tolist(),
        "n_samples": Q,
    }
