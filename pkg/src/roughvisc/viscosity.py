"""Test functions, jets and sampled checks of the viscosity sub/supersolution conditions.

Test functions for the rough equations are produced from deterministic
``chi`` by the flow correspondences: ``chi o zeta`` for transport noise and
``phi o chi`` for semilinear noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.ndimage import maximum_filter, minimum_filter

from .controlled import DeterministicField, StrongControlled, compose_strong, jet_coefficients, sigma_targets
from .fields import Sigma, SemilinearSigma, TransportSigma, ZeroSigma
from .flow import Flow
from .indexing import contract_x, contract_xx
from .rough_path import RoughPath
from .semilinear import ScalarFlow
from .spatial import DomainError, SpaceGrid, embed_index, gradient, hessian, interpolate

STRICTNESS = 1e-9
NEAR_TOUCH = 1e-3


# -- deterministic test data -----------------------------------------------------

@dataclass
class Chi:
    """Deterministic ``C^{1,2}`` datum ``chi(t, theta)`` with derivatives, vectorised over ``(Q, m)``."""

    name: str
    f: Callable
    grad: Callable
    hess: Callable
    dt: Callable

    def field(self, times, d: int) -> DeterministicField:
        return DeterministicField(
            lambda t, x: self.f(t, x)[:, None],
            lambda t, x: self.grad(t, x)[:, None, :],
            lambda t, x: self.hess(t, x)[:, None, :, :],
            lambda t, x: self.dt(t, x)[:, None],
            times, d,
        )


def chi_quadratic(center, scale: float, sign: float = 1.0) -> Chi:
    c = np.asarray(center, dtype=float)
    k = sign / scale ** 2

    return Chi(
        f"quadratic{'+' if sign > 0 else '-'}@{np.round(c, 3).tolist()}",
        lambda t, x: 0.5 * k * np.sum((x - c) ** 2, axis=1),
        lambda t, x: k * (x - c),
        lambda t, x: np.broadcast_to(k * np.eye(x.shape[1]), (x.shape[0], x.shape[1], x.shape[1])).copy(),
        lambda t, x: np.zeros(x.shape[0]),
    )


def chi_plane(slope, rate: float, origin) -> Chi:
    a = np.asarray(slope, dtype=float)
    o = np.asarray(origin, dtype=float)
    return Chi(
        f"plane a={np.round(a, 3).tolist()} b={rate:g}",
        lambda t, x: (x - o) @ a + rate * t,
        lambda t, x: np.broadcast_to(a, x.shape).copy(),
        lambda t, x: np.zeros((x.shape[0], x.shape[1], x.shape[1])),
        lambda t, x: np.full(x.shape[0], float(rate)),
    )


def chi_gaussian(center, width: float, amp: float, phase: float = 0.0, mod: float = 0.5) -> Chi:
    """``amp (1 + mod sin(2 pi t + phase)) exp(-|x - c|^2 / (2 w^2))``."""
    c = np.asarray(center, dtype=float)
    w2 = width ** 2

    def g(x):
        return np.exp(-np.sum((x - c) ** 2, axis=1) / (2 * w2))

    def s(t):
        return amp * (1 + mod * np.sin(2 * np.pi * t + phase))

    def hess(t, x):
        r = (x - c) / w2
        m = x.shape[1]
        return (s(t) * g(x))[:, None, None] * (r[:, :, None] * r[:, None, :] - np.eye(m) / w2)

    return Chi(
        f"gaussian amp={amp:g}@{np.round(c, 3).tolist()}",
        lambda t, x: s(t) * g(x),
        lambda t, x: -(s(t) * g(x))[:, None] * (x - c) / w2,
        hess,
        lambda t, x: amp * mod * 2 * np.pi * np.cos(2 * np.pi * t + phase) * g(x),
    )


def default_test_family(box: SpaceGrid) -> list[Chi]:
    """The fixed 20-member library: 6 quadratic bumps, 6 tilted planes, 8 modulated Gaussians."""
    lo, hi = np.array(box.lower), np.array(box.upper)
    width = hi - lo
    mid = 0.5 * (lo + hi)
    m = box.m
    e = np.ones(m) / np.sqrt(m)
    centers = [lo + f * width for f in (0.25, 0.5, 0.75)]
    scale = 0.25 * float(np.min(width))
    fam = [chi_quadratic(c, scale, s) for s in (1.0, -1.0) for c in centers]
    for a, b in ((0.5, 0.5), (-0.5, 0.5), (0.5, -0.5), (0.0, 1.0), (0.0, -1.0), (1.0, 0.0)):
        fam.append(chi_plane(a * e, b, mid))
    gcenters = [lo + f * width for f in (0.2, 0.4, 0.6, 0.8)]
    gw = 0.15 * float(np.min(width))
    for j, c in enumerate(gcenters):
        for amp in (1.0, -1.0):
            fam.append(chi_gaussian(c, gw, amp, phase=0.5 * np.pi * j))
    return fam


# -- test functions ---------------------------------------------------------------

@dataclass
class TestFunction:
    """A member of a test-function class: spatial strong path ``psi`` with its drift ``psit``.

    ``Dpsi``/``D2psi`` hold chain-rule derivatives when available; otherwise
    central differences of ``psi`` are used.
    """

    __test__ = False  # not a pytest class

    psi: StrongControlled
    sigma: Sigma
    sigma_tag: str
    name: str = ""
    Dpsi: np.ndarray | None = None
    D2psi: np.ndarray | None = None

    @property
    def values(self) -> np.ndarray:
        return self.psi.z.reshape(self.psi.grid.n + 1, -1)

    @property
    def psit(self) -> np.ndarray:
        return self.psi.zt.reshape(self.psi.grid.n + 1, -1)

    def derivatives(self):
        sp = self.psi.space
        n1 = self.psi.grid.n + 1
        D = gradient(self.values, sp) if self.Dpsi is None else self.Dpsi
        D2 = hessian(self.values, sp) if self.D2psi is None else self.D2psi
        return D.reshape(n1, sp.size, sp.m), D2.reshape(n1, sp.size, sp.m, sp.m)


def _restrict(strong: StrongControlled, idx, space: SpaceGrid) -> StrongControlled:
    return StrongControlled(strong.rp, strong.z[:, idx], strong.zx[:, idx], strong.zxx[:, idx],
                            strong.zt[:, idx], strong.kappa, space)


def make_test_transport(chi: Chi, flow: Flow, space: SpaceGrid | None = None) -> TestFunction:
    """``psi = chi o zeta`` on the flow's target box, decomposed by the composition formulas."""
    space = flow.target if space is None else space
    if flow.zeta is None:
        raise ValueError("flow has no inverse")
    idx = embed_index(space, flow.space)
    zeta = _restrict(flow.zeta, idx, space)
    if not np.all(np.isfinite(zeta.z)):
        raise DomainError("inverse flow undefined on the test-function box")
    times = flow.rp.grid.points
    psi = compose_strong(chi.field(times, flow.rp.dim), zeta, space)
    # chain rule: D psi = D chi(zeta) D zeta,  D2 psi = D zeta^T D2 chi D zeta + D chi . D2 zeta
    dz = flow.dzeta[:, idx]
    d2z = gradient(flow.dzeta, flow.space, ncomp=2)[:, idx]
    n1, P, m = zeta.z.shape
    D = np.empty((n1, P, m))
    D2 = np.empty((n1, P, m, m))
    for k in range(n1):
        t = times[k]
        g = chi.grad(t, zeta.z[k])
        h = chi.hess(t, zeta.z[k])
        D[k] = np.einsum("qi,qij->qj", g, dz[k])
        D2[k] = np.einsum("qia,qij,qjb->qab", dz[k], h, dz[k]) + np.einsum("qi,qiab->qab", g, d2z[k])
    if flow.is_identity:
        D2 = np.stack([chi.hess(times[k], zeta.z[k]) for k in range(n1)])
    return TestFunction(psi, TransportSigma(flow.A), "transport", chi.name, D, D2)


def make_test_semilinear(chi: Chi, sflow: ScalarFlow, space: SpaceGrid) -> TestFunction:
    """``psi = phi o chi``: ``psi^x = H(psi)``, ``psi^xx = [H H'](psi)``, ``psi^t = J(chi) chi^t``."""
    rp = sflow.rp
    times = rp.grid.points
    pts = space.points
    n1, P, m, d = rp.grid.n + 1, space.size, space.m, rp.dim
    z = np.empty((n1, P, 1))
    zx = np.empty((n1, P, 1, d))
    zxx = np.empty((n1, P, 1, d, d))
    zt = np.empty((n1, P, 1))
    D = np.empty((n1, P, m))
    D2 = np.empty((n1, P, m, m))
    H = sflow.H
    for k in range(n1):
        t = times[k]
        c = chi.f(t, pts)
        g = chi.grad(t, pts)
        J = sflow.J_at(k, c)
        ps = sflow.phi_at(k, c)
        z[k, :, 0] = ps
        zx[k, :, 0] = H.f(ps)
        zxx[k, :, 0] = H.bracket(ps)
        zt[k, :, 0] = J * chi.dt(t, pts)
        D[k] = J[:, None] * g
        D2[k] = sflow.dJ_at(k, c)[:, None, None] * g[:, :, None] * g[:, None, :] + J[:, None, None] * chi.hess(t, pts)
    psi = StrongControlled(rp, z, zx, zxx, zt, min(rp.gamma, 0.5), space)
    return TestFunction(psi, SemilinearSigma(H, m), "semilinear", chi.name, D, D2)


def make_test_deterministic(chi: Chi, rp: RoughPath, space: SpaceGrid) -> TestFunction:
    """``sigma = 0``: the test function is ``chi`` itself."""
    from .controlled import identity_path

    psi = compose_strong(chi.field(rp.grid.points, rp.dim), identity_path(rp, space), space)
    times = rp.grid.points
    pts = space.points
    D = np.stack([chi.grad(t, pts) for t in times])
    D2 = np.stack([chi.hess(t, pts) for t in times])
    return TestFunction(psi, ZeroSigma(rp.dim, space.m), "zero", chi.name, D, D2)


def verify_membership(tf: TestFunction, sigma: Sigma | None = None, margin: int = 2) -> dict:
    """Sup residuals of ``psi^x = sigma(psi, D psi)`` and of the ``psi^xx`` identity."""
    sig = tf.sigma if sigma is None else sigma
    sp = tf.psi.space
    n1 = tf.psi.grid.n + 1
    d = tf.psi.rp.dim
    mask = sp.interior_mask(margin) if (tf.Dpsi is None or tf.D2psi is None) else np.ones(sp.size, bool)
    pts = sp.points[mask]
    D, D2 = tf.derivatives()
    zx = tf.psi.zx.reshape(n1, sp.size, d)
    zxx = tf.psi.zxx.reshape(n1, sp.size, d, d)
    rx = rxx = 0.0
    for k in range(n1):
        b, q, c = sigma_targets(sig, pts, tf.values[k, mask], D[k, mask], D2[k, mask])
        rx = max(rx, float(np.max(np.abs(zx[k, mask] - b))))
        rxx = max(rxx, float(np.max(np.abs(zxx[k, mask] - c))))
    return {"x": rx, "xx": rxx, "sigma": sig.kind}


# -- jets ------------------------------------------------------------------------------

@dataclass
class Jet:
    """Space-time jet ``(a0, p0, X0)`` at base ``(t0, theta0)`` with the sigma-derived coefficients."""

    k0: int
    t0: float
    theta0: np.ndarray
    z0: float
    a0: float
    p0: np.ndarray
    X0: np.ndarray
    sigma: Sigma
    b0: np.ndarray = field(default=None)
    q0: np.ndarray = field(default=None)
    c0: np.ndarray = field(default=None)

    def __post_init__(self):
        self.theta0 = np.asarray(self.theta0, dtype=float)
        self.p0 = np.asarray(self.p0, dtype=float)
        self.X0 = np.asarray(self.X0, dtype=float)
        if not np.allclose(self.X0, self.X0.T, rtol=0, atol=1e-12):
            raise ValueError("X0 must be symmetric")
        if self.b0 is None:
            self.b0, self.q0, self.c0 = self.derived()

    def derived(self):
        return jet_coefficients(self.sigma, self.theta0, self.z0, self.p0, self.X0)

    def consistent(self) -> bool:
        b, q, c = self.derived()
        return bool(np.array_equal(b, self.b0) and np.array_equal(q, self.q0) and np.array_equal(c, self.c0))


def jet_local_function(jet: Jet, rp: RoughPath, *, include_hessian: bool = False) -> Callable:
    """``(k, theta (Q, m)) -> (Q,)`` evaluating the rough space-time jet polynomial

    ``z0 + a0 (t - t0) + b0 dx + c0 x2 + p0 (theta - theta0) + q0 dx (theta - theta0)``

    for ``k >= k0``; ``include_hessian`` adds ``(1/2) X0 (theta - theta0)^2``.
    """
    def local(k: int, theta):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        dth = theta - jet.theta0
        dx = rp.dx(jet.k0, k)
        x2 = rp.x2(jet.k0, k)
        val = (
            jet.z0
            + jet.a0 * (rp.grid.time(k) - jet.t0)
            + float(contract_x(jet.b0, dx))
            + float(contract_xx(jet.c0, x2))
            + dth @ jet.p0
            + dth @ (jet.q0 @ dx)
        )
        if include_hessian:
            val = val + 0.5 * np.einsum("qi,ij,qj->q", dth, jet.X0, dth)
        return val

    return local


def fit_quadratic(values, space: SpaceGrid, center, radius: int = 2, cond_max: float = 1e8):
    """Weighted least-squares quadratic fit on the ``(2 radius + 1)^m`` stencil around ``center``.

    Returns ``(value, gradient, hessian)`` at ``center`` or ``None`` for a
    degenerate fit.
    """
    center = np.asarray(center, dtype=float)
    s = space.fractional_index(center)[0]
    base = np.rint(s).astype(int)
    nodes = np.array(space.nodes)
    if np.any(base - radius < 0) or np.any(base + radius > nodes - 1):
        return None
    offs = np.stack(np.meshgrid(*[np.arange(-radius, radius + 1)] * space.m, indexing="ij"), -1).reshape(-1, space.m)
    idx = np.ravel_multi_index(tuple((base + offs).T), space.nodes)
    y = np.asarray(values)[idx]
    dth = space.points[idx] - center
    m = space.m
    iu = np.triu_indices(m)
    cols = [np.ones(len(idx)), *dth.T, *[dth[:, i] * dth[:, j] * (0.5 if i == j else 1.0) for i, j in zip(*iu)]]
    M = np.stack(cols, axis=1)
    w = np.exp(-0.5 * np.sum((dth / (space.spacing * max(radius, 1))) ** 2, axis=1))
    Mw = M * np.sqrt(w)[:, None]
    if np.linalg.cond(Mw) > cond_max:
        return None
    coef, *_ = np.linalg.lstsq(Mw, y * np.sqrt(w), rcond=None)
    p = coef[1:1 + m]
    X = np.zeros((m, m))
    X[iu] = coef[1 + m:]
    X = X + np.triu(X, 1).T
    return float(coef[0]), p, X


# -- viscosity verification -----------------------------------------------------------

@dataclass
class Violation:
    test: str
    kind: str
    k: int
    t: float
    theta: list
    psi_t: float
    F: float
    margin: float
    slack: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _window_radius(family, space: SpaceGrid, rp: RoughPath, lag: int) -> int:
    """Cells a characteristic can travel in ``lag`` steps (the time-neighbour search window)."""
    rad = 0
    n = rp.grid.n
    i = np.arange(0, n + 1)
    dx = np.abs(rp.dx(i[:-1], np.minimum(i[:-1] + lag, n)))
    for tf in family:
        if tf.sigma_tag != "transport":
            continue
        A = np.abs(tf.sigma.A.field(space.points))  # (P, m, d)
        disp = np.max(A, axis=0) @ np.max(dx, axis=0)  # (m,)
        rad = max(rad, int(np.ceil(np.max(disp / space.spacing))) + 1)
    return rad


def _extrema(D, space: SpaceGrid, radius: int, eps: float, margin: int, sign: float, lag: int = 1):
    """Boolean ``(n+1, P)`` mask of strict space-time local maxima of ``sign * D``.

    A point must beat its ``2m`` spatial neighbours and every value in the
    box of ``lag`` levels either side and ``radius`` cells (the neighbourhood
    excludes the point itself) by ``eps``.  Levels beyond the ends are absent,
    so the final level is compared backward only; levels before ``lag`` (whose
    backward window would be truncated) are excluded.
    """
    n1 = D.shape[0]
    G = sign * D.reshape((n1,) + space.nodes)
    ok = np.zeros_like(G, dtype=bool)
    inner = tuple([slice(1, None)] + [slice(margin, n - margin) for n in space.nodes])
    ok[inner] = True
    ok[:lag] = False
    for ax in range(1, space.m + 1):
        fwd = np.full_like(G, -np.inf)
        bwd = np.full_like(G, -np.inf)
        sl = [slice(None)] * G.ndim
        a, b = list(sl), list(sl)
        a[ax], b[ax] = slice(None, -1), slice(1, None)
        fwd[tuple(a)] = G[tuple(b)]
        bwd[tuple(b)] = G[tuple(a)]
        ok &= (G - fwd >= eps) & (G - bwd >= eps)
    foot = np.ones((2 * lag + 1,) + (2 * radius + 1,) * space.m, dtype=bool)
    foot[(lag,) + (radius,) * space.m] = False
    Gp = np.pad(G, [(lag, lag)] + [(radius, radius)] * space.m, mode="edge")
    Gp[:lag] = -np.inf
    Gp[Gp.shape[0] - lag:] = -np.inf
    core = tuple([slice(lag, lag + n1)] + [slice(radius, radius + n) for n in space.nodes])
    W = maximum_filter(Gp, footprint=foot, mode="nearest")[core]
    ok &= G - W >= eps
    return ok.reshape(n1, -1)


def _grid_slack(tf: TestFunction, F, D, times, space: SpaceGrid) -> np.ndarray:
    """Oscillation of ``g = psi^t - F(t, theta, D psi)`` over the (+-1 step, +-1 cell) stencil."""
    pts = space.points
    g = np.stack([tf.psit[k] - np.asarray(F(times[k], pts, D[k]), dtype=float) for k in range(len(times))])
    g = np.where(np.isfinite(g), g, 0.0).reshape((len(times),) + space.nodes)
    size = (3,) + (3,) * space.m
    osc = maximum_filter(g, size=size, mode="nearest") - minimum_filter(g, size=size, mode="nearest")
    return osc.reshape(len(times), -1)


def viscosity_verify(
    u,
    F,
    family: list,
    *,
    tol: float = 1e-2,
    alpha=None,
    strictness: float = STRICTNESS,
    margin: int = 2,
    window: int | str = "auto",
    lag: int | str = "auto",
    near_touch: float = NEAR_TOUCH,
    grid_slack: bool = True,
    max_reported: int = 50,
) -> dict:
    """Sampled sub/supersolution check of a grid solution against a test family.

    ``u`` has ``values (n+1, P)``, ``space`` and ``times``.  At every strict
    space-time local maximum (minimum) of ``u - psi`` the condition
    ``psi^t <= F(t, theta, D psi)`` (resp. ``>=``) is tested with tolerance
    ``tol``.  Time neighbours are compared over a spatial window following the
    characteristics; ``window="auto"`` sizes it from the transport fields.
    Semilinear test functions are only used at near-touching extrema
    (``|u - psi| <= near_touch``) because they are not closed under constant
    shifts.  The final time level is compared backward only.

    The grid only locates a touching point to within a step and a cell, so
    with ``grid_slack`` each check is relaxed by the oscillation of
    ``psi^t - F(D psi)`` over that stencil (a property of ``psi`` alone).
    """
    space = u.space
    vals = np.asarray(u.values)
    times = np.asarray(u.times)
    pts = space.points
    n = vals.shape[0] - 1
    if lag == "auto":
        # the grid maximum is off by O(D2 dtheta^2); compare over a time lag >= 2 dtheta
        dt = float(times[1] - times[0]) if n > 0 else 1.0
        lag = int(np.clip(np.ceil(2 * float(np.min(space.spacing)) / dt), 1, max(1, n // 4)))
    lag = int(lag)
    if family:
        rp = family[0].psi.rp
        radius = _window_radius(family, space, rp, lag) if window == "auto" else int(window)
    else:
        radius = 0
    violations = []
    n_max = n_min = n_checked = n_skipped = 0
    worst = 0.0
    max_slack = 0.0
    per_test = []
    for tf in family:
        psi = tf.values
        if psi.shape != vals.shape:
            raise ValueError("u and the test functions must live on the same grids")
        D, _ = tf.derivatives()
        Dv = vals - psi
        slack = None
        rec = {"test": tf.name, "sigma": tf.sigma_tag, "maxima": 0, "minima": 0, "violations": 0}
        for kind, sign in (("sub", 1.0), ("super", -1.0)):
            mask = _extrema(Dv, space, radius, strictness, margin, sign, lag)
            ks, qs = np.nonzero(mask)
            if kind == "sub":
                n_max += ks.size
                rec["maxima"] = int(ks.size)
            else:
                n_min += ks.size
                rec["minima"] = int(ks.size)
            if tf.sigma_tag == "semilinear":
                near = np.abs(Dv[ks, qs]) <= near_touch
                n_skipped += int(np.sum(~near))
                ks, qs = ks[near], qs[near]
            if ks.size and grid_slack and slack is None:
                slack = _grid_slack(tf, F, D, times, space)
            for k in np.unique(ks):
                sel = qs[ks == k]
                Fv = np.asarray(F(times[k], pts[sel], D[k, sel]), dtype=float)
                pt = tf.psit[k, sel]
                gap = (pt - Fv) if kind == "sub" else (Fv - pt)
                allow = slack[k, sel] if grid_slack else np.zeros(sel.size)
                n_checked += sel.size
                worst = max(worst, float(np.max(gap - allow)))
                max_slack = max(max_slack, float(np.max(allow)))
                for j in np.flatnonzero(gap > tol + allow):
                    rec["violations"] += 1
                    if len(violations) < max_reported:
                        violations.append(Violation(tf.name, kind, int(k), float(times[k]), pts[sel[j]].tolist(),
                                                    float(pt[j]), float(Fv[j]), float(gap[j]), float(allow[j])))
        per_test.append(rec)
    n_viol = sum(r["violations"] for r in per_test)
    init_err = None
    if alpha is not None:
        init_err = float(np.max(np.abs(vals[0] - np.asarray(alpha(pts), dtype=float))))
    passed = n_viol == 0 and (init_err is None or init_err <= tol)
    return {
        "passed": bool(passed),
        "n_violations": int(n_viol),
        "violations": [v.to_dict() for v in violations],
        "n_maxima": int(n_max),
        "n_minima": int(n_min),
        "n_checked": int(n_checked),
        "n_skipped_not_touching": int(n_skipped),
        "worst_margin": worst,
        "max_grid_slack": max_slack,
        "initial_condition_error": init_err,
        "tolerance": tol,
        "window_radius": radius,
        "time_lag": lag,
        "per_test": per_test,
    }


# -- jet correspondence ----------------------------------------------------------------

def jet_correspondence_check(
    u_rough,
    u_det,
    flow: Flow,
    samples,
    *,
    tol: float = 1e-2,
    lam: float = 1.0,
    radius: int = 4,
    horizon: int = 1,
    mutate: str | None = None,
) -> dict:
    """Push deterministic jets of ``u_det`` through ``(p, X) -> (p D zeta, X~)`` and test sides.

    ``samples`` are ``(k, q)`` pairs (time index, node of ``u_rough``'s grid).
    At the base ``theta0`` the deterministic jet is fitted around
    ``zeta_k(theta0)``; its super-jet (``X + lam I``) and sub-jet (``X - lam I``)
    are mapped and the local functions must bound ``u_rough`` from above and
    below (up to ``tol``) on the box of ``radius`` cells and ``horizon`` steps.
    ``mutate="flip_X"`` flips the sign of the mapped ``X~`` (mutation test).
    """
    space = u_rough.space
    rp = flow.rp
    sp_f = flow.space
    d2zeta = gradient(flow.dzeta, sp_f, ncomp=2)
    sig = TransportSigma(flow.A)
    pts = space.points
    n = rp.grid.n
    checked = skipped = failures = 0
    worst = 0.0
    details = []
    h = rp.grid.h
    for k, q in samples:
        k, q = int(k), int(q)
        th0 = pts[q]
        eta0 = interpolate(flow.zeta.z[k], sp_f, th0[None], ncomp=1)[0]
        fit = fit_quadratic(u_det.values[k], u_det.space, eta0, radius=2)
        k_next = min(k + 1, n)
        k_prev = max(k - 1, 0)
        if fit is None or k_next == k_prev:
            skipped += 1
            continue
        z0, p, X = fit
        # time derivative of the deterministic solution at eta0
        e_n = interpolate(u_det.values[k_next], u_det.space, eta0[None])[0]
        e_p = interpolate(u_det.values[k_prev], u_det.space, eta0[None])[0]
        a = float((e_n - e_p) / ((k_next - k_prev) * h))
        Dz = interpolate(flow.dzeta[k], sp_f, th0[None], ncomp=2)[0]
        D2z = interpolate(d2zeta[k], sp_f, th0[None], ncomp=3)[0]
        if not (np.all(np.isfinite(Dz)) and np.all(np.isfinite(D2z))):
            skipped += 1
            continue
        ok_point = True
        for side, shift in (("super", lam), ("sub", -lam)):
            Xs = X + shift * np.eye(space.m)
            pm = p @ Dz
            Xm = np.einsum("ij,ia,jb->ab", Xs, Dz, Dz) + np.einsum("i,iab->ab", p, D2z)
            if mutate == "flip_X":
                Xm = -Xm
            Xm = 0.5 * (Xm + Xm.T)
            jet = Jet(k, rp.grid.time(k), th0, float(u_rough.values[k, q]), a, pm, Xm, sig)
            L = jet_local_function(jet, rp, include_hessian=True)
            s = space.fractional_index(th0)[0].astype(int)
            offs = np.stack(np.meshgrid(*[np.arange(-radius, radius + 1)] * space.m, indexing="ij"), -1).reshape(-1, space.m)
            nb = s + offs
            inside = np.all((nb >= 0) & (nb <= np.array(space.nodes) - 1), axis=1)
            idx = np.ravel_multi_index(tuple(nb[inside].T), space.nodes)
            for kk in range(k, min(k + horizon, n) + 1):
                diff = u_rough.values[kk, idx] - L(kk, pts[idx])
                gap = float(np.max(diff)) if side == "super" else float(np.max(-diff))
                worst = max(worst, gap)
                if gap > tol:
                    ok_point = False
        checked += 1
        if not ok_point:
            failures += 1
            if len(details) < 20:
                details.append({"k": k, "theta": th0.tolist()})
    return {
        "checked": checked,
        "skipped_degenerate": skipped,
        "failures": failures,
        "worst_gap": worst,
        "tolerance": tol,
        "passed": failures == 0 and checked > 0,
        "failed_points": details,
    }
