"""Independent reference computations used by the acceptance checks and the CLI.

Nothing here reuses the solvers it is meant to check: quadrature comes from
scipy, closed forms are written out, and regression oracles only look at
increments of sampled data.
"""
from __future__ import annotations

import numpy as np
from scipy.integrate import quad, solve_ivp

from .increments import fit_log2_slope


def quadrature(f, a: float, b: float, **kw) -> float:
    """Adaptive Gauss-Kronrod quadrature of a scalar function."""
    kw.setdefault("epsabs", 1e-13)
    kw.setdefault("epsrel", 1e-13)
    kw.setdefault("limit", 500)
    return float(quad(f, a, b, **kw)[0])


def ode_flow(rhs, y0, t0: float, t1: float, t_eval=None, rtol=1e-12, atol=1e-12) -> np.ndarray:
    """High-order (DOP853) reference trajectory of ``y' = rhs(t, y)``."""
    sol = solve_ivp(rhs, (t0, t1), np.atleast_1d(y0), method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y.T


def gubinelli_regression(w, rp, s: int, lags=range(1, 33)) -> np.ndarray:
    """Least-squares Gubinelli derivative of sampled ``w`` at time index ``s``.

    Forward increments ``w_{s+L} - w_s`` are fitted against
    ``[dx, dx^a dx^b, antisymmetric area, L h]`` plus the cubic and
    ``dx L h`` corrections over the given lags.  ``w``
    has shape ``(n+1, K)``; the ``dx`` coefficients are returned as ``(K, d)``.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    n = rp.grid.n
    lags = np.array([L for L in lags if s + L <= n])
    d = rp.dim
    dx = rp.dx(np.full(lags.size, s), s + lags)
    x2 = rp.x2(np.full(lags.size, s), s + lags).reshape(lags.size, d * d)
    # symmetric parts of x2 are products of dx; keep only the antisymmetric entries
    iu = np.triu_indices(d, k=1)
    anti = (x2.reshape(-1, d, d) - np.swapaxes(x2.reshape(-1, d, d), 1, 2))[:, iu[0], iu[1]]
    quad_terms = np.stack([dx[:, a] * dx[:, b] for a in range(d) for b in range(a, d)], axis=1)
    dt = (lags * rp.grid.h)[:, None]
    cubic = np.stack([dx[:, a] * dx[:, b] * dx[:, c] for a in range(d) for b in range(a, d) for c in range(b, d)], axis=1)
    cols = [dx, quad_terms, anti, dt, cubic, dx * dt]
    Xmat = np.concatenate(cols, axis=1)
    rhs = w[s + lags] - w[s]
    coef, *_ = np.linalg.lstsq(Xmat, rhs, rcond=None)
    return coef[:d].T


def box_shrink_slope(remainder_at, levels) -> tuple[float, np.ndarray, np.ndarray]:
    """Slope of ``log2 max|R|`` against ``log2 r`` for box radii ``r = 2^-k``.

    ``remainder_at(k)`` returns the sup of |remainder| over boxes with
    ``|t-s| + |nu-theta| = 2^-k`` (or comparable).
    """
    r = np.array([2.0 ** (-k) for k in levels])
    m = np.array([remainder_at(k) for k in levels])
    return fit_log2_slope(r, m), r, m


def characteristics_transport_const(alpha, c: float, dx0t):
    """Solution ``alpha(theta - c dx_{0t})`` of ``du = -c du/dtheta dx`` (F = 0)."""
    return lambda theta: alpha(theta - c * dx0t)


def hopf_lax_neg_abs(alpha, theta, t: float, radius: float | None = None, n_search: int = 4001):
    """Viscosity solution of ``u_t = -|u_theta|`` by the Hopf-Lax formula.

    ``u(t, theta) = min_{|y - theta| <= t} alpha(y)`` in one dimension.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    s = np.linspace(-t, t, n_search)
    return _on_shifts(alpha, theta, s).min(axis=1)


def hopf_lax_pos_abs(alpha, theta, t: float, n_search: int = 4001):
    """``u_t = |u_theta|``: ``u(t, theta) = max_{|y - theta| <= t} alpha(y)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    s = np.linspace(-t, t, n_search)
    return _on_shifts(alpha, theta, s).max(axis=1)


def _on_shifts(alpha, theta, s):
    y = (theta[:, None] + s[None, :]).reshape(-1, 1)
    return np.asarray(alpha(y), dtype=float).reshape(theta.size, s.size)


def direct_transport_scheme(F, A_field, xdot, alpha, space, t_grid, cfl: float = 0.9, lip_p: float = 1.0):
    """Monotone Lax-Friedrichs solve of ``u_t = F(t, theta, Du) - Du . A(theta) xdot(t)`` in 1D.

    This is the classical-coefficient form of the rough transport equation for
    a differentiable driver; it knows nothing about flows or transformations.
    ``A_field(theta (P, 1)) -> (P, d)``, ``xdot(t) -> (d,)``.
    """
    theta = space.points[:, 0]
    h = space.spacing[0]
    u = np.asarray(alpha(theta[:, None]), dtype=float)
    Aval = A_field(theta[:, None])
    amax = float(np.max(np.abs(Aval).sum(axis=1))) if Aval.size else 0.0
    t_grid = np.asarray(t_grid)
    vmax = max(abs(float(np.max(np.abs(xdot(t))))) for t in t_grid) if amax > 0 else 0.0
    alpha_lf = lip_p + amax * vmax
    out = [u.copy()]
    for k in range(t_grid.size - 1):
        t0, t1 = t_grid[k], t_grid[k + 1]
        dt_total = t1 - t0
        nsub = max(1, int(np.ceil(dt_total * alpha_lf / (cfl * h))))
        dt = dt_total / nsub
        for j in range(nsub):
            t = t0 + j * dt
            up = np.empty_like(u)
            um = np.empty_like(u)
            up[:-1] = (u[1:] - u[:-1]) / h
            up[-1] = 0.0
            um[1:] = (u[1:] - u[:-1]) / h
            um[0] = 0.0
            pbar = 0.5 * (up + um)
            v = Aval @ np.atleast_1d(xdot(t))
            Hm = F(t, theta[:, None], pbar[:, None]) - pbar * v
            u = u + dt * (Hm + 0.5 * alpha_lf * (up - um))
        out.append(u.copy())
    return np.array(out)
