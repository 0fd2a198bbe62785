"""Rough flows ``phi_t`` of ``dy = A(y) dx``, their Jacobians and inverses ``zeta_t``."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .controlled import StrongControlled, WeakControlled, rough_integral
from .fields import VectorFieldFamily
from .indexing import contract_x, contract_xx
from .rough_path import RoughPath
from .spatial import DomainError, SpaceGrid, gradient, interpolate

logger = logging.getLogger(__name__)

BOX_INFLATION = 1.5


class FlowExitError(RuntimeError):
    """A trajectory left the inflated working box."""


class NewtonFailure(RuntimeError):
    pass


def davie_step(A: VectorFieldFamily, y, dx, x2):
    """``y + A_l(y) dx^l + [A_{l2} A_{l1}](y) x^{2;l2 l1}`` for points ``y (Q, m)``."""
    return y + contract_x(A.field(y), dx) + contract_xx(A.bracket(y), x2)


def step_matrix(A: VectorFieldFamily, y, dx, x2):
    """Derivative of the Davie step map at ``y``: ``(Q, m, m)``."""
    m = y.shape[1]
    M = np.einsum("qilj,l->qij", A.jac(y), dx) + np.einsum("qiabj,ba->qij", A.bracket_jac(y), x2)
    return M + np.eye(m)


def solve_points(A: VectorFieldFamily, rp: RoughPath, pts, *, jacobian: bool = True, box=None):
    """Davie scheme started from every point of ``pts (Q, m)``.

    Returns ``phi (n+1, Q, m)`` and, if requested, the variational Jacobian
    ``J (n+1, Q, m, m)`` which is the exact derivative of the discrete map.
    ``box = (lo, hi)`` triggers an abort when a trajectory leaves it.
    """
    pts = np.asarray(pts, dtype=float)
    Q, m = pts.shape
    if m != A.m or rp.dim != A.d:
        raise ValueError(f"vector fields act on R^{A.m} with {A.d} drivers; got points in R^{m}, driver dim {rp.dim}")
    n = rp.grid.n
    dx = rp.dx_adjacent()
    x2 = rp.x2_adjacent()
    phi = np.empty((n + 1, Q, m))
    phi[0] = pts
    J = None
    if jacobian:
        J = np.empty((n + 1, Q, m, m))
        J[0] = np.eye(m)
    if A.is_zero:
        phi[:] = pts
        if jacobian:
            J[:] = np.eye(m)
        return phi, J
    y = pts.copy()
    for k in range(n):
        if jacobian:
            J[k + 1] = np.einsum("qij,qjk->qik", step_matrix(A, y, dx[k], x2[k]), J[k])
        y = davie_step(A, y, dx[k], x2[k])
        if not np.all(np.isfinite(y)):
            raise FlowExitError(f"non-finite flow values at step {k + 1}")
        if box is not None:
            lo, hi = box
            bad = np.any((y < lo) | (y > hi), axis=1)
            if np.any(bad):
                q = int(np.flatnonzero(bad)[0])
                raise FlowExitError(
                    f"trajectory from {pts[q].tolist()} left the working box at t={rp.grid.time(k + 1):.6g} "
                    f"(value {y[q].tolist()})"
                )
        phi[k + 1] = y
    return phi, J


@dataclass
class Flow:
    rp: RoughPath
    A: VectorFieldFamily
    space: SpaceGrid
    phi: StrongControlled
    dphi: np.ndarray
    d2phi: np.ndarray | None = None
    zeta: StrongControlled | None = None
    dzeta: np.ndarray | None = None
    valid: np.ndarray | None = None
    target: SpaceGrid | None = None
    newton_iterations: int = 0

    @property
    def is_identity(self) -> bool:
        return self.A.is_zero

    def inverse_residual(self) -> float:
        """``sup |zeta_t(phi_t(theta)) - theta|`` over target-box nodes, via interpolation of zeta."""
        if self.zeta is None:
            raise ValueError("inverse flow not computed")
        sp = self.space
        pts = sp.points
        sel = np.ones(sp.size, dtype=bool) if self.target is None else self.target.contains(pts)
        worst = 0.0
        for k in range(self.rp.grid.n + 1):
            img = self.phi.z[k, sel]
            back, outside = interpolate(self.zeta.z[k], sp, img, ncomp=1, return_outside=True)
            ok = ~outside & np.all(np.isfinite(back), axis=1)
            if np.any(ok):
                worst = max(worst, float(np.max(np.abs(back[ok] - pts[sel][ok]))))
        return worst

    def save_csv(self, path, stride: int = 1) -> None:
        """Rows ``t, theta..., phi..., zeta..., J...`` on every ``stride``-th time level."""
        sp = self.space
        pts = sp.points
        m = sp.m
        header = (["t"] + [f"theta{i}" for i in range(m)] + [f"phi{i}" for i in range(m)]
                  + [f"zeta{i}" for i in range(m)] + [f"J{i}{j}" for i in range(m) for j in range(m)])
        times = self.rp.grid.points
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(0, self.rp.grid.n + 1, stride):
                zk = self.zeta.z[k] if self.zeta is not None else np.full((sp.size, m), np.nan)
                for q in range(sp.size):
                    row = [times[k], *pts[q], *self.phi.z[k, q], *zk[q], *self.dphi[k, q].ravel()]
                    w.writerow([f"{v:.17g}" for v in row])

    def to_dict(self) -> dict:
        return {
            "format": "roughvisc.flow",
            "vector_fields": {"name": self.A.name, "params": self.A.params, "m": self.A.m, "d": self.A.d},
            "space": self.space.to_dict(),
            "target": None if self.target is None else self.target.to_dict(),
            "roughpath": self.rp.to_dict(include_area=False),
            "phi": self.phi.z.tolist(),
            "dphi": self.dphi.tolist(),
            "zeta": None if self.zeta is None else self.zeta.z.tolist(),
            "dzeta": None if self.dzeta is None else self.dzeta.tolist(),
        }

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, allow_nan=True)


def load_flow_json(path, A: VectorFieldFamily | None = None) -> Flow:
    """Rebuild a checkpointed flow; the decomposition is recomputed from ``A``.

    Without ``A`` the vector fields are looked up in the builtin registry.
    """
    from .registry import make_vector_fields

    with open(path) as fh:
        doc = json.load(fh)
    rp = RoughPath.from_dict(doc["roughpath"])
    sp = doc["space"]
    space = SpaceGrid(tuple(sp["lower"]), tuple(sp["upper"]), tuple(sp["cells"]))
    tg = doc.get("target")
    target = None if tg is None else SpaceGrid(tuple(tg["lower"]), tuple(tg["upper"]), tuple(tg["cells"]))
    if A is None:
        vf = doc["vector_fields"]
        A = make_vector_fields({"name": vf["name"], **vf["params"]}, vf["m"], vf["d"])
    phi = np.array(doc["phi"], dtype=float)
    dphi = np.array(doc["dphi"], dtype=float)
    flow = _assemble_phi(A, rp, space, phi, dphi)
    flow.target = target
    if doc.get("zeta") is not None:
        zeta = np.array(doc["zeta"], dtype=float)
        dzeta = np.array(doc["dzeta"], dtype=float)
        _assemble_zeta(flow, zeta, dzeta)
    return flow


def _assemble_phi(A, rp, space, phi, dphi) -> Flow:
    n1, P, m = phi.shape
    flat = phi.reshape(-1, m)
    zx = A.field(flat).reshape(n1, P, m, A.d)
    zxx = A.bracket(flat).reshape(n1, P, m, A.d, A.d)
    strong = StrongControlled(rp, phi, zx, zxx, np.zeros_like(phi), min(rp.gamma, 0.5), space)
    d2 = gradient(dphi, space, ncomp=2)
    return Flow(rp, A, space, strong, dphi, d2)


def solve_flow(
    A: VectorFieldFamily,
    rp: RoughPath,
    box: SpaceGrid,
    *,
    pad: int | str = "auto",
    inflation: float = BOX_INFLATION,
    inverse: bool = True,
    validate: bool = True,
) -> Flow:
    """Flow of ``dy = A(y) dx`` on the nodes of ``box`` padded by ``pad`` extra cells.

    With ``pad="auto"`` the padding grows until the inverse flow is well defined on
    the whole target box (plus an interpolation margin).  Trajectories leaving the
    padded box inflated by ``inflation`` abort the solve.
    """
    if validate:
        lo, hi = box.inflated(inflation)
        A.validate((lo, hi))
    if A.is_zero:
        flow = _identity_flow(A, rp, box)
        return flow
    if pad == "auto":
        pad_cells = _initial_pad(A, rp, box)
        for _ in range(8):
            try:
                return _solve_flow_padded(A, rp, box, pad_cells, inflation, inverse)
            except DomainError as exc:
                logger.info("padding %d too small (%s); doubling", pad_cells, exc)
                pad_cells *= 2
        raise DomainError("could not find a padding for which the inverse flow covers the box")
    return _solve_flow_padded(A, rp, box, int(pad), inflation, inverse)


def _initial_pad(A, rp, box) -> int:
    """Padding from the largest excursion of a few probe trajectories."""
    rng = np.random.default_rng(0)
    lo, hi = np.array(box.lower), np.array(box.upper)
    corners = np.array(np.meshgrid(*[[a, b] for a, b in zip(lo, hi)], indexing="ij")).reshape(box.m, -1).T
    probes = np.concatenate([corners, rng.uniform(lo, hi, size=(32, box.m))])
    phi, _ = solve_points(A, rp, probes, jacobian=False)
    disp = float(np.max(np.abs(phi - probes[None])))
    h = float(np.min(box.spacing))
    return int(np.ceil(1.1 * disp / h)) + 6


def _identity_flow(A, rp, box) -> Flow:
    n1, P, m = rp.grid.n + 1, box.size, box.m
    phi = np.broadcast_to(box.points, (n1, P, m)).copy()
    eye = np.broadcast_to(np.eye(m), (n1, P, m, m)).copy()
    zeros_x = np.zeros((n1, P, m, A.d))
    strong = StrongControlled(rp, phi, zeros_x, np.zeros((n1, P, m, A.d, A.d)), np.zeros((n1, P, m)),
                              min(rp.gamma, 0.5), box)
    zeta = StrongControlled(rp, phi.copy(), zeros_x.copy(), np.zeros((n1, P, m, A.d, A.d)),
                            np.zeros((n1, P, m)), min(rp.gamma, 0.5), box)
    return Flow(rp, A, box, strong, eye, np.zeros((n1, P, m, m, m)), zeta, eye.copy(),
                np.ones(P, dtype=bool), box)


def _solve_flow_padded(A, rp, box, pad_cells, inflation, inverse) -> Flow:
    space = box.padded(pad_cells)
    lo, hi = space.inflated(inflation)
    phi, J = solve_points(A, rp, space.points, jacobian=True, box=(lo, hi))
    flow = _assemble_phi(A, rp, space, phi, J)
    flow.target = box
    if inverse:
        zeta, dzeta, its = _newton_inverse(flow)
        flow.newton_iterations = its
        _assemble_zeta(flow, zeta, dzeta)
        # the target box and a two-cell interpolation margin must be covered
        need = box.padded(2)
        sel = need.contains(space.points) & space.contains(space.points)
        if not np.all(flow.valid[sel]):
            raise DomainError("inverse flow undefined on part of the target box")
    return flow


def flow_jacobian(flow: Flow):
    """``(dphi, d2phi)``; ``dphi`` from the variational recursion, ``d2phi`` by central differences."""
    if flow.d2phi is None:
        flow.d2phi = gradient(flow.dphi, flow.space, ncomp=2)
    return flow.dphi, flow.d2phi


def exponential_jacobian(A: VectorFieldFamily, rp: RoughPath, phi) -> np.ndarray:
    """Scalar-flow Jacobian ``exp(sum_l int A_l'(phi) dx^l)`` via the compensated rough integral.

    ``phi`` has shape ``(n+1, Q, 1)``; returns ``(n+1, Q)``.  The integrand
    ``mu_l = A_l'(phi)`` has Gubinelli derivative ``mu^{x;lk} = A_l''(phi) A_k(phi)``.
    """
    if A.m != 1:
        raise ValueError("the exponential formula applies to scalar flows")
    n1, Q, _ = phi.shape
    flat = phi.reshape(-1, 1)
    dA = A.jac(flat)[:, 0, :, 0]  # (N, d)
    d2A = A.hess(flat)[:, 0, :, 0, 0]
    a = A.field(flat)[:, 0, :]
    mu = dA.reshape(n1, Q, A.d)
    mux = (d2A[:, :, None] * a[:, None, :]).reshape(n1, Q, A.d, A.d)
    integral = rough_integral(WeakControlled(rp, mu, mux, min(rp.gamma, 0.5)))
    return np.exp(integral.z)


def _newton_inverse(flow: Flow, max_iter: int = 50, tol: float = 1e-12):
    """Solve ``phi_t(psi) = eta`` for every node ``eta`` and every time level.

    Starts from the previous level's solution, with step halving whenever
    the residual grows.  Points whose preimage leaves the grid are marked invalid.
    """
    sp = flow.space
    eta = sp.points
    P, m = eta.shape
    n1 = flow.rp.grid.n + 1
    zeta = np.empty((n1, P, m))
    dzeta = np.empty((n1, P, m, m))
    zeta[0] = eta
    dzeta[0] = np.eye(m)
    valid = np.ones(P, dtype=bool)
    lo, hi = np.array(sp.lower), np.array(sp.upper)
    total_its = 0
    psi = eta.copy()
    for k in range(1, n1):
        # phi and J interpolated together: one stencil per Newton iterate
        both = np.concatenate([flow.phi.z[k], flow.dphi[k].reshape(P, m * m)], axis=1)

        def evaluate(x, target):
            v = interpolate(both, sp, x, ncomp=1)
            return v[:, :m] - target, v[:, m:].reshape(-1, m, m)

        r, Jp = evaluate(psi, eta)
        rn = np.max(np.abs(r), axis=1)
        scale = max(1.0, float(np.max(np.abs(eta))))
        converged = False
        for it in range(max_iter):
            active = valid & (rn > tol * scale)
            if not np.any(active):
                converged = True
                break
            total_its += 1
            idx = np.flatnonzero(active)
            step = np.linalg.solve(Jp[idx], r[idx][..., None])[..., 0]
            lam = np.ones(idx.size)
            for _ in range(30):
                cand = np.clip(psi[idx] - lam[:, None] * step, lo, hi)
                rc, Jc = evaluate(cand, eta[idx])
                rcn = np.max(np.abs(rc), axis=1)
                worse = rcn > rn[idx]
                if not np.any(worse):
                    break
                lam[worse] *= 0.5
            psi[idx], r[idx], rn[idx], Jp[idx] = cand, rc, rcn, Jc
        edge = np.any((psi <= lo + 1e-12) | (psi >= hi - 1e-12), axis=1) & (rn > 1e-8 * scale)
        if not converged:
            stuck = valid & ~edge & (rn > 1e-8 * scale)
            if np.any(stuck):
                q = int(np.flatnonzero(stuck)[0])
                raise NewtonFailure(
                    f"Newton did not converge at t={flow.rp.grid.time(k):.6g}, eta={eta[q].tolist()} "
                    f"(residual {rn[q]:.3e})"
                )
        # preimages beyond the grid cannot be represented
        valid &= ~edge
        zeta[k] = psi
        dzeta[k] = np.linalg.inv(Jp)
    zeta[:, ~valid] = np.nan
    dzeta[:, ~valid] = np.nan
    flow.valid = valid
    return zeta, dzeta, total_its


def _assemble_zeta(flow: Flow, zeta, dzeta) -> None:
    """Attach ``zeta`` with ``zeta^x = -A_l zeta`` and ``zeta^xx = A_{l1} A_{l2} zeta``."""
    A, sp = flow.A, flow.space
    n1, P, m = zeta.shape
    if flow.valid is None:
        flow.valid = np.all(np.isfinite(zeta[-1]), axis=1)
    pts = sp.points
    a = A.field(pts)  # (P, m, d) [k, l]
    da = A.jac(pts)  # (P, m, d, m) [j, l, k]
    d2zeta = gradient(dzeta, sp, ncomp=2)  # [i, j, k] = d_k d_j zeta^i
    zx = -np.einsum("pkl,tpik->tpil", a, dzeta)
    term1 = np.einsum("pka,pjbk,tpij->tpiab", a, da, dzeta)
    term2 = np.einsum("pka,pjb,tpijk->tpiab", a, a, d2zeta)
    zxx = term1 + term2
    flow.zeta = StrongControlled(flow.rp, zeta, zx, zxx, np.zeros_like(zeta), flow.phi.kappa, sp)
    flow.dzeta = dzeta


def inverse_by_reversal(A: VectorFieldFamily, rp: RoughPath, pts, k: int) -> np.ndarray:
    """``zeta_{t_k}`` at ``pts`` by running the Davie scheme along the reversed driver.

    Segment areas of a piecewise-linear lift are symmetric, so the reversed
    step uses ``-dx`` with area ``0.5 dx (x) dx``.  Cross-validation only.
    """
    y = np.asarray(pts, dtype=float).copy()
    dx = rp.dx_adjacent()
    for j in range(k - 1, -1, -1):
        d = -dx[j]
        y = davie_step(A, y, d, 0.5 * np.outer(d, d))
    return y
