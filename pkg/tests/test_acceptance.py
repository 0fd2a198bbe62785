"""Acceptance suite: one group of tests per criterion, tolerances as stated.

Every reference value comes from an oracle that does not share code with the
quantity under test (closed forms, quadrature, pointwise ODE/RDE solves,
regression, a direct classical scheme).
"""
import filecmp
import os

import numpy as np
import pytest

from roughvisc.controlled import (
    CallbackField, WeakControlled, _SpatialDerivatives, compose_strong, rough_integral,
    strong_as_integral_check, taylor_box_remainder,
)
from roughvisc.experiments import PRESETS, resolve_config, run_experiment
from roughvisc.flow import exponential_jacobian, solve_flow, solve_points
from roughvisc.increments import (
    GridPath, Increment2, TimeGrid, delta1, delta2, delta3, fit_log2_slope, lambda_residual_check,
)
from roughvisc.oracles import box_shrink_slope, direct_transport_scheme, gubinelli_regression, quadrature
from roughvisc.registry import F_abs_grad, F_zero, make_initial, make_noise_family, make_vector_fields
from roughvisc.rough_path import check_chen, check_geometric, lift_piecewise_linear, synth_driver
from roughvisc.semilinear import SemilinearProblem, scalar_vector_field, solve_semilinear
from roughvisc.spatial import SpaceGrid, embed_index
from roughvisc.transport import HJSolution, TransportProblem, solve_deterministic, solve_transport
from roughvisc.viscosity import default_test_family, make_test_transport, viscosity_verify


def _driver(kind, n, seed=0, dim=1, **kw):
    return synth_driver(kind, dim, TimeGrid(0.0, 1.0, n), seed, **kw)


def _increment(rp):
    return rp.x.values - rp.x.values[0]


# -- 1 --------------------------------------------------------------------------------

@pytest.mark.criterion(1)
def test_coboundary_of_coboundary_vanishes():
    rng = np.random.default_rng(11)
    worst2 = worst3 = 0.0
    for _ in range(100):
        n = int(rng.choice([8, 16, 32]))
        d = int(rng.integers(1, 4))
        g = GridPath(TimeGrid(0.0, 1.0, n), rng.normal(size=(n + 1, d)).cumsum(axis=0))
        tab = rng.normal(size=(n + 1, n + 1, d))
        f = Increment2.from_table(g.grid, tab)
        i, u, v, j = np.sort(rng.integers(0, n + 1, size=(4, 500)), axis=0)
        worst2 = max(worst2, float(np.max(np.abs(delta2(delta1(g))(i, u, j)))))
        worst3 = max(worst3, float(np.max(np.abs(delta3(delta2(f))(i, u, v, j)))))
    assert worst2 <= 1e-12
    assert worst3 <= 1e-12


@pytest.mark.criterion(1)
@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("n", [64, 2 ** 12])
def test_piecewise_linear_lift_chen_and_geometric(d, n):
    rng = np.random.default_rng(d * n)
    x = np.concatenate([np.zeros((1, d)), rng.normal(size=(n, d)).cumsum(axis=0) / np.sqrt(n)])
    rp = lift_piecewise_linear(GridPath(TimeGrid(0.0, 1.0, n), x))
    assert check_chen(rp) <= 1e-12
    assert check_geometric(rp) <= 1e-12


# -- 2 --------------------------------------------------------------------------------

def _random_cocycle(rng, mu, n=64):
    grid = TimeGrid(0.0, 1.0, n)
    t = grid.points
    k = np.arange(1, 6)
    B = np.sin(np.outer(t, k) * rng.uniform(1, 4) + rng.uniform(0, 6, 5)) @ rng.normal(size=5) / k.sum()
    C = np.cos(np.outer(t, k) * rng.uniform(1, 4) + rng.uniform(0, 6, 5)) @ rng.normal(size=5) / k.sum()
    c = rng.normal()
    e = mu + rng.uniform(0.0, 0.5)

    def g(i, j):
        gap = np.abs(t[j] - t[i])
        return (B[j] - B[i]) * (C[j] - C[i]) + c * gap ** e

    return delta2(Increment2(grid, g, ()))


@pytest.mark.criterion(2)
@pytest.mark.parametrize("mu", [1.1, 1.3, 1.5])
def test_sewing_map_bound(mu):
    rng = np.random.default_rng(int(mu * 10))
    for _ in range(50):
        rep = lambda_residual_check(_random_cocycle(rng, mu), mu)
        assert rep.lambda_norm <= rep.h_norm / (2 ** mu - 2) * (1 + 1e-6), rep


# -- 3 --------------------------------------------------------------------------------

@pytest.mark.criterion(3)
@pytest.mark.parametrize("kind,d", [("brownian_pl", 1), ("brownian_pl", 3), ("weierstrass_pl", 2), ("sinusoid", 2)])
def test_integral_of_x_dx(kind, d):
    rp = _driver(kind, 1024, seed=5, dim=d)
    x = rp.x.values
    mu = WeakControlled(rp, x, np.broadcast_to(np.eye(d), x.shape + (d,)), min(rp.gamma, 0.5))
    z = rough_integral(mu).z
    exact = 0.5 * (np.sum(x ** 2, axis=1) - np.sum(x[0] ** 2))
    assert np.max(np.abs(z - exact)) <= 1e-12


@pytest.mark.criterion(3)
def test_smooth_driver_integral_matches_quadrature():
    n, scale = 2 ** 12, 0.8
    rp = _driver("sinusoid", n, scale=scale)
    x = rp.x.values
    z = rough_integral(WeakControlled(rp, np.cos(x), -np.sin(x)[:, :, None], 0.5)).z
    ref = quadrature(lambda t: np.cos(scale * np.sin(2 * np.pi * t)) * scale * 2 * np.pi * np.cos(2 * np.pi * t),
                     0.0, 0.75)
    assert abs(z[3 * n // 4] - ref) <= 1e-6


# -- 4 --------------------------------------------------------------------------------

@pytest.mark.criterion(4)
@pytest.mark.parametrize("kind", ["brownian_pl", "sinusoid"])
def test_integral_is_its_own_strong_decomposition(kind):
    rp = _driver(kind, 2048, seed=2, dim=2)
    x = rp.x.values
    mu = WeakControlled(rp, np.sin(x), np.cos(x)[:, :, None] * np.eye(2)[None], min(rp.gamma, 0.5))
    z = rough_integral(mu, eta=np.cos(x[:, 0]))
    assert strong_as_integral_check(z) <= 1e-10


@pytest.mark.criterion(4)
def test_flow_integral_convergence_slope():
    rp = _driver("sinusoid", 2048, scale=0.5)
    A = make_vector_fields({"name": "sine", "amp": 0.5}, 1, 1)
    fl = solve_flow(A, rp, SpaceGrid.interval(-1, 1, 16))
    strides = [64, 32, 16, 8, 4]
    res = [rp.grid.n // s for s in strides]
    err = [strong_as_integral_check(fl.phi, stride=s) for s in strides]
    slope = -fit_log2_slope(res, err)
    assert slope >= 1.0 - 0.2, (res, err)


# -- 5 --------------------------------------------------------------------------------

def _rough_field(times, x):
    # z_t(eta) = sin(eta) + x_t cos(eta): rough component cos(eta), no area or drift
    def fn(k, t, pts):
        e = pts
        xt = x[k, 0]
        Q = pts.shape[0]
        return {
            "z": np.sin(e) + xt * np.cos(e),
            "zx": np.cos(e)[:, :, None],
            "zxx": np.zeros((Q, 1, 1, 1)),
            "zt": np.zeros((Q, 1)),
            "Dz": (np.cos(e) - xt * np.sin(e))[:, :, None],
            "D2z": (-np.sin(e) - xt * np.cos(e))[:, :, None, None],
            "Dzx": -np.sin(e)[:, :, None, None],
        }

    return CallbackField(fn, times)


@pytest.mark.criterion(5)
def test_composition_derivative_matches_regression():
    rp = _driver("brownian_pl", 4096, seed=9, scale=0.6)
    sp = SpaceGrid.interval(-1, 1, 16)
    A = make_vector_fields({"name": "sine", "amp": 0.7}, 1, 1)
    fl = solve_flow(A, rp, sp)
    idx = embed_index(sp, fl.space)
    phi = fl.phi
    from roughvisc.controlled import StrongControlled
    y = StrongControlled(rp, phi.z[:, idx], phi.zx[:, idx], phi.zxx[:, idx], phi.zt[:, idx], phi.kappa, sp)
    comp = compose_strong(_rough_field(rp.grid.points, _increment(rp)), y)
    cases = [(s, q) for s in (300, 1500, 2700, 3500, 3900) for q in (4, 11)]
    for s, q in cases:
        est = gubinelli_regression(comp.z[:, q, 0], rp, s)[0, 0]
        exact = comp.zx[s, q, 0, 0]
        assert abs(est - exact) <= 1e-2 * abs(exact), (s, q, est, exact)


# -- 6 --------------------------------------------------------------------------------

@pytest.mark.criterion(6)
def test_linear_flow_closed_form():
    rp = _driver("sinusoid", 2 ** 12, scale=0.5)
    pts = np.linspace(-1, 1, 17)[:, None]
    phi, _ = solve_points(make_vector_fields({"name": "linear", "a": 1.0}, 1, 1), rp, pts, jacobian=False)
    exact = pts[None, :, 0] * np.exp(_increment(rp))
    assert np.max(np.abs(phi[:, :, 0] - exact)) <= 1e-6


@pytest.mark.criterion(6)
@pytest.mark.parametrize("kind", ["brownian_pl", "weierstrass_pl"])
def test_flow_inverse_residual_and_refinement(kind):
    rp = _driver(kind, 512, seed=4, scale=0.5)
    A = make_vector_fields({"name": "sine", "amp": 0.5}, 1, 1)
    cells = [16, 32, 64, 128]
    res = [solve_flow(A, rp, SpaceGrid.interval(-1, 1, c)).inverse_residual() for c in cells]
    assert res[-1] <= 1e-3
    assert -fit_log2_slope(cells, res) >= 1.0, res


@pytest.mark.criterion(6)
@pytest.mark.parametrize("kind", ["brownian_pl", "sinusoid"])
def test_jacobian_routes_agree(kind):
    rp = _driver(kind, 1024, seed=6, scale=0.5)
    A = make_vector_fields({"name": "sine", "amp": 0.6}, 1, 1)
    pts = np.linspace(-1, 1, 21)[:, None]
    phi, J = solve_points(A, rp, pts)
    J_exp = exponential_jacobian(A, rp, phi)
    assert np.max(np.abs(J[:, :, 0, 0] - J_exp) / np.abs(J_exp)) <= 1e-3


# -- 7 --------------------------------------------------------------------------------

@pytest.mark.criterion(7)
def test_transport_constant_field_characteristics():
    rp = _driver("brownian_pl", 1024, seed=1, scale=0.5)
    sp = SpaceGrid.interval(-2, 2, 512)
    alpha = make_initial({"name": "gaussian", "width": 0.3})
    c = 0.7
    res = solve_transport(TransportProblem(F_zero(), make_vector_fields({"name": "const", "c": c}, 1, 1),
                                           alpha, rp, sp))
    dx = _increment(rp)[:, 0]
    exact = np.stack([alpha(sp.points - c * dx[k]) for k in range(rp.grid.n + 1)])
    assert np.max(np.abs(res.u.values - exact)) <= 1e-2


@pytest.mark.criterion(7)
def test_transport_smooth_driver_matches_direct_scheme():
    scale = 0.5
    rp = _driver("sinusoid", 512, scale=scale)
    sp = SpaceGrid.interval(-2, 2, 256)
    alpha = make_initial({"name": "gaussian", "width": 0.4})
    A = make_vector_fields({"name": "sine", "amp": 0.8}, 1, 1)
    F = F_abs_grad(-1.0)
    res = solve_transport(TransportProblem(F, A, alpha, rp, sp))
    xdot = lambda t: np.array([scale * 2 * np.pi * np.cos(2 * np.pi * t)])
    ref = direct_transport_scheme(F, lambda th: A.field(th)[:, 0, :], xdot, alpha, sp, rp.grid.points)
    assert np.max(np.abs(res.u.values - ref)) <= 5e-2


@pytest.mark.criterion(7)
@pytest.mark.parametrize("F", [F_abs_grad(-1.0), F_abs_grad(0.5), F_zero()])
def test_transport_zero_field_degenerates_bitwise(F):
    rp = _driver("brownian_pl", 256, seed=3)
    sp = SpaceGrid.interval(-2, 2, 128)
    alpha = make_initial("neg_abs")
    res = solve_transport(TransportProblem(F, make_vector_fields("zero", 1, 1), alpha, rp, sp))
    ref = solve_deterministic(F, alpha, sp, rp.grid)
    assert np.array_equal(res.u.values, ref.values)


# -- 8 --------------------------------------------------------------------------------

@pytest.mark.criterion(8)
def test_semilinear_exponential_closed_form():
    rp = _driver("sinusoid", 2 ** 12, scale=0.5)
    sp = SpaceGrid.interval(-2, 2, 64)
    alpha = make_initial({"name": "gaussian", "width": 0.4})
    r = solve_semilinear(SemilinearProblem(F_zero(), make_noise_family({"name": "linear", "a": 1.0}),
                                           alpha, rp, sp))
    exact = alpha(sp.points)[None] * np.exp(_increment(rp)[:, 0])[:, None]
    assert np.max(np.abs(r.u.values - exact)) <= 1e-6
    assert r.diagnostics["min_dv_phi"] > 0


@pytest.mark.criterion(8)
@pytest.mark.parametrize("kind", ["sinusoid", "brownian_pl"])
@pytest.mark.parametrize("H", [{"name": "tanh", "a": 0.8}, {"name": "sin", "a": 0.5}])
def test_semilinear_zero_hamiltonian_is_pointwise_flow(kind, H):
    rp = _driver(kind, 1024, seed=3, scale=0.5)
    sp = SpaceGrid.interval(-2, 2, 64)
    alpha = make_initial({"name": "gaussian", "width": 0.4})
    fam = make_noise_family(H)
    r = solve_semilinear(SemilinearProblem(F_zero(), fam, alpha, rp, sp))
    phi, _ = solve_points(scalar_vector_field(fam), rp, alpha(sp.points)[:, None], jacobian=False)
    assert np.max(np.abs(r.u.values - phi[:, :, 0])) <= 1e-8
    assert r.diagnostics["min_dv_phi"] > 0


@pytest.mark.criterion(8)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_semilinear_monotone_on_nonzero_hamiltonian(seed):
    rp = _driver("brownian_pl", 512, seed=seed, scale=0.5)
    sp = SpaceGrid.interval(-2, 2, 64)
    r = solve_semilinear(SemilinearProblem(F_abs_grad(-1.0), make_noise_family({"name": "tanh", "a": 0.8}),
                                           make_initial({"name": "gaussian", "width": 0.4}), rp, sp))
    assert r.diagnostics["min_dv_phi"] > 0
    assert np.all(r.sflow.J > 0)


# -- 9 --------------------------------------------------------------------------------

def _closed_form_case(kind, c, alpha, n=256, cells=256, seed=1):
    rp = _driver(kind, n, seed=seed, scale=0.5)
    sp = SpaceGrid.interval(-2, 2, cells)
    dx = _increment(rp)[:, 0]
    vals = np.stack([alpha(sp.points - c * dx[k]) for k in range(rp.grid.n + 1)])
    fl = solve_flow(make_vector_fields({"name": "const", "c": c}, 1, 1), rp, sp)
    return rp, sp, HJSolution(sp, rp.grid.points, vals), fl


@pytest.mark.criterion(9)
@pytest.mark.parametrize("kind", ["sinusoid", "brownian_pl"])
def test_closed_form_passes_viscosity_verification(kind):
    alpha = make_initial({"name": "gaussian", "width": 0.3})
    rp, sp, u, fl = _closed_form_case(kind, 0.7, alpha)
    family = [make_test_transport(chi, fl) for chi in default_test_family(sp)]
    assert len(family) == 20
    rep = viscosity_verify(u, F_zero(), family, tol=1e-2, alpha=alpha)
    assert rep["n_violations"] == 0, rep["violations"][:3]
    assert rep["n_checked"] > 0


@pytest.mark.criterion(9)
@pytest.mark.parametrize("fault", ["growing_bump", "time_shift"])
def test_fault_injection_is_detected(fault):
    alpha = make_initial({"name": "gaussian", "width": 0.3})
    rp, sp, u, fl = _closed_form_case("brownian_pl", 0.7, alpha, n=128, cells=128)
    pts = sp.points[:, 0]
    if fault == "growing_bump":
        bad = u.values + u.times[:, None] * np.exp(-pts ** 2 / 0.08)[None]
    else:
        # transported with the wrong speed: a different (non-)solution
        dx = _increment(rp)[:, 0]
        bad = np.stack([alpha(sp.points - 0.7 * dx[k] - 0.8 * u.times[k]) for k in range(rp.grid.n + 1)])
    family = [make_test_transport(chi, fl) for chi in default_test_family(sp)]
    rep = viscosity_verify(HJSolution(sp, u.times, bad), F_zero(), family, tol=1e-2, alpha=alpha)
    assert rep["n_violations"] >= 1


# -- 10 -------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def taylor_flow():
    rp = _driver("brownian_pl", 1024, seed=2, scale=0.5)
    sp = SpaceGrid.interval(-1, 1, 64)
    return solve_flow(make_vector_fields({"name": "sine", "amp": 0.5}, 1, 1), rp, sp), sp


@pytest.mark.criterion(10)
@pytest.mark.parametrize("which", [0, 5, 8, 13, 18])
def test_taylor_remainder_box_shrink(taylor_flow, which):
    fl, sp = taylor_flow
    tf = make_test_transport(default_test_family(sp)[which], fl)
    cache = _SpatialDerivatives(tf.psi)
    s, q = fl.rp.grid.n // 4, sp.size // 2
    slope, _, m = box_shrink_slope(lambda k: taylor_box_remainder(tf.psi, s, q, 2.0 ** -k, cache=cache),
                                   range(2, 7))
    assert slope > 1.0, m


# -- 11 -------------------------------------------------------------------------------

@pytest.mark.criterion(11)
@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_are_reproducible(name, tmp_path):
    cfg = resolve_config(f"preset:{name}")
    a, b = tmp_path / "a", tmp_path / "b"
    ma = run_experiment(cfg, a, seed=17)
    run_experiment(cfg, b, seed=17)
    assert ma.status == "pass", [c for c in ma.checks if not c.passed]
    names = sorted(os.listdir(a))
    assert names == sorted(os.listdir(b))
    assert any(f.endswith(".csv") for f in names)
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert not mismatch and not errors
    for f in names:
        if f.endswith(".csv"):
            raw = (a / f).read_bytes()
            assert b"\r" not in raw
