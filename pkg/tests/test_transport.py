import numpy as np
import pytest

from roughvisc.controlled import StrongControlled
from roughvisc.flow import solve_flow
from roughvisc.increments import TimeGrid
from roughvisc.oracles import hopf_lax_neg_abs
from roughvisc.registry import F_abs_grad, F_const, F_zero, make_initial, make_vector_fields
from roughvisc.rough_path import synth_driver
from roughvisc.spatial import SpaceGrid
from roughvisc.transport import (
    CFLError, HJSolution, TransportProblem, build_hatF, check_strong_transport, one_sided_gradients,
    solve_deterministic, solve_hj, solve_transport,
)


def _rp(kind="brownian_pl", n=128, seed=1, scale=0.5):
    return synth_driver(kind, 1, TimeGrid(0.0, 1.0, n), seed, scale=scale)


def test_one_sided_gradients_of_linear_function():
    sp = SpaceGrid.interval(0, 1, 10)
    u = 3 * sp.points[:, 0]
    plus, minus = one_sided_gradients(u, sp)
    assert np.allclose(plus[1:-1], 3) and np.allclose(minus[1:-1], 3)


def test_deterministic_solver_against_hopf_lax():
    sp = SpaceGrid.interval(-2, 2, 256)
    alpha = make_initial("neg_abs")
    tg = TimeGrid(0.0, 0.5, 64)
    hj = solve_deterministic(F_abs_grad(-1.0), alpha, sp, tg)
    th = sp.points[:, 0]
    ref = hopf_lax_neg_abs(alpha, th, 0.5)
    inner = np.abs(th) < 1.4
    assert np.max(np.abs(hj.values[-1, inner] - ref[inner])) < 2e-2
    assert hj.meta["stability_bounds_hold"]


def test_constant_hamiltonian_shifts_values():
    sp = SpaceGrid.interval(-2, 2, 64)
    alpha = make_initial("gaussian")
    hj = solve_deterministic(F_const(2.0), alpha, sp, TimeGrid(0.0, 0.5, 16))
    assert np.allclose(hj.values[-1], alpha(sp.points) + 1.0, atol=1e-13)


def test_cfl_violation_is_reported():
    sp = SpaceGrid.interval(-1, 1, 64)
    ham = lambda k, lam, t, u, p: -np.abs(p[:, 0])
    u0 = np.zeros(sp.size)
    with pytest.raises(CFLError):
        solve_hj(ham, u0, sp, TimeGrid(0.0, 1.0, 4), np.array([1.0]), substeps=1)


def test_problem_validation():
    rp = _rp()
    sp = SpaceGrid.interval(-1, 1, 8)
    with pytest.raises(ValueError):
        TransportProblem(F_zero(), make_vector_fields("zero", 2, 1), make_initial("gaussian"), rp, sp)
    with pytest.raises(ValueError):
        TransportProblem(F_zero(), make_vector_fields("zero", 1, 2), make_initial("gaussian"), rp, sp)


def test_hatF_reduces_to_F_for_identity_flow():
    rp = _rp()
    sp = SpaceGrid.interval(-1, 1, 16)
    fl = solve_flow(make_vector_fields("zero", 1, 1), rp, sp)
    F = F_abs_grad(-2.0)
    hat = build_hatF(F, fl)
    p = np.full((sp.size, 1), 0.3)
    assert np.allclose(hat(0.5, sp.points, p), F(0.5, sp.points, p))


def test_hatF_uses_inverse_jacobian():
    # linear flow phi = theta e^{x}: Dzeta-pulled gradients scale by e^{-dx}
    rp = _rp("sinusoid", 256, scale=0.3)
    sp = SpaceGrid.interval(-1, 1, 32)
    fl = solve_flow(make_vector_fields({"name": "linear", "a": 1.0}, 1, 1), rp, sp)
    F = F_abs_grad(1.0)
    hat = build_hatF(F, fl)
    k = 64
    r = rp.grid.time(k)
    th = np.array([[0.25]])
    p = np.array([[1.0]])
    dx = rp.x.values[k, 0] - rp.x.values[0, 0]
    assert hat(r, th, p)[0] == pytest.approx(np.exp(-dx), rel=1e-4)


def test_transport_solution_is_deterministic(tmp_path):
    rp = _rp(n=64)
    sp = SpaceGrid.interval(-2, 2, 64)
    prob = TransportProblem(F_abs_grad(-1.0), make_vector_fields({"name": "sine", "amp": 0.5}, 1, 1),
                            make_initial("gaussian"), rp, sp)
    a, b = solve_transport(prob), solve_transport(prob)
    assert np.array_equal(a.u.values, b.u.values)
    a.u.save_csv(tmp_path / "u.csv", stride=4)
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "t,theta0,u"
    assert len(lines) == 1 + 17 * 65
    assert a.diagnostics["stability_bounds_hold"]


def test_strong_transport_check_on_closed_form():
    # u = alpha(theta - c dx) is a strong solution with u^x = -c Du, u^xx = c^2 D2u
    rp = _rp("brownian_pl", 64)
    sp = SpaceGrid.interval(-2, 2, 256)
    c = 0.7
    th = sp.points[:, 0]
    dx = rp.x.values[:, 0] - rp.x.values[0, 0]
    y = th[None, :] - c * dx[:, None]
    z = np.exp(-y ** 2)
    Dz = -2 * y * z
    D2z = (4 * y ** 2 - 2) * z
    n1, P = z.shape
    u = StrongControlled(rp, z[..., None], (-c * Dz)[..., None, None], (c * c * D2z)[..., None, None, None],
                         np.zeros((n1, P, 1)), 0.45, sp)
    prob = TransportProblem(F_zero(), make_vector_fields({"name": "const", "c": c}, 1, 1),
                            make_initial("gaussian"), rp, sp)
    res = check_strong_transport(u, prob)
    assert res["x"] < 1e-3 and res["xx"] < 1e-2 and res["t"] == 0.0


def test_write_field_csv_precision(tmp_path):
    sp = SpaceGrid.interval(0, 1, 2)
    sol = HJSolution(sp, np.array([0.0, 0.1]), np.array([[1 / 3, 0.0, 1.0], [2 / 3, 0.5, np.pi]]))
    sol.save_csv(tmp_path / "u.csv")
    row = (tmp_path / "u.csv").read_text().splitlines()[1]
    assert row == "0,0,0.33333333333333331"
