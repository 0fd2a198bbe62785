import numpy as np
import pytest

from roughvisc.fields import TransportSigma
from roughvisc.flow import solve_flow
from roughvisc.increments import TimeGrid
from roughvisc.registry import F_abs_grad, F_zero, make_initial, make_noise_family, make_vector_fields
from roughvisc.rough_path import synth_driver
from roughvisc.semilinear import SemilinearProblem, solve_semilinear
from roughvisc.spatial import SpaceGrid
from roughvisc.transport import HJSolution, TransportProblem, solve_deterministic, solve_transport
from roughvisc.viscosity import (
    Jet, chi_gaussian, chi_plane, chi_quadratic, default_test_family, fit_quadratic,
    jet_correspondence_check, jet_local_function, make_test_deterministic, make_test_semilinear,
    make_test_transport, verify_membership, viscosity_verify,
)


@pytest.fixture(scope="module")
def setup():
    rp = synth_driver("sinusoid", 1, TimeGrid(0.0, 1.0, 128), 0, scale=0.5)
    sp = SpaceGrid.interval(-2, 2, 128)
    A = make_vector_fields({"name": "const", "c": 0.7}, 1, 1)
    return rp, sp, A, solve_flow(A, rp, sp)


def test_default_family_has_twenty_members():
    fam = default_test_family(SpaceGrid.interval(-1, 1, 8))
    assert len(fam) == 20
    assert len({c.name for c in fam}) == 20


@pytest.mark.parametrize("chi", [chi_quadratic([0.2], 1.0), chi_plane([0.5], 0.5, [0.0]),
                                 chi_gaussian([0.1], 0.4, 1.0, 0.3)])
def test_chi_derivatives(chi):
    th = np.array([[0.3], [-0.4]])
    e = 1e-5
    fd = (chi.f(0.2, th + e) - chi.f(0.2, th - e)) / (2 * e)
    assert np.allclose(chi.grad(0.2, th)[:, 0], fd, atol=1e-7)
    fdt = (chi.f(0.2 + e, th) - chi.f(0.2 - e, th)) / (2 * e)
    assert np.allclose(chi.dt(0.2, th), fdt, atol=1e-7)


def test_transported_test_functions_are_in_the_class(setup):
    rp, sp, A, fl = setup
    for chi in default_test_family(sp)[::4]:
        res = verify_membership(make_test_transport(chi, fl))
        assert res["x"] < 1e-10 and res["xx"] < 1e-10


def test_semilinear_and_deterministic_test_functions():
    rp = synth_driver("brownian_pl", 1, TimeGrid(0.0, 1.0, 64), 1, scale=0.5, check_gamma=False)
    sp = SpaceGrid.interval(-2, 2, 32)
    r = solve_semilinear(SemilinearProblem(F_zero(), make_noise_family({"name": "tanh", "a": 0.8}),
                                           make_initial("gaussian"), rp, sp))
    tf = make_test_semilinear(chi_gaussian([0.0], 0.5, 0.5), r.sflow, sp)
    res = verify_membership(tf)
    assert res["x"] < 1e-8 and res["xx"] < 1e-8
    td = make_test_deterministic(chi_plane([1.0], 0.0, [0.0]), rp, sp)
    assert np.allclose(td.values[7], sp.points[:, 0])


def test_pipeline_solution_verifies(setup):
    rp, sp, A, fl = setup
    alpha = make_initial({"name": "gaussian", "width": 0.3})
    res = solve_transport(TransportProblem(F_zero(), A, alpha, rp, sp), flow=fl)
    fam = [make_test_transport(c, fl) for c in default_test_family(sp)]
    rep = viscosity_verify(res.u, F_zero(), fam, alpha=alpha)
    assert rep["passed"] and rep["initial_condition_error"] < 1e-12


def test_deterministic_hj_solution_verifies_and_wrong_sign_fails():
    rp = synth_driver("sinusoid", 1, TimeGrid(0.0, 0.5, 64), 0, scale=0.0)
    sp = SpaceGrid.interval(-2, 2, 128)
    alpha = make_initial("gaussian")
    F = F_abs_grad(-1.0)
    u = solve_deterministic(F, alpha, sp, rp.grid)
    fl = solve_flow(make_vector_fields("zero", 1, 1), rp, sp)
    fam = [make_test_transport(c, fl) for c in default_test_family(sp)]
    assert viscosity_verify(u, F, fam, alpha=alpha)["n_violations"] == 0
    # the same data claimed to solve the opposite equation
    assert viscosity_verify(u, F_abs_grad(1.0), fam, alpha=alpha)["n_violations"] >= 1


def test_initial_condition_mismatch_is_reported(setup):
    rp, sp, A, fl = setup
    alpha = make_initial("gaussian")
    vals = np.broadcast_to(alpha(sp.points), (rp.grid.n + 1, sp.size)) + 0.1
    rep = viscosity_verify(HJSolution(sp, rp.grid.points, vals), F_zero(), [], alpha=alpha)
    assert rep["initial_condition_error"] == pytest.approx(0.1)
    assert not rep["passed"]


def test_fit_quadratic_recovers_jet():
    sp = SpaceGrid.interval(-1, 1, 40)
    th = sp.points[:, 0]
    v, p, X = fit_quadratic(1 + 2 * th + 1.5 * th ** 2, sp, [0.25])
    assert v == pytest.approx(1 + 0.5 + 1.5 / 16)
    assert p[0] == pytest.approx(2 + 0.75) and X[0, 0] == pytest.approx(3.0)
    assert fit_quadratic(th, sp, [0.99]) is None


def test_jet_derivation_and_local_function(setup):
    rp, sp, A, fl = setup
    sig = TransportSigma(A)
    jet = Jet(3, rp.grid.time(3), np.array([0.1]), 1.0, 0.0, np.array([2.0]), np.array([[0.0]]), sig)
    assert jet.consistent()
    # b = -p A = -1.4
    assert jet.b0[0] == pytest.approx(-1.4)
    f = jet_local_function(jet, rp)
    assert f(3, np.array([[0.1]]))[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        Jet(0, 0.0, [0.0], 0.0, 0.0, [0.0, 0.0], [[0.0, 1.0], [0.0, 0.0]], sig)


def test_jet_correspondence_and_mutation():
    rp = synth_driver("sinusoid", 1, TimeGrid(0.0, 1.0, 128), 0, scale=0.5)
    sp = SpaceGrid.interval(-2, 2, 256)
    A = make_vector_fields({"name": "const", "c": 0.7}, 1, 1)
    fl = solve_flow(A, rp, sp)
    alpha = make_initial({"name": "gaussian", "width": 0.3})
    res = solve_transport(TransportProblem(F_zero(), A, alpha, rp, sp), flow=fl)
    samples = [(k, q) for k in (10, 60, 100) for q in range(80, 180, 20)]
    ok = jet_correspondence_check(res.u, res.uhat, fl, samples)
    assert ok["passed"] and ok["checked"] > 0
    bad = jet_correspondence_check(res.u, res.uhat, fl, samples, mutate="flip_X")
    assert bad["failures"] >= 1
