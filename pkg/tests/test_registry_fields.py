import numpy as np
import pytest

from roughvisc.fields import SemilinearSigma, TransportSigma, vf_linear, vf_sine
from roughvisc.registry import (
    F_table, RegistryError, make_hamiltonian, make_initial, make_noise_family, make_vector_fields,
)


@pytest.mark.parametrize("spec", ["zero", {"name": "const", "c": 2.0}, {"name": "abs_grad", "c": -1.0},
                                  {"name": "quadratic", "c": 0.5, "cap": 4.0}])
def test_hamiltonians_are_vectorised_and_lipschitz(spec):
    F = make_hamiltonian(spec)
    p = np.linspace(-3, 3, 41)[:, None]
    v = F(0.0, np.zeros_like(p), p)
    assert v.shape == (41,)
    slope = np.abs(np.diff(v) / np.diff(p[:, 0]))
    assert np.all(slope <= F.lip_p + 1e-9)


def test_custom_table_hamiltonian():
    F = F_table([-1, 0, 1], [1, 0, 2])
    assert F.lip_p == 2.0
    assert np.allclose(F(0, None, np.array([[-2.0], [0.5], [3.0]])), [1, 1, 2])
    with pytest.raises(ValueError):
        F_table([0, 0], [1, 1])


def test_unknown_names_raise():
    with pytest.raises(RegistryError):
        make_hamiltonian("nope")
    with pytest.raises(RegistryError):
        make_vector_fields("nope")
    with pytest.raises(RegistryError):
        make_noise_family("nope")
    with pytest.raises(RegistryError):
        make_initial("nope")


@pytest.mark.parametrize("spec", [{"name": "linear", "a": 0.5}, {"name": "sine", "amp": 0.3},
                                  {"name": "const", "c": [[1.0, 0.0], [0.5, 2.0]]}])
def test_vector_fields_validate(spec):
    A = make_vector_fields(spec, 2, 2)
    A.validate()
    pts = np.random.default_rng(0).normal(size=(5, 2))
    assert A.field(pts).shape == (5, 2, 2)
    assert A.bracket(pts).shape == (5, 2, 2, 2)


def test_bracket_of_linear_fields():
    M = np.zeros((1, 2, 1))
    M[0, 0, 0], M[0, 1, 0] = 1.0, 2.0
    A = vf_linear(M)
    br = A.bracket(np.array([[3.0]]))
    # A_l2 d A_l1 = (M_l2 theta) M_l1
    assert np.allclose(br[0, 0], [[1 * 3 * 1, 2 * 3 * 1], [1 * 3 * 2, 2 * 3 * 2]])


def test_validation_catches_wrong_jacobian():
    A = vf_sine(np.array([[0.5]]))
    A.jac = lambda p: np.zeros((p.shape[0], 1, 1, 1))
    with pytest.raises(ValueError):
        A.validate()


def test_sigma_derivatives_match_finite_differences():
    A = make_vector_fields({"name": "sine", "amp": 0.4}, 1, 1)
    sig = TransportSigma(A)
    th, u, p = np.array([[0.3]]), np.array([0.2]), np.array([[1.5]])
    e = 1e-6
    fd_th = (sig.sigma(th + e, u, p) - sig.sigma(th - e, u, p)) / (2 * e)
    fd_p = (sig.sigma(th, u, p + e) - sig.sigma(th, u, p - e)) / (2 * e)
    assert np.allclose(sig.dtheta(th, u, p)[..., 0], fd_th, atol=1e-8)
    assert np.allclose(sig.dp(th, u, p)[..., 0], fd_p, atol=1e-8)
    H = make_noise_family({"name": "tanh", "a": 0.8})
    ss = SemilinearSigma(H)
    fd_u = (ss.sigma(th, u + e, p) - ss.sigma(th, u - e, p)) / (2 * e)
    assert np.allclose(ss.du(th, u, p), fd_u, atol=1e-8)


@pytest.mark.parametrize("name", ["gaussian", "neg_abs", "sine", "tanh", "bump", "const"])
def test_initial_data(name):
    a = make_initial(name)
    v = a(np.linspace(-1, 1, 7))
    assert v.shape == (7,) and np.all(np.isfinite(v))
