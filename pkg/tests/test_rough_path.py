import numpy as np
import pytest

from roughvisc.increments import GridPath, TimeGrid
from roughvisc.rough_path import (
    GammaMismatchWarning, RoughPath, check_chen, check_geometric, lift_piecewise_linear, synth_driver,
)


@pytest.mark.parametrize("kind", ["sinusoid", "brownian_pl", "weierstrass_pl", "linear"])
def test_synthetic_drivers_are_geometric(kind):
    rp = synth_driver(kind, 2, TimeGrid(0.0, 1.0, 128), seed=3)
    assert rp.dim == 2
    assert check_chen(rp) <= 1e-12
    assert check_geometric(rp) <= 1e-12


def test_seeded_drivers_are_reproducible():
    g = TimeGrid(0.0, 1.0, 64)
    a = synth_driver("brownian_pl", 2, g, seed=5)
    b = synth_driver("brownian_pl", 2, g, seed=5)
    c = synth_driver("brownian_pl", 2, g, seed=6)
    assert np.array_equal(a.x.values, b.x.values)
    assert not np.array_equal(a.x.values, c.x.values)


def test_linear_driver_area_is_symmetric():
    rp = synth_driver("linear", 2, TimeGrid(0.0, 1.0, 16), velocity=[1.0, -2.0])
    a = rp.x2(0, 16)
    assert np.allclose(a, a.T)
    assert np.allclose(a, 0.5 * np.outer([1.0, -2.0], [1.0, -2.0]))


def test_brownian_area_is_levy_area():
    # off-diagonal antisymmetric part of a PL lift over one step vanishes
    rp = synth_driver("brownian_pl", 2, TimeGrid(0.0, 1.0, 32), seed=1)
    a = rp.x2(3, 4)
    assert abs(a[0, 1] - a[1, 0]) < 1e-15


def test_driver_validation():
    with pytest.raises(ValueError):
        synth_driver("nope", 1, TimeGrid(0.0, 1.0, 8))
    with pytest.raises(ValueError):
        synth_driver("sinusoid", 1, TimeGrid(0.0, 1.0, 12))
    with pytest.warns(GammaMismatchWarning):
        synth_driver("brownian_pl", 1, TimeGrid(0.0, 1.0, 256), seed=0, gamma=0.9)


def test_empirical_gamma_brownian():
    rp = synth_driver("brownian_pl", 1, TimeGrid(0.0, 1.0, 4096), seed=0)
    assert 0.35 < rp.empirical_gamma() < 0.65


def test_restrict_keeps_chen():
    rp = synth_driver("brownian_pl", 2, TimeGrid(0.0, 1.0, 64), seed=2)
    coarse = rp.restrict(4)
    assert coarse.grid.n == 16
    assert np.allclose(coarse.x2(0, 16), rp.x2(0, 64), atol=1e-14)
    assert check_chen(coarse) <= 1e-12


def test_json_round_trip(tmp_path):
    rp = synth_driver("weierstrass_pl", 2, TimeGrid(0.0, 1.0, 32), seed=4)
    path = tmp_path / "rp.json"
    rp.save_json(path)
    back = RoughPath.load_json(path)
    assert np.array_equal(back.x.values, rp.x.values)
    assert np.allclose(back.x2(2, 30), rp.x2(2, 30), atol=0, rtol=0)
    assert back.gamma == rp.gamma


def test_csv_has_fixed_header(tmp_path):
    rp = synth_driver("sinusoid", 2, TimeGrid(0.0, 1.0, 8))
    path = tmp_path / "x.csv"
    rp.save_csv(path)
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    lines = raw.decode().splitlines()
    assert len(lines) == 10


def test_lift_of_piecewise_linear_increments():
    g = TimeGrid(0.0, 1.0, 4)
    x = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]], dtype=float)
    rp = lift_piecewise_linear(GridPath(g, x))
    # the unit square loop encloses signed area 1
    a = rp.x2(0, 4)
    assert 0.5 * (a[0, 1] - a[1, 0]) == pytest.approx(1.0)
