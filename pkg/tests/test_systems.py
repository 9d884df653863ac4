import math

import numpy as np
import pytest

from licds import jets
from licds.systems import SYSTEM_NAMES, DynamicsFn, QuadrotorParams, get_system


def test_pendulum_equilibrium():
    assert np.array_equal(get_system("pendulum").eval([0.0, 0.0]), [0.0, 0.0])


def test_tanh_value():
    assert get_system("tanh").eval([2.0])[0] == pytest.approx(-0.96402758007581688, abs=1e-15)


def test_lorenz_value():
    np.testing.assert_allclose(get_system("lorenz").eval([1, 1, 1]), [0.0, 26.0, -5.0 / 3.0],
                               rtol=0, atol=1e-14)


def test_tanh_sin5_form():
    x = 0.7
    assert get_system("tanh_sin5").eval([x])[0] == pytest.approx(-math.tanh(x) + 0.1 * math.sin(5 * x))


def test_unknown_name_lists_valid():
    with pytest.raises(KeyError) as err:
        get_system("duffing")
    for name in SYSTEM_NAMES:
        assert name in str(err.value)


@pytest.mark.parametrize("name", ["pendulum", "tanh", "sat", "tanh_lin", "rational", "tanh_sin"])
def test_origin_fixed_point(name):
    s = get_system(name)
    assert np.linalg.norm(s.eval(np.zeros(s.dim))) == 0.0


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_eval_pure_and_finite(name):
    s = get_system(name)
    rng = np.random.default_rng(0)
    box = np.asarray(s.domain_bounds)
    pts = rng.uniform(box[:, 0], box[:, 1], size=(50, s.dim))
    for x in pts:
        first = s.eval(x)
        assert first.shape == (s.dim,)
        assert np.all(np.isfinite(first))
        for _ in range(20):
            assert np.array_equal(s.eval(x), first)


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_default_x0_inside_bounds(name):
    s = get_system(name)
    box = np.asarray(s.domain_bounds)
    x0 = np.asarray(s.default_x0)
    assert np.all((box[:, 0] <= x0) & (x0 <= box[:, 1]))
    assert s.noise_sigma == 0.01


def test_quadrotor_domain_angles():
    box = np.asarray(get_system("quadrotor").domain_bounds)
    np.testing.assert_allclose(box[:2], [[-math.pi, math.pi]] * 2)


def test_quadrotor_inertia_is_configurable():
    x = np.array(get_system("quadrotor").default_x0, dtype=float)
    a = get_system("quadrotor").eval(x)
    b = get_system("quadrotor", QuadrotorParams(Ix=2.0, Iy=2.0, Iz=2.0)).eval(x)
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_jet_value_matches_eval(name):
    s = get_system(name)
    f = s.dynamics
    x = np.asarray(s.default_x0, dtype=float) * 0.3
    jet = f.eval_jet(jets.jet_space(s.dim, 2).seed(x))
    np.testing.assert_allclose(jet.value, f.eval(x), rtol=1e-14, atol=1e-14)


def test_dimension_mismatch_raises():
    bad = DynamicsFn(2, lambda x: [x[0]])
    with pytest.raises(ValueError):
        bad.eval([1.0, 2.0])


def test_sum_and_scale():
    f = get_system("tanh").dynamics
    g = f + f.scaled(2.0)
    assert g.eval([1.0])[0] == pytest.approx(-3 * math.tanh(1.0))
    assert g.jet_ok
