import json

import numpy as np
import pytest

from licds import get_system
from licds.learn import (
    GP_MAX_POINTS,
    Dataset,
    GpModel,
    MlpModel,
    TrainingError,
    fit_gp,
    init_mlp,
    l2_distance,
    load_model,
    make_dataset,
    model_from_dict,
    train_mlp,
)
from licds.localmodel import taylor_coefficients
from licds.systems import DynamicsFn, SystemSpec


def linear_system(a=-1.0, sigma=0.01):
    fn = DynamicsFn(1, lambda x: a * np.asarray(x), "linear", jet_ok=True)
    return SystemSpec("linear", fn, (1.0,), sigma, ((-10.0, 10.0),))


@pytest.fixture(scope="module")
def tanh_data():
    return make_dataset(get_system("tanh"), 10, 100, 0.01, 0, [[-3.0, 3.0]])


@pytest.fixture(scope="module")
def small_gp():
    rng = np.random.default_rng(3)
    x = rng.uniform(-2, 2, size=(60, 2))
    y = np.stack([np.sin(x[:, 0]) * x[:, 1], np.cos(x[:, 1])], axis=1)
    return GpModel(x, y, lengthscale=0.8, signal_var=1.5, noise_var=1e-3)


def test_dataset_size(tanh_data):
    assert len(tanh_data) == 990
    assert tanh_data.source_trajectories == 10
    assert [len(b) for b in tanh_data.batches] == [99] * 10


def test_dataset_deterministic():
    a = make_dataset(get_system("pendulum"), 4, 50, 0.01, 11)
    b = make_dataset(get_system("pendulum"), 4, 50, 0.01, 11)
    assert a.inputs.tobytes() == b.inputs.tobytes()
    assert a.targets.tobytes() == b.targets.tobytes()
    c = make_dataset(get_system("pendulum"), 4, 50, 0.01, 12)
    assert not np.array_equal(a.inputs, c.inputs)


def test_noise_free_linear_targets():
    dt = 0.01
    data = make_dataset(linear_system(sigma=0.0), 3, 40, dt, 5, [[-2.0, 2.0]])
    for rows in data.batches:
        x = data.inputs[rows]
        # consecutive pairs of one trajectory only
        np.testing.assert_allclose(x[1:] - x[:-1], dt * data.targets[rows][:-1], atol=1e-15)
        np.testing.assert_allclose(data.targets[rows], -x, atol=1e-12)


def test_initial_points_in_box():
    data = make_dataset(get_system("lorenz"), 6, 5, 0.01, 2, [[-1, 1], [2, 3], [-5, -4]])
    starts = np.array([data.inputs[b[0]] for b in data.batches])
    assert np.all(starts >= [-1, 2, -5]) and np.all(starts <= [1, 3, -4])


def test_dataset_rejects_bad_sizes():
    with pytest.raises(ValueError):
        make_dataset(get_system("tanh"), 0, 10)
    with pytest.raises(ValueError):
        make_dataset(get_system("tanh"), 2, 1)


def test_dataset_subset_keeps_trajectories(tanh_data):
    sub = tanh_data.subset([2, 7])
    assert len(sub) == 198 and sub.source_trajectories == 2
    np.testing.assert_array_equal(sub.inputs[99:], tanh_data.inputs[tanh_data.batches[7]])


def test_mlp_fits_linear_field():
    data = make_dataset(linear_system(sigma=0.0), 10, 100, 0.01, 0, [[-3.0, 3.0]])
    model = train_mlp(data, [1], epochs=2000)
    xs = np.linspace(-2, 2, 401)[:, None]
    assert np.abs(model.forward(xs) + xs).max() < 0.05


def test_zero_epochs_is_initialization(tanh_data):
    model = train_mlp(tanh_data, [5, 3], epochs=0, seed=4)
    init = init_mlp(1, [5, 3], 4)
    for a, b in zip(model.weights + model.biases, init.weights + init.biases):
        np.testing.assert_array_equal(a, b)
    bound = 1.0
    assert np.all(np.abs(init.weights[0]) <= bound)
    assert np.all(np.abs(init.weights[1]) <= 1 / np.sqrt(5))


def test_late_training_loss_does_not_rise(tanh_data):
    h = train_mlp(tanh_data, [10], epochs=5000).loss_history
    assert len(h) == 5000
    for e in range(3000, 4500):
        assert h[e + 500] <= h[e] + 1e-9


def test_training_reproducible(tanh_data):
    a = train_mlp(tanh_data, [4], epochs=30, seed=2)
    b = train_mlp(tanh_data, [4], epochs=30, seed=2)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_reports_epoch(tanh_data):
    bad = Dataset(tanh_data.inputs.copy(), tanh_data.targets.copy(), 0.01, 10, tanh_data.batches)
    bad.targets[5] = np.inf
    with pytest.raises(TrainingError) as err:
        train_mlp(bad, [2], epochs=3)
    assert err.value.epoch == 0


def test_empty_dataset_rejected():
    empty = Dataset(np.zeros((0, 1)), np.zeros((0, 1)), 0.01, 0, [])
    with pytest.raises(ValueError):
        train_mlp(empty, [2], epochs=1)


def test_mlp_jacobian_matches_finite_differences():
    data = make_dataset(get_system("lorenz"), 3, 30, 0.01, 1)
    model = train_mlp(data, [6, 5], epochs=20)
    rng = np.random.default_rng(0)
    h = 1e-6
    for x in rng.uniform(-10, 10, size=(50, 3)):
        J = model.input_jacobian(x)
        fd = np.stack([(model.forward(x + h * e) - model.forward(x - h * e)) / (2 * h)
                       for e in np.eye(3)], axis=1)
        np.testing.assert_allclose(J, fd, atol=1e-5)


def test_mlp_jet_derivatives_match_jacobian():
    data = make_dataset(get_system("pendulum"), 3, 30, 0.01, 1)
    model = train_mlp(data, [7], epochs=10)
    x = np.array([0.3, -0.8])
    coeffs = taylor_coefficients(model.as_dynamics(), x, 3)
    np.testing.assert_allclose(coeffs[:, 0], model.forward(x), atol=1e-12)
    np.testing.assert_allclose(coeffs[:, 1:3], model.input_jacobian(x), atol=1e-10)


def test_mlp_json_round_trip(tmp_path, tanh_data):
    model = train_mlp(tanh_data, [3], epochs=5)
    path = tmp_path / "m.json"
    path.write_text(json.dumps(model.to_dict()))
    loaded = load_model(path)
    for x in np.linspace(-3, 3, 13)[:, None]:
        np.testing.assert_array_equal(loaded.eval(x), model.forward(x))
    assert isinstance(model_from_dict(model.to_dict()), MlpModel)


def test_gp_interpolates_as_noise_vanishes():
    x = np.linspace(-2, 2, 15)[:, None]
    y = np.sin(2 * x)
    gp = GpModel(x, y, noise_var=1e-12, jitter=1e-12)
    np.testing.assert_allclose(gp.mean(x), y, atol=1e-6)


def test_gp_kernel_diagonal(small_gp):
    x = small_gp.train_inputs[:5]
    assert np.all(np.diag(small_gp.kernel(x, x)) == small_gp.signal_var)


def test_gp_recovers_tanh():
    x = np.linspace(-3, 3, 200)[:, None]
    data = Dataset(x, -np.tanh(x), 0.01, 1, [np.arange(200)])
    gp = fit_gp(data)
    q = np.linspace(-2, 2, 401)[:, None]
    assert np.abs(gp.mean(q) + np.tanh(q)).max() < 0.05


def test_gp_gradient_matches_finite_differences(small_gp):
    rng = np.random.default_rng(1)
    h = 1e-5
    for x in rng.uniform(-2, 2, size=(50, 2)):
        fd = np.stack([(small_gp.mean(x + h * e) - small_gp.mean(x - h * e)) / (2 * h)
                       for e in np.eye(2)], axis=1)
        np.testing.assert_allclose(small_gp.gradient(x), fd, atol=1e-4)


def test_gp_jet_derivatives_match_gradient(small_gp):
    x = np.array([0.4, -1.1])
    coeffs = taylor_coefficients(small_gp.as_dynamics(), x, 3)
    np.testing.assert_allclose(coeffs[:, 0], small_gp.mean(x), atol=1e-12)
    np.testing.assert_allclose(coeffs[:, 1:3], small_gp.gradient(x), atol=1e-10)


def test_gp_point_limit():
    x = np.zeros((GP_MAX_POINTS + 1, 1))
    with pytest.raises(ValueError):
        GpModel(x, x)


def test_gp_jitter_escalates():
    # duplicated inputs with no noise: singular without jitter
    x = np.zeros((4, 1))
    gp = GpModel(x, np.ones((4, 1)), noise_var=1e-300, jitter=0.0)
    assert gp.jitter == 1e-5
    assert np.all(np.isfinite(gp.mean(np.array([0.0]))))


def test_gp_grid_search_maximizes_likelihood(tanh_data):
    sub = tanh_data.subset([0, 1])
    best = fit_gp(sub, grid_search=True)
    default = fit_gp(sub)
    assert best.log_marginal_likelihood() >= default.log_marginal_likelihood()
    other = GpModel(sub.inputs, sub.targets, 3.0, 10.0, 1e-3)
    assert best.log_marginal_likelihood() >= other.log_marginal_likelihood()


def test_gp_json_round_trip(tmp_path, small_gp):
    path = tmp_path / "gp.json"
    path.write_text(json.dumps(small_gp.to_dict()))
    loaded = load_model(path)
    x = np.array([0.1, 0.2])
    np.testing.assert_allclose(loaded.eval(x), small_gp.mean(x), rtol=1e-12)


def test_unknown_model_kind():
    with pytest.raises(ValueError):
        model_from_dict({"kind": "svm"})


def test_l2_distance():
    f = DynamicsFn(1, lambda x: np.asarray(x), "id")
    g = DynamicsFn(1, lambda x: np.asarray(x) + 0.5, "shift")
    # sqrt(int_0^4 0.25 dx) = 1
    assert l2_distance(f, g, [[0.0, 4.0]]) == pytest.approx(1.0, rel=1e-12)
    assert l2_distance(f, f, [[0.0, 4.0]]) == 0.0
    with pytest.raises(ValueError):
        l2_distance(f, g, [[0, 1]] * 4)
