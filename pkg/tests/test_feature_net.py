import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abrac import feature_net as fn
from abrac.benchmarks import FORRESTER_SPACE, generate_tasks
from abrac.data import TaskDataset
from abrac.feature_net import FeatureNet, FeatureNetConfig, TrainConfig


def linear_net(w, c=0.0):
    cfg = FeatureNetConfig(1, (), 1)
    return FeatureNet(cfg, [np.array([[w]])], [np.array([c])])


def random_net(rng, widths):
    cfg = FeatureNetConfig(widths[0], tuple(widths[1:-1]), widths[-1])
    net = FeatureNet.initialize(cfg, seed=int(rng.integers(1 << 30)))
    net.biases = [rng.normal(0, 0.5, size=c.shape) for c in net.biases]
    return net


def reference_forward(net, x):
    """Unit-by-unit loop, independent of the vectorized implementation."""
    h = [float(v) for v in x]
    last = len(net.weights) - 1
    for k, (w, c) in enumerate(zip(net.weights, net.biases)):
        out = []
        for j in range(w.shape[1]):
            s = c[j] + sum(h[i] * w[i, j] for i in range(len(h)))
            out.append(s if k == last else math.tanh(s))
        h = out
    return np.array(h)


# ------------------------------------------------------------------ forward


def test_single_linear_layer():
    assert fn.forward(linear_net(2.0), np.array([1.0])).tolist() == [2.0]


def test_zero_network_outputs_zero():
    cfg = FeatureNetConfig(3, (4, 4), 5)
    net = FeatureNet.initialize(cfg)
    net.weights = [np.zeros_like(w) for w in net.weights]
    assert np.all(fn.forward(net, np.array([0.3, -0.2, 0.9])) == 0.0)


def test_forward_matches_loop_reference(rng):
    for _ in range(10):
        net = random_net(rng, (3, 7, 5, 4))
        x = rng.uniform(-1, 1, size=3)
        np.testing.assert_allclose(fn.forward(net, x), reference_forward(net, x), rtol=0, atol=1e-12)


def test_forward_batch_equals_rows(rng):
    net = random_net(rng, (2, 6, 3))
    X = rng.uniform(-1, 1, size=(8, 2))
    batch = fn.forward(net, X)
    for i in range(8):
        np.testing.assert_allclose(batch[i], fn.forward(net, X[i]), rtol=0, atol=1e-14)


def test_forward_rejects_wrong_dimension():
    with pytest.raises(ValueError):
        fn.forward(linear_net(1.0), np.array([1.0, 2.0]))


# ------------------------------------------------------------------ truncate


def test_truncate_examples():
    assert fn.truncate([1.0, 2.0, 3.0, 4.0], 2).tolist() == [1.0, 2.0, 0.0, 0.0]
    assert fn.truncate([3.0, 5.0], 1).tolist() == [3.0, 0.0]
    assert fn.truncate([3.0, 5.0], 2).tolist() == [3.0, 5.0]


@pytest.mark.parametrize("b", [0, 3])
def test_truncate_out_of_range(b):
    with pytest.raises(ValueError):
        fn.truncate([1.0, 2.0], b)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.data())
def test_truncate_keeps_prefix_zeroes_suffix(values, data):
    b = data.draw(st.integers(1, len(values)))
    out = fn.truncate(values, b)
    assert out[:b].tolist() == values[:b]
    assert np.all(out[b:] == 0.0)


# ------------------------------------------------------------------ gradients


def test_backward_by_hand():
    loss, g = fn.backward_mse(linear_net(2.0), np.array([1.0]), 0.0, np.array([1.0]))
    assert loss == 4.0
    assert g["weights"][0][0, 0] == 4.0


def test_masked_output_units_get_zero_gradient(rng):
    net = random_net(rng, (2, 5, 6))
    _, g = fn.backward_mse(net, rng.uniform(-1, 1, 2), 0.7, rng.normal(size=6), b=3)
    assert np.all(g["weights"][-1][:, 3:] == 0.0)
    assert np.all(g["biases"][-1][3:] == 0.0)
    assert np.all(g["head"][3:] == 0.0)


def _flat_params(net, head):
    return [*net.weights, *net.biases, head]


def fd_check(net, x, target, head, b, eps=1e-6):
    """Largest relative error between analytic and central-difference
    gradients, skipping entries where both are below 1e-8."""
    _, g = fn.backward_mse(net, x, target, head, b)
    analytic = [*g["weights"], *g["biases"], g["head"]]
    worst = 0.0
    for p, ga in zip(_flat_params(net, head), analytic):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            lp = fn.backward_mse(net, x, target, head, b)[0]
            p[idx] = old - eps
            lm = fn.backward_mse(net, x, target, head, b)[0]
            p[idx] = old
            num = (lp - lm) / (2 * eps)
            if abs(num) < 1e-8 and abs(ga[idx]) < 1e-8:
                continue
            worst = max(worst, abs(num - ga[idx]) / max(abs(num), abs(ga[idx])))
    return worst


def test_gradients_match_finite_differences_small_nets(rng):
    for _ in range(20):
        widths = (int(rng.integers(1, 4)), int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(2, 6)))
        net = random_net(rng, widths)
        head = rng.normal(size=widths[-1])
        b = int(rng.integers(1, widths[-1] + 1))
        assert fd_check(net, rng.uniform(-1, 1, widths[0]), float(rng.normal()), head, b) < 1e-5


def test_gradients_default_architecture(rng):
    net = random_net(rng, (2, 50, 50, 20))
    head = rng.normal(size=20)
    # spot-check a random subset of the ~3.7k parameters
    x = rng.uniform(-1, 1, 2)
    worst = 0.0
    _, g = fn.backward_mse(net, x, 0.3, head, 20)
    params = _flat_params(net, head)
    analytic = [*g["weights"], *g["biases"], g["head"]]
    for _ in range(200):
        k = int(rng.integers(len(params)))
        idx = tuple(int(rng.integers(s)) for s in params[k].shape)
        old = params[k][idx]
        params[k][idx] = old + 1e-6
        lp = fn.backward_mse(net, x, 0.3, head, 20)[0]
        params[k][idx] = old - 1e-6
        lm = fn.backward_mse(net, x, 0.3, head, 20)[0]
        params[k][idx] = old
        num = (lp - lm) / 2e-6
        if abs(num) < 1e-8 and abs(analytic[k][idx]) < 1e-8:
            continue
        worst = max(worst, abs(num - analytic[k][idx]) / max(abs(num), abs(analytic[k][idx])))
    assert worst < 1e-5


# ------------------------------------------------------------------ training


def forrester_suite(seed=0):
    return generate_tasks("forrester", seed=seed)


def small_cfg(**kw):
    return TrainConfig(**{"epochs": 40, **kw})


def test_zero_epochs_leaves_net_unchanged():
    net = FeatureNet.initialize(FeatureNetConfig(1), seed=3)
    res = fn.train_offline(net, forrester_suite()[:2], small_cfg(epochs=0))
    assert res.trace == []
    for a, b in zip(net.parameters(), res.net.parameters()):
        np.testing.assert_array_equal(a, b)


def test_training_is_deterministic():
    tasks = forrester_suite()[:3]
    net = FeatureNet.initialize(FeatureNetConfig(1, (8, 8), 4), seed=1)
    a = fn.train_offline(net, tasks, small_cfg(seed=5))
    b = fn.train_offline(net, tasks, small_cfg(seed=5))
    assert fn.save(a.net) == fn.save(b.net)
    assert a.trace == b.trace


def test_masking_locality():
    """A single-sample batch with sampled truncation b never moves output
    units above b."""
    tasks = [TaskDataset("t", np.array([[0.2]]), np.array([1.0]))]
    net = FeatureNet.initialize(FeatureNetConfig(1, (6,), 8), seed=0)
    cfg = TrainConfig(epochs=1, batch_size=1, seed=11)
    # reproduce the b that training draws: the trainer's stream draws the
    # head init, the permutation and then b
    from abrac.numerics import RngStream
    rng = RngStream(cfg.seed)
    rng.normal(0.0, 1.0 / math.sqrt(8), size=(1, 8))
    rng.generator.permutation(1)
    b = int(rng.uniform_int(1, 8, size=1)[0])
    res = fn.train_offline(net, tasks, cfg, bounds=(np.zeros(1), np.ones(1)))
    np.testing.assert_array_equal(res.net.weights[-1][:, b:], net.weights[-1][:, b:])
    np.testing.assert_array_equal(res.net.biases[-1][b:], net.biases[-1][b:])
    assert b < 8 and not np.array_equal(res.net.weights[-1][:, :b], net.weights[-1][:, :b])


def test_recovers_ordinary_least_squares():
    rng = np.random.default_rng(4)
    X = rng.uniform(0, 1, size=(40, 1))
    y = 3.0 * X[:, 0] + 1.0 + rng.normal(0, 0.1, 40)
    net = FeatureNet(FeatureNetConfig(1, (), 1), [np.array([[0.5]])], [np.array([0.0])])
    cfg = TrainConfig(epochs=1200, nested_dropout=False, batch_size=8, learning_rate=0.01)
    res = fn.train_offline(net, [TaskDataset("t", X, y)], cfg, bounds=(np.zeros(1), np.ones(1)))
    xs, ys = res.scaled_tasks[0]
    A = np.column_stack([xs[:, 0], np.ones(len(ys))])
    ols = np.linalg.lstsq(A, ys, rcond=None)[0]
    head = res.heads[0, 0]
    learned = np.array([head * res.net.weights[0][0, 0], head * res.net.biases[0][0]])
    np.testing.assert_allclose(learned, ols, atol=1e-3)


def test_default_training_fits_forrester_suite():
    tasks = forrester_suite(0)
    net = FeatureNet.initialize(FeatureNetConfig(1), seed=0)
    res = fn.train_offline(net, tasks, TrainConfig(seed=0), bounds=(FORRESTER_SPACE.lower, FORRESTER_SPACE.upper))
    # targets are standardized, so the constant predictor has MSE 1 per task
    assert np.max(fn.task_mse(res.net, res.heads, res.scaled_tasks)) < 0.1
    assert res.trace[-1] < res.trace[0]


def test_divergence_is_reported_with_partial_trace():
    tasks = forrester_suite()[:3]
    net = FeatureNet.initialize(FeatureNetConfig(1), seed=0)
    with pytest.raises(fn.TrainingDiverged) as info:
        fn.train_offline(net, tasks, TrainConfig(learning_rate=50.0, epochs=50))
    assert len(info.value.trace) == info.value.epoch


def test_train_rejects_bad_input():
    net = FeatureNet.initialize(FeatureNetConfig(2), seed=0)
    with pytest.raises(ValueError):
        fn.train_offline(net, [], TrainConfig())
    with pytest.raises(ValueError):
        fn.train_offline(net, forrester_suite()[:1], TrainConfig())


@pytest.mark.parametrize("kw", [{"learning_rate": 0}, {"momentum": 1.0}, {"batch_size": 0}, {"epochs": -1}])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


# ------------------------------------------------------------------ save / load


def test_save_load_round_trip(rng):
    net = random_net(rng, (3, 5, 4))
    net.x_lo, net.x_hi = np.array([-2.0, 0.0, 1.0]), np.array([2.0, 1e-3, 7.5])
    net.meta = {"nested_dropout": True}
    back = fn.load(fn.save(net))
    for a, b in zip(net.parameters(), back.parameters()):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(back.x_lo, net.x_lo)
    np.testing.assert_array_equal(back.x_hi, net.x_hi)
    assert back.meta == net.meta
    assert fn.save(back) == fn.save(net)


def test_truncated_file_is_a_parse_error(rng):
    data = fn.save(random_net(rng, (1, 3, 2)))
    with pytest.raises(fn.ModelFormatError, match="line"):
        fn.load(data[: len(data) // 2])


def test_mismatched_dims_rejected(rng):
    text = fn.save(random_net(rng, (1, 3, 2))).decode()
    with pytest.raises(fn.ModelFormatError):
        fn.load(text.replace('"output_dim": 2', '"output_dim": 5'))
    with pytest.raises(fn.ModelFormatError):
        fn.load(text.replace('"rows": 3', '"rows": 4'))


def test_wrong_activation_rejected(rng):
    text = fn.save(random_net(rng, (1, 3, 2))).decode()
    with pytest.raises(fn.ModelFormatError):
        fn.load(text.replace('"tanh"', '"relu"'))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e300, 1e300), min_size=6, max_size=6))
def test_save_load_exact_for_any_float(values):
    net = FeatureNet(FeatureNetConfig(1, (2,), 1),
                     [np.array([values[:2]]), np.array([[values[2]], [values[3]]])],
                     [np.array(values[4:6]), np.array([0.0])])
    back = fn.load(fn.save(net))
    for a, b in zip(net.parameters(), back.parameters()):
        np.testing.assert_array_equal(a, b)
