import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepritz.bench import case1
from deepritz.functional import EnergyPlan, PenaltyConfig
from deepritz.mesh import build_uniform
from deepritz.network import (
    CheckpointError, MlpParams, backward, count_params, forward, init, load_checkpoint, save_checkpoint,
    value_and_grad, zeros,
)


def fd_gradient(f, theta, step=1e-5):
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        g[i] = (f(theta + e) - f(theta - e)) / (2 * step)
    return g


# Counts that drop the first hidden bias vector (106, 1186, 4898) are sometimes
# quoted; with a bias on every layer the counts are these.
@pytest.mark.parametrize("sizes,count,short", [([2, 8, 8, 2], 114, 106), ([2, 32, 32, 2], 1218, 1186),
                                               ([2, 48, 48, 48, 2], 4946, 4898)])
def test_parameter_counts(sizes, count, short):
    assert count_params(sizes) == count
    assert init(sizes, 0).n_params == count
    assert count - short == sizes[1]


def test_same_seed_same_parameters():
    a, b = init([2, 8, 8, 2], 7), init([2, 8, 8, 2], 7)
    np.testing.assert_array_equal(a.flatten(), b.flatten())
    assert not np.array_equal(a.flatten(), init([2, 8, 8, 2], 8).flatten())


def test_init_bounds_and_zero_biases():
    p = init([2, 50, 3, 2], 1)
    for W, b in zip(p.weights, p.biases):
        assert np.abs(W).max() <= 1 / np.sqrt(W.shape[1])
        assert not b.any()


@pytest.mark.parametrize("sizes", [[2], [3, 4, 2], [2, 4, 1], [2, 0, 2]])
def test_degenerate_sizes_rejected(sizes):
    with pytest.raises(ValueError):
        init(sizes, 0)


def test_zero_network_outputs_zero():
    p = zeros([2, 5, 2])
    np.testing.assert_array_equal(forward(p, np.array([[0.3, -2.0]])), [[0.0, 0.0]])


def test_hand_evaluated_single_hidden_unit():
    p = MlpParams([np.zeros((1, 2)), np.array([[1.0], [1.0]])], [np.zeros(1), np.zeros(2)])
    np.testing.assert_allclose(forward(p, [0.7, -0.1]), [0.5, 0.5])


def test_output_bias_is_subtracted():
    p = zeros([2, 3, 2])
    p.biases[-1][:] = [1.0, 2.0]
    np.testing.assert_array_equal(p(np.array([[1.0, 1.0]])), [[-1.0, -2.0]])


def test_non_finite_input_rejected():
    with pytest.raises(ValueError):
        forward(init([2, 3, 2], 0), np.array([[np.nan, 0.0]]))


def test_sigmoid_saturates_without_overflow():
    p = init([2, 3, 2], 0)
    p.weights[0][:] = 1e4
    out = forward(p, np.array([[-1.0, -1.0], [1.0, 1.0]]))
    assert np.all(np.isfinite(out))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=0, max_size=3), st.integers(0, 2**31))
def test_flatten_unflatten_round_trip(hidden, seed):
    sizes = [2, *hidden, 2]
    flat = np.random.default_rng(seed).normal(size=count_params(sizes))
    np.testing.assert_array_equal(MlpParams.unflatten(sizes, flat).flatten(), flat)


def test_unflatten_wrong_length():
    with pytest.raises(ValueError):
        MlpParams.unflatten([2, 3, 2], np.zeros(5))


def test_square_norm_gradient_at_zero_net():
    p = zeros([2, 4, 2])
    x0 = np.array([[0.2, 0.4]])
    u = forward(p, x0)
    g = backward(p, x0, 2 * u)
    assert not np.concatenate([g.flatten()]).any()
    p.biases[-1][:] = [0.5, -1.0]
    u = forward(p, x0)
    g = backward(p, x0, 2 * u)
    np.testing.assert_allclose(g.biases[-1], -2 * u[0])
    assert not g.biases[0].any() and not g.weights[0].any()


def test_backward_is_linear_in_the_cotangent():
    p = init([2, 6, 6, 2], 3)
    x = np.random.default_rng(0).uniform(-1, 1, (40, 2))
    c = np.random.default_rng(1).normal(size=(40, 2))
    np.testing.assert_allclose(backward(p, x, 3 * c).flatten(), 3 * backward(p, x, c).flatten(), rtol=1e-13)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_energy_gradient_matches_finite_differences(seed):
    pb = case1()
    plan = EnergyPlan(build_uniform(pb.geometry, 2, 2), pb, PenaltyConfig(100.0))
    p = init([2, 5, 4, 2], seed)
    sizes = p.sizes
    _, g = plan.energy_and_gradient(p)

    def J(theta):
        return plan.evaluate(forward(MlpParams.unflatten(sizes, theta), plan.points)).total

    fd = fd_gradient(J, p.flatten())
    np.testing.assert_allclose(g.flatten(), fd, rtol=1e-5, atol=1e-7 * np.abs(fd).max())


def test_value_and_grad_matches_backward_with_and_without_cache(monkeypatch):
    import deepritz.network as network

    p = init([2, 7, 2], 4)
    x = np.random.default_rng(2).uniform(-1, 1, (100, 2))
    w = np.random.default_rng(3).normal(size=(100, 2))
    loss = lambda u: (float(np.sum(w * u**2)), 2 * w * u)
    v1, g1 = value_and_grad(p, x, loss)
    monkeypatch.setattr(network, "CACHE_FLOATS", 0)
    monkeypatch.setattr(network, "CHUNK", 16)
    v2, g2 = value_and_grad(p, x, loss)
    ref = backward(p, x, 2 * w * forward(p, x))
    assert v1 == v2
    np.testing.assert_allclose(g1.flatten(), ref.flatten(), rtol=1e-12)
    np.testing.assert_allclose(g2.flatten(), ref.flatten(), rtol=1e-12)


def test_nd_derivative_of_network_converges_at_second_order():
    p = init([2, 8, 8, 2], 5)
    x = np.array([[0.3, -0.2]])
    h = 1e-5
    ref = (forward(p, x + [h, 0]) - forward(p, x - [h, 0])) / (2 * h)
    errs = []
    for dx in (0.2, 0.1, 0.05, 0.025):
        est = (forward(p, x + [dx, 0]) - forward(p, x - [dx, 0])) / (2 * dx)
        errs.append(np.abs(est - ref).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 1.9


def test_checkpoint_round_trip_is_exact(tmp_path):
    p = init([2, 8, 8, 2], 11)
    path = save_checkpoint(p, tmp_path / "w.txt")
    q = load_checkpoint(path)
    assert q.sizes == p.sizes
    np.testing.assert_array_equal(q.flatten(), p.flatten())


@pytest.mark.parametrize("text", ["1.0\n2.0\n", "# layers: 2 3 2\n1.0\n", "# layers: 2 x 2\n",
                                  "# layers: 2 1 2\n" + "abc\n" * 7, "# layers: 2 1 2\n" + "nan\n" * 7])
def test_corrupt_checkpoints_raise(tmp_path, text):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
