import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agc import nn
from agc.nn import NetError, NetFormatError, TrainingDiverged


def _linear(w, b):
    net = nn.net_init([len(w), 1], seed=0)
    net.weights[0][:] = np.asarray(w, float).reshape(-1, 1)
    net.biases[0][:] = b
    return net


def test_init_deterministic():
    a, b = nn.net_init([3, 8, 4], seed=5), nn.net_init([3, 8, 4], seed=5)
    for p, q in zip(a.params(), b.params()):
        assert p.tobytes() == q.tobytes()


def test_init_fan_in_bound():
    net = nn.net_init([9, 16, 4], seed=1)
    for W in net.weights:
        assert np.abs(W).max() <= 1.0 / math.sqrt(W.shape[0])


@pytest.mark.parametrize("sizes", [[3], [3, 0, 2]])
def test_init_rejects_bad_sizes(sizes):
    with pytest.raises(NetError):
        nn.net_init(sizes, seed=0)


def test_identity_network():
    net = nn.net_init([4, 4], seed=0)
    net.weights[0][:] = np.eye(4)
    x = np.random.default_rng(0).normal(size=(5, 4))
    assert np.array_equal(nn.forward(net, x), x)


def test_single_neuron_hand_value():
    assert nn.forward(_linear([2.0], 1.0), np.array([3.0]))[0] == 7.0


def test_zero_weights_return_denormalized_bias():
    net = nn.net_init([3, 5, 2], seed=0)
    for W in net.weights:
        W[:] = 0.0
    net.biases[-1][:] = [0.5, -1.0]
    net.out_mean = np.array([10.0, 20.0])
    net.out_std = np.array([2.0, 4.0])
    np.testing.assert_array_equal(nn.forward(net, np.ones(3)), [11.0, 16.0])


def test_forward_dimension_mismatch():
    with pytest.raises(NetError):
        nn.forward(nn.net_init([3, 2], seed=0), np.ones(4))


def test_bad_shapes_rejected():
    net = nn.net_init([3, 2], seed=0)
    with pytest.raises(NetError):
        nn.Net([3, 2], [np.ones((2, 3))], net.biases, net.activations, net.in_mean, net.in_std, net.out_mean, net.out_std)


def test_single_sample_memorized():
    net = nn.net_init([3, 16, 2], seed=2)
    rep = nn.train_mse(net, np.array([[0.1, -0.4, 2.0]]), np.array([[1.5, -0.3]]), lr=0.05, epochs=400, batch=1,
                       fit_normalization=False)
    assert rep.train_loss < 1e-6


def test_zero_lr_leaves_weights():
    r = np.random.default_rng(0)
    x, y = r.normal(size=(40, 3)), r.normal(size=(40, 2))
    net = nn.net_init([3, 8, 2], seed=1)
    net.set_normalization(x, y)
    before = [p.copy() for p in net.params()]
    rep = nn.train_mse(net, x, y, lr=0.0, epochs=5, batch=8, fit_normalization=False)
    for p, q in zip(before, net.params()):
        assert np.array_equal(p, q)
    np.testing.assert_allclose(rep.curve, rep.curve[0], rtol=1e-12)


def test_loss_curve_reproducible():
    r = np.random.default_rng(3)
    x, y = r.normal(size=(100, 4)), r.normal(size=(100, 1))
    curves = [nn.train_mse(nn.net_init([4, 8, 1], seed=0), x, y, lr=0.01, epochs=5, batch=16, seed=9).curve for _ in range(2)]
    assert curves[0] == curves[1]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_guard():
    r = np.random.default_rng(4)
    x, y = r.normal(size=(64, 3)), r.normal(size=(64, 1))
    with pytest.raises(TrainingDiverged):
        nn.train_mse(nn.net_init([3, 32, 1], seed=0, hidden="linear"), x, y, lr=5.0, epochs=50, batch=8)


def test_train_rejects_mismatched_lengths():
    with pytest.raises(NetError):
        nn.train_mse(nn.net_init([2, 1], seed=0), np.ones((3, 2)), np.ones((2, 1)))


def test_gradient_check_random_small_net():
    r = np.random.default_rng(5)
    net = nn.net_init([4, 6, 5, 3], seed=7)
    x, t = r.normal(size=(6, 4)), r.normal(size=(6, 3))
    assert nn.gradient_check(net, x, t, eps=1e-4) <= 1e-4


def test_linear_gradient_closed_form():
    w, b, x, t = 1.7, -0.4, 0.9, 2.2
    net = _linear([w], b)
    _, grads = nn.mse_and_grads(net, np.array([[x]]), np.array([[t]]))
    g = 2 * (w * x + b - t)
    assert grads[0][0, 0] == pytest.approx(g * x, rel=1e-14)
    assert grads[1][0] == pytest.approx(g, rel=1e-14)
    assert nn.gradient_check(net, np.array([[x]]), np.array([[t]]), eps=1e-5) <= 1e-9


def test_zero_gradient_at_exact_fit():
    net = nn.net_init([3, 4, 1], seed=0)
    x = np.array([[0.2, 0.1, -0.3]])
    t = nn.forward(net, x)
    _, grads = nn.mse_and_grads(net, x, t)
    assert all(np.abs(g).max() == 0.0 for g in grads)
    assert nn.gradient_check(net, x, t) <= 1e-8


def test_gradient_check_rejects_bad_eps():
    with pytest.raises(NetError):
        nn.gradient_check(nn.net_init([1, 1], seed=0), np.ones((1, 1)), np.ones((1, 1)), eps=0.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.floats(-50, 50))
def test_normalization_absorbs_input_offset(seed, delta):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=(64, 3)), r.normal(size=(64, 2))
    xe = r.normal(size=(10, 3))
    a, b = nn.net_init([3, 8, 2], seed=1), nn.net_init([3, 8, 2], seed=1)
    nn.train_mse(a, x, y, lr=0.01, epochs=3, batch=16, seed=2)
    nn.train_mse(b, x + delta, y, lr=0.01, epochs=3, batch=16, seed=2)
    np.testing.assert_allclose(nn.forward(a, xe), nn.forward(b, xe + delta), rtol=0, atol=1e-9)


def test_save_load_bitwise(tmp_path):
    r = np.random.default_rng(6)
    net = nn.net_init([5, 7, 3], seed=3)
    net.set_normalization(r.normal(size=(30, 5)) * 40 + 3, r.normal(size=(30, 3)))
    back = nn.load_net(nn.save_net(net, tmp_path / "n.json"))
    x = r.normal(size=(20, 5))
    assert nn.forward(back, x).tobytes() == nn.forward(net, x).tobytes()


def test_truncated_file(tmp_path):
    p = nn.save_net(nn.net_init([2, 2], seed=0), tmp_path / "n.json")
    p.write_text(p.read_text()[:40])
    with pytest.raises(NetFormatError):
        nn.load_net(p)


def test_version_mismatch(tmp_path):
    doc = nn.net_to_json(nn.net_init([2, 2], seed=0))
    doc["version"] = 7
    (tmp_path / "n.json").write_text(json.dumps(doc))
    with pytest.raises(NetFormatError, match="version"):
        nn.load_net(tmp_path / "n.json")
