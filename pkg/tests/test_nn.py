import numpy as np
import pytest

from valverl.nn import (CheckpointError, DenseNet, Layer, LayerSpec, OptState, backward,
                        forward, header_size, net_deserialize, net_init, net_serialize,
                        opt_step, soft_update)

ACTS = ("relu", "tanh", "linear")


def reference_eval(net, x):
    """Independent evaluator: explicit loops over units."""
    h = list(x)
    for layer in net.layers:
        out = []
        for j in range(layer.W.shape[1]):
            z = layer.b[j] + sum(h[i] * layer.W[i, j] for i in range(len(h)))
            out.append(max(z, 0.0) if layer.activation == "relu"
                       else np.tanh(z) if layer.activation == "tanh" else z)
        h = out
    return np.array(h)


def random_net(rng):
    n_layers = int(rng.integers(1, 4))
    dims = [int(d) for d in rng.integers(1, 9, size=n_layers + 1)]
    specs = [LayerSpec(dims[i], dims[i + 1], ACTS[int(rng.integers(3))]) for i in range(n_layers)]
    net = net_init(specs, rng)
    for layer in net.layers:
        layer.b[:] = rng.normal(size=layer.b.shape)  # exercise the bias path
    return net


def fd_check(net, x, g, h=1e-6):
    """Max relative error of analytic vs central finite-difference gradients."""
    def f():
        return float(np.sum(forward(net, x)[0] * g))

    out, cache = forward(net, x)
    grads, in_grad = backward(net, cache, g)
    worst = 0.0
    pairs = list(zip(net.params(), grads.flat())) + [(x, in_grad)]
    for p, an in pairs:
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            fp = f()
            p[idx] = orig - h
            fm = f()
            p[idx] = orig
            num = (fp - fm) / (2 * h)
            err = abs(num - an[idx]) / max(1.0, abs(num), abs(an[idx]))
            worst = max(worst, err)
    return worst


def test_init_bounds_and_determinism():
    net = net_init([LayerSpec(1, 1, "linear")], 0)
    assert abs(net.layers[0].W[0, 0]) <= 1 and net.layers[0].b[0] == 0
    a = net_init([LayerSpec(3, 50, "relu"), LayerSpec(50, 25, "relu"), LayerSpec(25, 1, "tanh")], 7)
    b = net_init([LayerSpec(3, 50, "relu"), LayerSpec(50, 25, "relu"), LayerSpec(25, 1, "tanh")], 7)
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))
    assert a.param_count == 1501
    assert np.all(np.abs(a.layers[1].W) <= 1 / np.sqrt(50))


def test_init_rejects_broken_chain():
    with pytest.raises(ValueError):
        net_init([LayerSpec(3, 4, "relu"), LayerSpec(5, 1, "linear")], 0)
    with pytest.raises(ValueError):
        LayerSpec(0, 1, "relu")


def test_forward_trivial_cases():
    for act in ACTS:
        net = DenseNet([Layer(np.zeros((3, 2)), np.zeros(2), act)])
        assert np.all(forward(net, np.array([1.0, -2.0, 3.0]))[0] == 0)
    ident = DenseNet([Layer(np.eye(2), np.zeros(2), "linear")])
    assert forward(ident, np.array([1.0, 2.0]))[0].tolist() == [1.0, 2.0]
    with pytest.raises(ValueError):
        forward(ident, np.ones(3))


def test_forward_matches_reference_evaluator():
    net = net_init([LayerSpec(3, 50, "relu"), LayerSpec(50, 25, "relu"), LayerSpec(25, 1, "tanh")], 3)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(size=3)
        np.testing.assert_allclose(forward(net, x)[0], reference_eval(net, x), rtol=0, atol=1e-12)
    batch = rng.normal(size=(16, 3))
    rows = np.array([reference_eval(net, r) for r in batch])
    np.testing.assert_allclose(forward(net, batch)[0], rows, rtol=0, atol=1e-12)


def test_backward_hand_chain_rule():
    net = DenseNet([Layer(np.array([[2.0]]), np.array([0.5]), "linear")])
    _, cache = forward(net, np.array([3.0]))
    grads, din = backward(net, cache, np.array([1.5]))
    assert grads.dW[0][0, 0] == 3.0 * 1.5
    assert grads.db[0][0] == 1.5
    assert din[0] == 2.0 * 1.5


def test_backward_zero_out_grad():
    net = random_net(np.random.default_rng(1))
    x = np.ones(net.in_dim)
    _, cache = forward(net, x)
    grads, din = backward(net, cache, np.zeros(net.out_dim))
    assert all(np.all(g == 0) for g in grads.flat()) and np.all(din == 0)


def test_backward_rejects_foreign_cache():
    a = random_net(np.random.default_rng(2))
    b = a.copy()
    _, cache = forward(a, np.ones(a.in_dim))
    with pytest.raises(ValueError):
        backward(b, cache, np.ones(a.out_dim))


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = random_net(rng)
    x = rng.normal(size=net.in_dim)
    g = rng.normal(size=net.out_dim)
    assert fd_check(net, x, g) <= 1e-4


def test_batch_gradients_are_row_sums():
    rng = np.random.default_rng(4)
    net = random_net(rng)
    X = rng.normal(size=(5, net.in_dim))
    G = rng.normal(size=(5, net.out_dim))
    _, cache = forward(net, X)
    total, din = backward(net, cache, G)
    acc = [np.zeros_like(p) for p in net.params()]
    for i in range(5):
        _, c = forward(net, X[i])
        gi, di = backward(net, c, G[i])
        acc = [a + b for a, b in zip(acc, gi.flat())]
        np.testing.assert_allclose(din[i], di, atol=1e-12)
    for a, b in zip(acc, total.flat()):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_tanh_output_bounded():
    rng = np.random.default_rng(5)
    net = net_init([LayerSpec(3, 8, "relu"), LayerSpec(8, 2, "tanh")], 5)
    for layer in net.layers:
        layer.W *= 50
    out = forward(net, rng.normal(size=(200, 3)) * 10)[0]
    assert np.all(np.abs(out) <= 1)


def scalar_net(w):
    return DenseNet([Layer(np.array([[w]]), np.zeros(1), "linear")])


def grads_for(net, g):
    _, cache = forward(net, np.array([1.0]))
    return backward(net, cache, np.array([g]))[0]


def test_adam_zero_grad_noop():
    net = scalar_net(0.3)
    opt = OptState.for_net(net)
    opt_step(net, grads_for(net, 0.0), opt, 0.1)
    assert net.layers[0].W[0, 0] == 0.3 and opt.step == 1


def test_adam_first_step_closed_form():
    net = scalar_net(0.0)
    opt = OptState.for_net(net)
    opt_step(net, grads_for(net, 1.0), opt, 0.1)
    # m_hat = 1, v_hat = 1 -> delta = lr / (1 + eps)
    assert net.layers[0].W[0, 0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)


def test_adam_quadratic_bowl():
    net = scalar_net(1.0)
    opt = OptState.for_net(net)
    for _ in range(500):
        w = net.layers[0].W[0, 0]
        grads = grads_for(net, 0.0)
        grads.dW[0][0, 0] = 2 * w  # d(w^2)/dw
        opt_step(net, grads, opt, 0.01)
    assert abs(net.layers[0].W[0, 0]) < 1e-2


def test_adam_shape_mismatch():
    a = scalar_net(1.0)
    b = net_init([LayerSpec(2, 1, "linear")], 0)
    with pytest.raises(ValueError):
        opt_step(a, grads_for(a, 1.0), OptState.for_net(b), 0.1)


def test_update_determinism():
    def train():
        net = net_init([LayerSpec(3, 6, "relu"), LayerSpec(6, 1, "linear")], 11)
        opt = OptState.for_net(net)
        rng = np.random.default_rng(0)
        for _ in range(30):
            x = rng.normal(size=(8, 3))
            _, c = forward(net, x)
            opt_step(net, backward(net, c, np.ones((8, 1)))[0], opt, 1e-3)
        return net

    a, b = train(), train()
    assert all(p.tobytes() == q.tobytes() for p, q in zip(a.params(), b.params()))


def test_soft_update():
    a = net_init([LayerSpec(2, 3, "relu")], 0)
    b = net_init([LayerSpec(2, 3, "relu")], 1)
    t = a.copy()
    soft_update(t, b, 1.0)
    assert all(np.array_equal(p, q) for p, q in zip(t.params(), b.params()))
    t = a.copy()
    soft_update(t, b, 0.25)
    for p, pa, pb in zip(t.params(), a.params(), b.params()):
        np.testing.assert_allclose(p, 0.75 * pa + 0.25 * pb, atol=1e-15)


def test_serialize_roundtrip_and_length():
    net = net_init([LayerSpec(3, 50, "relu"), LayerSpec(50, 25, "relu"), LayerSpec(25, 1, "tanh")], 9)
    meta = {"grade": "I"}
    blob = net_serialize(net, meta)
    assert len(blob) == header_size(net, meta) + 8 * net.param_count
    back = net_deserialize(blob)
    X = np.random.default_rng(0).normal(size=(100, 3))
    assert forward(back, X)[0].tobytes() == forward(net, X)[0].tobytes()
    assert net_serialize(back, meta) == blob


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + b"\x09\x00" + b[6:],
    lambda b: b[:-1],
    lambda b: b[:10],
    lambda b: b + b"\x00",
])
def test_deserialize_errors(mutate):
    blob = net_serialize(net_init([LayerSpec(2, 2, "tanh")], 0))
    with pytest.raises(CheckpointError):
        net_deserialize(mutate(blob))
