import numpy as np
import pytest

from mixlen.diffusion import make_schedule
from mixlen.diffusion.model import EpsilonNet, loss_and_grad
from mixlen.diffusion.network import ACTIVATIONS, MLP, Adam
from mixlen.exceptions import ConfigError

H = 1e-4


def central_difference(f, params, k, idx):
    p = params[k]
    old = p[idx]
    p[idx] = old + H
    up = f()
    p[idx] = old - H
    down = f()
    p[idx] = old
    return (up - down) / (2 * H)


def pick_weights(params, n, rng):
    picks = []
    for _ in range(n):
        k = int(rng.integers(len(params)))
        picks.append((k, tuple(int(rng.integers(s)) for s in params[k].shape)))
    return picks


@pytest.mark.parametrize("activation", ["softplus", "tanh"])
def test_loss_gradient_matches_finite_differences(activation):
    rng = np.random.default_rng(0)
    sched = make_schedule()
    net = EpsilonNet(4, sched.T, hidden_layers=(16, 16), activation=activation, time_embedding_dim=8, rng=1)
    # nudge the zero-initialised biases so their gradients are not special
    for b in net.params[1::2]:
        b += rng.normal(scale=0.1, size=b.shape)
    X = rng.normal(size=(8, 4))
    y0 = rng.normal(size=8)
    fx = rng.normal(size=8)
    t = rng.integers(1, sched.T + 1, size=8)
    eps = rng.normal(size=8)
    _, grads = loss_and_grad(net, X, y0, fx, t, eps, sched)

    def loss():
        return loss_and_grad(net, X, y0, fx, t, eps, sched)[0]

    picks = pick_weights(net.params, 30, rng)
    for k, idx in picks:
        numeric = central_difference(loss, net.params, k, idx)
        analytic = grads[k][idx]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
        assert rel < 1e-4, (k, idx, analytic, numeric)


def test_relu_gradient_away_from_kinks():
    rng = np.random.default_rng(5)
    mlp = MLP(3, (6,), "relu", rng=2)
    x = rng.normal(size=(5, 3))
    g_out = rng.normal(size=5)
    out, cache = mlp.forward(x, cache=True)
    grads = mlp.backward(cache, g_out)
    for k, idx in pick_weights(mlp.params, 20, rng):
        numeric = central_difference(lambda: float(g_out @ mlp.forward(x)), mlp.params, k, idx)
        assert grads[k][idx] == pytest.approx(numeric, rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("name", sorted(ACTIVATIONS))
def test_activation_derivatives(name):
    fn, dfn = ACTIVATIONS[name]
    z = np.linspace(-6, 6, 41) + 0.013
    numeric = (fn(z + 1e-6) - fn(z - 1e-6)) / 2e-6
    np.testing.assert_allclose(dfn(z), numeric, rtol=1e-6, atol=1e-8)


def test_softplus_is_stable():
    fn, dfn = ACTIVATIONS["softplus"]
    z = np.array([-800.0, 0.0, 800.0])
    out = fn(z.copy())
    assert np.all(np.isfinite(out))
    assert out[2] == 800.0 and out[1] == pytest.approx(np.log(2))
    assert np.all(np.isfinite(dfn(z)))


def test_mlp_shapes_and_init():
    mlp = MLP(5, (7, 3), rng=0)
    assert mlp.sizes == [5, 7, 3, 1]
    assert [p.shape for p in mlp.params] == [(5, 7), (7,), (7, 3), (3,), (3, 1), (1,)]
    assert all(np.all(b == 0) for b in mlp.params[1::2])
    assert mlp(np.zeros((4, 5))).shape == (4,)
    with pytest.raises(ConfigError):
        MLP(2, (3,), "gelu")


def adam_oracle(p, grads_seq, lr=1e-2, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for k, g in enumerate(grads_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**k)) / ((v / (1 - b2**k)) ** 0.5 + eps)
    return p


def test_adam_matches_scalar_oracle():
    grads_seq = [0.5, -1.0, 2.0, 0.1]
    p = [np.array([3.0])]
    opt = Adam(p, lr=1e-2)
    for g in grads_seq:
        opt.step(p, [np.array([g])])
    assert p[0][0] == pytest.approx(adam_oracle(3.0, grads_seq), rel=1e-14)


def test_adam_minimises_quadratic():
    p = [np.array([5.0, -3.0])]
    opt = Adam(p, lr=0.1)
    for _ in range(500):
        opt.step(p, [2 * p[0]])
    np.testing.assert_allclose(p[0], 0.0, atol=1e-2)
