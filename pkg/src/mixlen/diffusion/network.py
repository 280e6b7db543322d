"""Feed-forward noise-prediction network with hand-written backpropagation."""

from __future__ import annotations

import numpy as np

from ..exceptions import ConfigError


def _softplus(z):
    out = np.abs(z)
    np.negative(out, out=out)
    np.exp(out, out=out)
    np.log1p(out, out=out)
    out += np.maximum(z, 0)
    return out


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _relu(z):
    return np.maximum(z, 0)


def _relu_grad(z):
    return (z > 0).astype(z.dtype)


def _tanh_grad(z):
    return 1.0 - np.tanh(z) ** 2


# name -> (activation, derivative w.r.t. pre-activation)
ACTIVATIONS = {
    "softplus": (_softplus, _sigmoid),
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, _tanh_grad),
}


class MLP:
    """Dense network ``in -> hidden... -> 1`` with a scalar output.

    Parameters are held in ``self.params`` as ``[W0, b0, W1, b1, ...]`` so
    optimisers and gradient checks can treat them as a flat list.
    """

    def __init__(self, n_inputs, hidden_layers=(128, 128, 128), activation="softplus", rng=None):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}; choose from {sorted(ACTIVATIONS)}")
        self.activation = activation
        self.sizes = [int(n_inputs), *[int(h) for h in hidden_layers], 1]
        rng = np.random.default_rng(rng)
        self.params = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    @property
    def n_layers(self):
        return len(self.params) // 2

    def forward(self, inputs, cache=False):
        act, _ = ACTIVATIONS[self.activation]
        h = inputs
        pre = []
        hs = [inputs]
        for k in range(self.n_layers):
            z = h @ self.params[2 * k] + self.params[2 * k + 1]
            if k == self.n_layers - 1:
                h = z
            else:
                pre.append(z)
                h = act(z)
                hs.append(h)
        out = h[:, 0]
        return (out, (hs, pre)) if cache else out

    def backward(self, cache, grad_out):
        """Gradients of a scalar loss given ``dloss/doutput`` of shape (n,)."""
        _, dact = ACTIVATIONS[self.activation]
        hs, pre = cache
        grads = [None] * len(self.params)
        g = grad_out[:, None]
        for k in reversed(range(self.n_layers)):
            grads[2 * k] = hs[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            if k > 0:
                g = (g @ self.params[2 * k].T) * dact(pre[k - 1])
        return grads

    def __call__(self, inputs):
        return self.forward(inputs)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, params, grads):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.step_count
        corr2 = 1.0 - b2**self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
