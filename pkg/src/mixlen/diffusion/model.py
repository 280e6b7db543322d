"""Conditional denoising diffusion regressor.

The model learns ``p(y | x)`` around a pre-trained point regressor ``f(x)``:
the forward chain drifts ``y`` towards ``f(x)`` while adding Gaussian noise,
a network learns the injected noise, and the reverse chain turns draws from
``N(f(x), 1)`` into pseudo-samples of ``y``. Everything runs on standardized
inputs and target; samples are mapped back to the original units.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import KFold
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..exceptions import ConfigError, ModelFormatError, TrainingError, UsageError
from ..intervals import make_interval
from ..pretrain import GradientBoostingEnsemble
from .network import ACTIVATIONS, MLP, Adam
from .schedule import (
    DiffusionSchedule,
    _forward,
    make_schedule,
    posterior_coefficients,
    time_embedding,
    y0_from_eps,
)

FORMAT_NAME = "mixlen-diffusion"
FORMAT_VERSION = 1
_BLOCK_ROWS = 32


class EpsilonNet:
    """Noise predictor ``nn(x, y_t, f(x), t)`` over standardized quantities.

    Inputs are laid out as ``[x, y_t, f(x), embed(t / T)]``.
    """

    def __init__(self, n_features, T, hidden_layers=(128, 128, 128), activation="softplus",
                 time_embedding_dim=32, rng=None):
        self.n_features = int(n_features)
        self.T = int(T)
        self.time_embedding_dim = int(time_embedding_dim)
        self.mlp = MLP(self.n_features + 2 + self.time_embedding_dim, hidden_layers, activation, rng)

    @property
    def params(self):
        return self.mlp.params

    def inputs(self, X, y_t, fx, t):
        n = len(X)
        emb = time_embedding(np.broadcast_to(t, (n,)), self.T, self.time_embedding_dim)
        return np.column_stack([X, y_t, np.broadcast_to(fx, (n,)), emb])

    def __call__(self, X, y_t, fx, t):
        return self.mlp.forward(self.inputs(X, y_t, fx, t))


def loss_and_grad(net: EpsilonNet, X, y0, fx, t, eps, sched: DiffusionSchedule):
    """Mean squared noise-prediction error and its gradient w.r.t. ``net.params``.

    ``t`` and ``eps`` are given per row, which makes the loss a deterministic
    function of the weights.
    """
    y_t = _forward(y0, fx, sched.alpha_bar[t], eps)
    out, cache = net.mlp.forward(net.inputs(X, y_t, fx, t), cache=True)
    diff = out - eps
    loss = float(np.mean(diff**2))
    grads = net.mlp.backward(cache, 2.0 * diff / len(diff))
    return loss, grads


def diffusion_loss(X, y0, fx, net, sched: DiffusionSchedule, rng):
    """Draw ``t ~ U{1..T}`` and ``eps ~ N(0, 1)`` per row and score ``net``.

    ``net`` is any callable ``net(X, y_t, fx, t) -> eps_hat``.
    """
    if len(y0) == 0:
        raise UsageError("loss needs a non-empty batch")
    rng = np.random.default_rng(rng)
    n = len(y0)
    t = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal(n)
    y_t = _forward(y0, fx, sched.alpha_bar[t], eps)
    return float(np.mean((eps - net(X, y_t, fx, t)) ** 2))


def _is_fitted(est):
    try:
        check_is_fitted(est)
    except NotFittedError:
        return False
    return True


class ConditionalDiffusionRegressor(RegressorMixin, BaseEstimator):
    """Conditional diffusion model producing pseudo-samples of ``y | x``.

    Parameters
    ----------
    conditioner : regressor, optional
        Point regressor ``f(x)``. A fitted estimator is used as is; an
        unfitted one is cloned and fitted on the training data. Defaults to
        :class:`~mixlen.pretrain.GradientBoostingEnsemble`.
    n_steps, beta_start, beta_end : int, float, float
        Linear noise schedule, default 1000 steps from 1e-5 to 2e-3.
    hidden_layers : tuple of int, default=(128, 128, 128)
    activation : {"softplus", "relu", "tanh"}, default="softplus"
    time_embedding_dim : int, default=32
    epochs : int, default=500
    batch_size : int, default=64
    learning_rate : float, default=1e-3
    adam_beta1, adam_beta2, adam_eps : float
        Adam moment decay rates and stabilizer.
    lr_schedule : {"constant", "cosine"}, default="constant"
        ``"cosine"`` anneals the step size from ``learning_rate`` towards zero
        over the epochs, which averages out the noise of the regression
        target late in training.
    cross_fit : int or None, default=5
        Number of folds used to produce out-of-fold conditioner predictions
        for the training rows. In-sample predictions of a flexible
        conditioner are closer to the targets than predictions on new rows,
        which teaches the network too narrow a spread. ``None`` or ``0``
        uses the in-sample predictions of the fitted conditioner.
    n_samples : int, default=200
        Pseudo-samples per row used by :meth:`predict` and
        :meth:`predict_interval`.
    inference_dtype : {"float32", "float64"}, default="float32"
        Precision of the network during sampling. The chain state is always
        float64.
    n_jobs : int, default=1
        Threads used for sampling. Results do not depend on this value.
    random_state : int, default=0

    Attributes
    ----------
    net_ : EpsilonNet
    schedule_ : DiffusionSchedule
    conditioner_ : regressor
    loss_curve_ : list of float
        Mean training loss per epoch.
    initial_loss_ : float
        Training-set loss of the initial weights.
    """

    def __init__(self, conditioner=None, n_steps=1000, beta_start=1e-5, beta_end=2e-3,
                 hidden_layers=(128, 128, 128), activation="softplus", time_embedding_dim=32,
                 epochs=500, batch_size=64, learning_rate=1e-3, adam_beta1=0.9, adam_beta2=0.999,
                 adam_eps=1e-8, lr_schedule="constant", cross_fit=5, n_samples=200, inference_dtype="float32", n_jobs=1, random_state=0):
        self.conditioner = conditioner
        self.n_steps = n_steps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.hidden_layers = hidden_layers
        self.activation = activation
        self.time_embedding_dim = time_embedding_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.lr_schedule = lr_schedule
        self.cross_fit = cross_fit
        self.n_samples = n_samples
        self.inference_dtype = inference_dtype
        self.n_jobs = n_jobs
        self.random_state = random_state

    # -- fitting ---------------------------------------------------------

    def _validate_params(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        if self.inference_dtype not in ("float32", "float64"):
            raise ConfigError(f"inference_dtype must be float32 or float64, got {self.inference_dtype!r}")

    def fit(self, X, y):
        self._validate_params()
        X, y = check_X_y(X, y, y_numeric=True)
        if self.conditioner is None:
            cond = GradientBoostingEnsemble(random_state=self.random_state).fit(X, y)
        elif _is_fitted(self.conditioner):
            cond = self.conditioner
        else:
            cond = clone(self.conditioner).fit(X, y)
        self.conditioner_ = cond
        self.schedule_ = make_schedule(self.n_steps, self.beta_start, self.beta_end)

        self.x_mean_ = X.mean(axis=0)
        x_std = X.std(axis=0)
        self.x_scale_ = np.where(x_std > 0, x_std, 1.0)
        self.y_mean_ = float(y.mean())
        y_std = float(y.std())
        self.y_scale_ = y_std if y_std > 0 else 1.0
        self.n_features_in_ = X.shape[1]

        Xs = self._scale_X(X)
        ys = (y - self.y_mean_) / self.y_scale_
        fs = (self._out_of_fold(X, y) - self.y_mean_) / self.y_scale_

        ss = np.random.SeedSequence(self.random_state)
        init_seed, loop_seed, probe_seed = ss.spawn(3)
        self.net_ = EpsilonNet(X.shape[1], self.schedule_.T, self.hidden_layers, self.activation,
                               self.time_embedding_dim, np.random.default_rng(init_seed))
        self.initial_loss_ = diffusion_loss(Xs, ys, fs, self.net_, self.schedule_,
                                            np.random.default_rng(probe_seed))
        self.loss_curve_ = self._train(Xs, ys, fs, np.random.default_rng(loop_seed))
        return self

    def _out_of_fold(self, X, y):
        k = self.cross_fit or 0
        if k < 2:
            return np.asarray(self.conditioner_.predict(X), dtype=float)
        if k > len(y):
            raise ConfigError(f"cross_fit={k} exceeds the number of training rows")
        out = np.empty(len(y))
        folds = KFold(k, shuffle=True, random_state=self.random_state)
        for fit_idx, hold_idx in folds.split(X):
            model = clone(self.conditioner_).fit(X[fit_idx], y[fit_idx])
            out[hold_idx] = model.predict(X[hold_idx])
        return out

    def _train(self, Xs, ys, fs, rng):
        net, sched = self.net_, self.schedule_
        opt = Adam(net.params, self.learning_rate, self.adam_beta1, self.adam_beta2, self.adam_eps)
        n = len(ys)
        curve = []
        for epoch in range(1, self.epochs + 1):
            if self.lr_schedule == "cosine":
                opt.lr = self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * (epoch - 1) / self.epochs))
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                t = rng.integers(1, sched.T + 1, size=len(idx))
                eps = rng.standard_normal(len(idx))
                loss, grads = loss_and_grad(net, Xs[idx], ys[idx], fs[idx], t, eps, sched)
                if not math.isfinite(loss):
                    raise TrainingError(epoch, loss)
                opt.step(net.params, grads)
                total += loss * len(idx)
            curve.append(total / n)
        return curve

    # -- helpers ---------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise UsageError("model is not trained; call fit() first")

    def _scale_X(self, X):
        return (X - self.x_mean_) / self.x_scale_

    def _scaled_conditioner(self, X):
        return (np.asarray(self.conditioner_.predict(X), dtype=float) - self.y_mean_) / self.y_scale_

    def predict_y0(self, X, y_t, t):
        """Estimate of the clean target from a corrupted one, original units."""
        self._check_fitted()
        X = check_array(X)
        self.schedule_.check_t(t)
        Xs = self._scale_X(X)
        fs = self._scaled_conditioner(X)
        ys_t = (np.asarray(y_t, dtype=float) - self.y_mean_) / self.y_scale_
        eps_hat = self.net_(Xs, ys_t, fs, t)
        y0 = y0_from_eps(ys_t, fs, eps_hat, self.schedule_.alpha_bar[np.asarray(t)])
        return y0 * self.y_scale_ + self.y_mean_

    # -- sampling --------------------------------------------------------

    def sample(self, X, n_samples=None, random_state=None, *, conditioner_only=False):
        """Run ``n_samples`` independent reverse chains per row of ``X``.

        Each row draws from its own stream derived from ``random_state``, so
        the result does not depend on ``n_jobs`` or on how rows are batched.
        ``conditioner_only`` replaces the network by zero and switches off all
        noise; every sample then equals ``f(x)``.

        Returns
        -------
        samples : ndarray of shape (n_rows, n_samples)
            Pseudo-samples in the units of ``y``.
        """
        self._check_fitted()
        X = check_array(X)
        N = self.n_samples if n_samples is None else int(n_samples)
        if N < 1:
            raise UsageError(f"n_samples must be >= 1, got {N}")
        seed = self.random_state if random_state is None else random_state
        Xs = self._scale_X(X)
        fs = self._scaled_conditioner(X)
        if conditioner_only:
            return np.repeat(fs[:, None] * self.y_scale_ + self.y_mean_, N, axis=1)
        row_seeds = np.random.SeedSequence(seed).spawn(len(X))
        blocks = [slice(i, min(i + _BLOCK_ROWS, len(X))) for i in range(0, len(X), _BLOCK_ROWS)]
        consts = self._sampling_constants()

        def run(sl):
            rngs = [np.random.default_rng(s) for s in row_seeds[sl]]
            return self._sample_block(Xs[sl], fs[sl], N, rngs, consts)

        out = np.empty((len(X), N))
        if self.n_jobs > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(self.n_jobs) as pool:
                results = list(pool.map(run, blocks))
        else:
            results = [run(sl) for sl in blocks]
        for sl, res in zip(blocks, results):
            out[sl] = res
        return out * self.y_scale_ + self.y_mean_

    def _sampling_constants(self):
        dt = np.dtype(self.inference_dtype)
        net = self.net_
        d = net.n_features
        W0, b0 = net.params[0], net.params[1]
        T = self.schedule_.T
        emb = time_embedding(np.arange(1, T + 1), T, net.time_embedding_dim)
        # first-layer contribution of the time embedding, one row per t
        t_bias = np.vstack([np.zeros(len(b0)), emb @ W0[d + 2:] + b0]).astype(dt)
        rest = [p.astype(dt) for p in net.params[2:]]
        return dt, W0[:d], W0[d], W0[d + 1], t_bias, rest

    def _sample_block(self, Xs, fs, N, rngs, consts):
        dt, W_x, w_y, w_f, t_bias, rest = consts
        act, _ = ACTIVATIONS[self.activation]
        sched = self.schedule_
        static = np.repeat((Xs @ W_x + fs[:, None] * w_f[None, :]).astype(dt), N, axis=0)
        w_y = w_y.astype(dt)
        f = np.repeat(fs, N)
        n_layers = len(rest) // 2

        def noise():
            return np.concatenate([r.standard_normal(N) for r in rngs])

        y = f + noise()
        for t in range(sched.T, 0, -1):
            h = act(static + y.astype(dt)[:, None] * w_y + t_bias[t])
            for k in range(n_layers):
                h = h @ rest[2 * k] + rest[2 * k + 1]
                if k < n_layers - 1:
                    h = act(h)
            eps_hat = h[:, 0].astype(float)
            y0_hat = y0_from_eps(y, f, eps_hat, sched.alpha_bar[t])
            c_y0, c_yt, c_fx = posterior_coefficients(t, sched)
            y = c_y0 * y0_hat + c_yt * y + c_fx * f
            if sched.beta_tilde[t] > 0:
                y = y + math.sqrt(sched.beta_tilde[t]) * noise()
        return y.reshape(len(rngs), N)

    def predict(self, X):
        """Mean of the pseudo-samples."""
        return self.sample(X).mean(axis=1)

    def predict_interval(self, X, alpha=0.9):
        """Quantile interval at confidence level ``alpha`` for every row.

        Returns
        -------
        point, lower, upper : ndarray of shape (n_rows,)
        """
        samples = self.sample(X)
        est = [make_interval(s, alpha) for s in samples]
        return (np.array([e.point for e in est]), np.array([e.lower for e in est]),
                np.array([e.upper for e in est]))

    # -- persistence -----------------------------------------------------

    def to_dict(self):
        self._check_fitted()
        if not isinstance(self.conditioner_, GradientBoostingEnsemble):
            raise ModelFormatError("only GradientBoostingEnsemble conditioners can be serialized")
        params = self.get_params(deep=False)
        params.pop("conditioner")
        params["hidden_layers"] = list(params["hidden_layers"])
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "params": params,
            "schedule": {"T": self.schedule_.T, "beta1": self.schedule_.beta1, "betaT": self.schedule_.betaT},
            "normalization": {
                "x_mean": self.x_mean_.tolist(),
                "x_scale": self.x_scale_.tolist(),
                "y_mean": self.y_mean_,
                "y_scale": self.y_scale_,
            },
            "layer_sizes": self.net_.mlp.sizes,
            "weights": [p.tolist() for p in self.net_.params],
            "initial_loss": self.initial_loss_,
            "loss_curve": list(self.loss_curve_),
            "conditioner": self.conditioner_.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != FORMAT_NAME:
            raise ModelFormatError(f"not a {FORMAT_NAME} document")
        if doc.get("version") != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported version {doc.get('version')!r}")
        params = dict(doc["params"])
        params["hidden_layers"] = tuple(params["hidden_layers"])
        est = cls(**params)
        est.conditioner_ = GradientBoostingEnsemble.from_dict(doc["conditioner"])
        sch = doc["schedule"]
        est.schedule_ = make_schedule(sch["T"], sch["beta1"], sch["betaT"])
        norm = doc["normalization"]
        est.x_mean_ = np.array(norm["x_mean"], dtype=float)
        est.x_scale_ = np.array(norm["x_scale"], dtype=float)
        est.y_mean_ = float(norm["y_mean"])
        est.y_scale_ = float(norm["y_scale"])
        est.n_features_in_ = len(est.x_mean_)
        net = EpsilonNet(est.n_features_in_, est.schedule_.T, params["hidden_layers"],
                         params["activation"], params["time_embedding_dim"], rng=0)
        if net.mlp.sizes != list(doc["layer_sizes"]):
            raise ModelFormatError("layer sizes do not match the stored parameters")
        weights = [np.array(w, dtype=float) for w in doc["weights"]]
        if [w.shape for w in weights] != [p.shape for p in net.params]:
            raise ModelFormatError("weight shapes do not match the layer sizes")
        net.mlp.params = weights
        est.net_ = net
        est.initial_loss_ = float(doc["initial_loss"])
        est.loss_curve_ = [float(v) for v in doc["loss_curve"]]
        return est

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: {exc}") from None
        return cls.from_dict(doc)
