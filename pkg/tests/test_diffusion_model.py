import math

import numpy as np
import pytest
from sklearn.base import clone

from mixlen.dataio import gen_toy
from mixlen.diffusion import ConditionalDiffusionRegressor, make_schedule
from mixlen.diffusion.model import EpsilonNet, diffusion_loss
from mixlen.exceptions import ConfigError, ModelFormatError, UsageError
from mixlen.pretrain import BoostedModel, GradientBoostingEnsemble

SMALL = dict(hidden_layers=(16, 16), time_embedding_dim=8, epochs=3, batch_size=32,
             n_samples=40, cross_fit=2, n_steps=50)
SMALL_COND = GradientBoostingEnsemble(n_trees=10, n_members=1)


@pytest.fixture(scope="module")
def toy_small():
    x, y = gen_toy(200, seed=0)
    return x[:, None], y


@pytest.fixture(scope="module")
def small_model(toy_small):
    X, y = toy_small
    return ConditionalDiffusionRegressor(conditioner=SMALL_COND, **SMALL).fit(X, y)


def test_loss_zero_for_perfect_net():
    sched = make_schedule()
    rng = np.random.default_rng(0)
    y0 = rng.normal(size=500)
    fx = rng.normal(size=500)

    def oracle(X, y_t, f, t):
        ab = sched.alpha_bar[t]
        return (y_t - np.sqrt(ab) * y0 - (1 - np.sqrt(ab)) * f) / np.sqrt(1 - ab)

    assert diffusion_loss(np.zeros((500, 1)), y0, fx, oracle, sched, rng=1) == pytest.approx(0.0, abs=1e-18)


def test_loss_of_zero_net_is_one():
    sched = make_schedule()
    n = 10_000
    loss = diffusion_loss(np.zeros((n, 1)), np.zeros(n), np.zeros(n),
                          lambda X, y, f, t: np.zeros(len(y)), sched, rng=2)
    assert abs(loss - 1.0) < 3 * math.sqrt(2.0 / n)


def test_loss_rejects_empty_batch():
    with pytest.raises(UsageError):
        diffusion_loss(np.zeros((0, 1)), np.zeros(0), np.zeros(0), None, make_schedule(), rng=0)


def test_zero_epochs_keeps_initial_weights(toy_small):
    X, y = toy_small
    model = ConditionalDiffusionRegressor(conditioner=SMALL_COND, **{**SMALL, "epochs": 0}).fit(X, y)
    init_seed = np.random.SeedSequence(model.random_state).spawn(3)[0]
    ref = EpsilonNet(1, 50, (16, 16), "softplus", 8, np.random.default_rng(init_seed))
    for a, b in zip(model.net_.params, ref.params):
        np.testing.assert_array_equal(a, b)
    assert model.loss_curve_ == []


def test_training_reduces_loss(small_model):
    assert len(small_model.loss_curve_) == 3
    assert all(math.isfinite(v) for v in small_model.loss_curve_)
    assert small_model.loss_curve_[-1] < small_model.initial_loss_


def test_sample_shapes_and_determinism(small_model, toy_small):
    X = toy_small[0][:5]
    a = small_model.sample(X, 7, random_state=3)
    b = small_model.sample(X, 7, random_state=3)
    assert a.shape == (5, 7)
    np.testing.assert_array_equal(a, b)
    c = small_model.sample(X, 7, random_state=4)
    assert not np.array_equal(a, c)


def test_single_chain_reproducible(small_model, toy_small):
    X = toy_small[0][:1]
    np.testing.assert_array_equal(small_model.sample(X, 1, 11), small_model.sample(X, 1, 11))


def test_samples_independent_of_threads_and_batching(small_model, toy_small):
    X = toy_small[0][:70]
    ref = small_model.sample(X, 5, random_state=1)
    threaded = clone(small_model).set_params(n_jobs=3)
    threaded.__dict__.update({k: v for k, v in small_model.__dict__.items() if k.endswith("_")})
    np.testing.assert_array_equal(threaded.sample(X, 5, random_state=1), ref)


def test_float64_inference_close_to_float32(small_model, toy_small):
    X = toy_small[0][:3]
    lo = small_model.sample(X, 10, random_state=2)
    hi = clone(small_model).set_params(inference_dtype="float64")
    hi.__dict__.update({k: v for k, v in small_model.__dict__.items() if k.endswith("_")})
    np.testing.assert_allclose(hi.sample(X, 10, random_state=2), lo, atol=1e-3)


def test_conditioner_only_hook(small_model, toy_small):
    X = toy_small[0][:4]
    s = small_model.sample(X, 25, conditioner_only=True)
    np.testing.assert_allclose(s, np.repeat(small_model.conditioner_.predict(X)[:, None], 25, axis=1), rtol=1e-12)


def test_predict_y0_noiseless_inversion(small_model, toy_small):
    """With a zero network and eps = 0 the clean target comes back exactly."""
    X = toy_small[0][:6]
    model = clone(small_model)
    model.__dict__.update({k: v for k, v in small_model.__dict__.items() if k.endswith("_")})
    model.net_ = EpsilonNet(1, 50, (16, 16), "softplus", 8, rng=0)
    for p in model.net_.params:
        p[...] = 0
    y0 = np.linspace(1, 6, 6)
    t = 30
    f = model.conditioner_.predict(X)
    s = math.sqrt(model.schedule_.alpha_bar[t])
    y_t = s * y0 + (1 - s) * f
    np.testing.assert_allclose(model.predict_y0(X, y_t, t), y0, rtol=1e-12)


def test_linear_gaussian_chain_variance():
    """Zero network and zero shift: the chain is a scalar AR recursion."""
    x, y = gen_toy(100, seed=1)
    X = x[:, None]
    model = ConditionalDiffusionRegressor(hidden_layers=(4,), time_embedding_dim=4, epochs=0,
                                          cross_fit=0, conditioner=SMALL_COND,
                                          inference_dtype="float64").fit(X, y)
    for p in model.net_.params:
        p[...] = 0
    model.conditioner_ = GradientBoostingEnsemble.from_members([BoostedModel(model.y_mean_, [], 0.1)])
    model.conditioner_.n_features_in_ = 1

    # independent scalar oracle of the variance recursion
    T, b1, bT = 1000, 1e-5, 2e-3
    betas = [b1 + (k - 1) * (bT - b1) / (T - 1) for k in range(1, T + 1)]
    abar = [1.0]
    for b in betas:
        abar.append(abar[-1] * (1 - b))
    var = 1.0
    for t in range(T, 0, -1):
        ab, ab_prev, b = abar[t], abar[t - 1], betas[t - 1]
        gain = (b * math.sqrt(ab_prev) / (1 - ab)) / math.sqrt(ab) + (1 - ab_prev) * math.sqrt(1 - b) / (1 - ab)
        var = gain**2 * var + (1 - ab_prev) / (1 - ab) * b
    n = 10_000
    s = model.sample(X[:1], n, random_state=5)[0]
    z = (s - model.y_mean_) / model.y_scale_
    assert abs(z.mean()) < 4 * math.sqrt(var / n)
    assert z.var() == pytest.approx(var, rel=4 * math.sqrt(2 / n))


def test_save_load_bit_exact(small_model, toy_small, tmp_path):
    path = tmp_path / "model.json"
    small_model.save(path)
    back = ConditionalDiffusionRegressor.load(path)
    X = toy_small[0][:4]
    np.testing.assert_array_equal(back.sample(X, 6, 9), small_model.sample(X, 6, 9))
    assert back.get_params(deep=False).keys() == small_model.get_params(deep=False).keys()


def test_load_rejects_bad_documents(small_model):
    doc = small_model.to_dict()
    with pytest.raises(ModelFormatError):
        ConditionalDiffusionRegressor.from_dict({**doc, "version": 99})
    bad = dict(doc, weights=doc["weights"][:-1] + [[0.0, 0.0]])
    with pytest.raises(ModelFormatError):
        ConditionalDiffusionRegressor.from_dict(bad)


def test_untrained_usage_error():
    with pytest.raises(UsageError):
        ConditionalDiffusionRegressor().sample(np.ones((1, 1)))


@pytest.mark.parametrize("bad", [dict(activation="gelu"), dict(epochs=-1), dict(lr_schedule="step"),
                                 dict(inference_dtype="float16")])
def test_invalid_params(bad, toy_small):
    with pytest.raises(ConfigError):
        ConditionalDiffusionRegressor(**bad).fit(*toy_small)


def test_predict_interval_nesting(small_model, toy_small):
    X = toy_small[0][:5]
    p90, lo90, hi90 = small_model.predict_interval(X, 0.90)
    p95, lo95, hi95 = small_model.predict_interval(X, 0.95)
    np.testing.assert_array_equal(p90, p95)
    assert np.all(lo95 <= lo90) and np.all(hi95 >= hi90)


@pytest.mark.slow
def test_toy_mean_at_five():
    x, y = gen_toy(1000, seed=3)
    model = ConditionalDiffusionRegressor(
        conditioner=GradientBoostingEnsemble(n_trees=100, n_members=1), hidden_layers=(64, 64),
        epochs=150, n_samples=400, random_state=1,
    ).fit(x[:, None], y)
    mean = model.sample(np.array([[5.0]]), 400, random_state=0).mean()
    assert mean == pytest.approx(5 * math.exp(0.125), rel=0.10)
