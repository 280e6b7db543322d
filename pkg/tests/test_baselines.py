import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mixlen.baselines import (
    ConformalQuantileRegressor,
    LinearQuantileRegressor,
    QuantileForestRegressor,
    compare_methods,
    conformal_correction,
    conformal_rank,
    pinball_loss,
    repair_crossing,
    weighted_quantile,
)
from mixlen.dataio import gen_synthetic_pipeline, split
from mixlen.exceptions import CalibrationError, ConfigError, UsageError
from mixlen.intervals import empirical_quantile
from mixlen.pretrain import fit_tree


def test_pinball_examples():
    assert pinball_loss(0.0, 0.3) == 0.0
    assert pinball_loss(1.0, 0.9) == pytest.approx(0.9)
    assert pinball_loss(-1.0, 0.9) == pytest.approx(0.1)
    u = np.array([-2.0, 3.0])
    np.testing.assert_allclose(pinball_loss(u, 0.5), np.abs(u) / 2)
    with pytest.raises(UsageError):
        pinball_loss(1.0, 1.0)


def test_linear_qr_intercept_median():
    y = np.arange(1.0, 100.0)
    est = LinearQuantileRegressor(0.5).fit(np.zeros((len(y), 1)), y)
    assert est.intercept_ == pytest.approx(50.0, abs=1.0)


def test_linear_qr_intercept_ninetieth():
    y = np.arange(1.0, 101.0)
    est = LinearQuantileRegressor(0.9).fit(np.zeros((len(y), 1)), y)
    assert est.intercept_ == pytest.approx(np.quantile(y, 0.9), abs=1.5)


@pytest.mark.parametrize("tau", [0.1, 0.5, 0.8])
def test_linear_qr_beats_every_constant(tau):
    y = np.random.default_rng(2).exponential(size=300)
    est = LinearQuantileRegressor(tau).fit(np.zeros((300, 1)), y)
    fitted = np.mean(pinball_loss(y - est.predict(np.zeros((300, 1))), tau))
    grid = np.linspace(y.min(), y.max(), 400)
    best_const = min(np.mean(pinball_loss(y - c, tau)) for c in grid)
    assert fitted <= best_const + 1e-3


def test_linear_qr_recovers_slope():
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 10, size=(500, 1))
    y = 2 * X[:, 0] + 1 + rng.normal(size=500)
    est = LinearQuantileRegressor(0.5, steps=4000).fit(X, y)
    assert est.coef_[0] == pytest.approx(2.0, abs=0.1)
    assert est.intercept_ == pytest.approx(1.0, abs=0.5)


def test_weighted_quantile_examples():
    assert weighted_quantile([1, 2, 3], [1, 1, 1], 0.5) == 2.0
    assert weighted_quantile([3, 1, 2], [1, 1, 1], 0.0) == 1.0
    assert weighted_quantile([1, 2, 3, 9], [1, 1, 1, 0], 1.0) == 3.0


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=40), st.floats(0, 1))
def test_equal_weights_reduce_to_type7(xs, tau):
    assert weighted_quantile(xs, np.ones(len(xs)), tau) == pytest.approx(
        empirical_quantile(xs, tau), rel=1e-9, abs=1e-9)


@pytest.fixture(scope="module")
def pipeline_splits():
    ds = gen_synthetic_pipeline(600, seed=4)
    train, rest = split(ds, 0.6, seed=1)
    calib, test = split(rest, 0.5, seed=2)
    return train, calib, test


def test_forest_weights_sum_to_one(pipeline_splits):
    train, _, test = pipeline_splits
    forest = QuantileForestRegressor(n_estimators=20).fit(train.X, train.targets)
    W = forest.weights(test.X)
    np.testing.assert_allclose(W.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.all(W >= 0)


def test_forest_quantiles_ordered(pipeline_splits):
    train, _, test = pipeline_splits
    forest = QuantileForestRegressor(n_estimators=20).fit(train.X, train.targets)
    q = forest.predict_quantiles(test.X[:20], [0.0, 0.05, 0.5, 0.95])
    assert np.all(np.diff(q, axis=1) >= 0)
    np.testing.assert_array_equal(forest.predict(test.X[:20]), q[:, 2])
    assert np.all(q[:, 0] >= train.targets.min())


def test_identical_trees_match_single_tree():
    X = np.array([[0.0], [1.0], [2.0], [10.0], [11.0], [12.0]])
    y = np.array([1.0, 2.0, 3.0, 7.0, 8.0, 9.0])
    tree = fit_tree(X, y, max_depth=1)
    members = {int(l): np.flatnonzero(tree.apply(X) == l) for l in np.unique(tree.apply(X))}

    def forest(k):
        f = QuantileForestRegressor(n_estimators=k)
        f.trees_, f.leaf_members_ = [tree] * k, [members] * k
        f.y_train_, f.n_features_in_ = y, 1
        return f

    probe = np.array([[0.5], [11.5]])
    np.testing.assert_allclose(forest(4).predict(probe, 0.5), forest(1).predict(probe, 0.5))
    np.testing.assert_allclose(forest(1).predict(probe, 0.5), [2.0, 8.0])


def test_conformal_rank():
    assert conformal_rank(19, 0.9) == 18
    assert conformal_rank(99, 0.95) == 95
    with pytest.raises(CalibrationError):
        conformal_rank(5, 0.9)


def test_conformal_correction_examples():
    scores = np.arange(19.0, 0.0, -1.0)  # 19 .. 1
    assert conformal_correction(scores, 0.9) == 18.0
    assert conformal_correction(np.full(30, 0.7), 0.9) == 0.7
    assert conformal_correction(-np.arange(1.0, 31.0), 0.9) <= 0


def test_cqr_constant_scores_widen_by_exactly_c(pipeline_splits):
    train, calib, test = pipeline_splits
    cqr = ConformalQuantileRegressor(0.9).fit(train.X, train.targets)
    lo, hi = cqr.base_interval(calib.X)
    # calibration targets placed exactly c above every base upper bound
    cqr.calibrate(calib.X, hi + 2.5)
    assert cqr.correction_ == pytest.approx(2.5)
    lo_t, hi_t = cqr.base_interval(test.X)
    new_lo, new_hi = cqr.predict_interval(test.X)
    np.testing.assert_allclose(new_lo, lo_t - 2.5)
    np.testing.assert_allclose(new_hi, hi_t + 2.5)


def test_cqr_too_few_calibration_rows(pipeline_splits):
    train, calib, _ = pipeline_splits
    cqr = ConformalQuantileRegressor(0.95).fit(train.X, train.targets)
    with pytest.raises(CalibrationError):
        cqr.calibrate(calib.X[:10], calib.targets[:10])


def test_cqr_unknown_base(pipeline_splits):
    train = pipeline_splits[0]
    with pytest.raises(ConfigError):
        ConformalQuantileRegressor(base="svm").fit(train.X, train.targets)


def test_repair_crossing_swaps_and_logs(caplog):
    with caplog.at_level(logging.WARNING):
        lo, hi, n = repair_crossing([1.0, 5.0], [2.0, 3.0], "demo")
    assert n == 1
    np.testing.assert_array_equal(lo, [1.0, 3.0])
    np.testing.assert_array_equal(hi, [2.0, 5.0])
    assert "demo" in caplog.text


def test_compare_methods_shape(pipeline_splits):
    train, calib, test = pipeline_splits
    configs = {
        "diffusion": dict(hidden_layers=(8,), time_embedding_dim=4, epochs=1, n_steps=20,
                          n_samples=20, cross_fit=0),
        "quantile_forest": dict(n_estimators=5),
        "linear_qr": dict(steps=200),
    }
    rows, intervals = compare_methods(train, calib, test, (0.9, 0.95), configs)
    assert len(rows) == 8
    assert [r.method for r in rows[:4]] == ["diffusion", "linear_qr", "quantile_forest", "cqr"]
    assert all(r.status == "ok" for r in rows)
    by = {(r.method, r.alpha): r for r in rows}
    for m in ("diffusion", "linear_qr", "quantile_forest", "cqr"):
        assert by[(m, 0.95)].avg_length >= by[(m, 0.9)].avg_length - 1e-9
    assert set(intervals) == set(by)


def test_compare_methods_reports_failures(pipeline_splits):
    train, calib, test = pipeline_splits
    configs = {"diffusion": dict(activation="bogus"), "quantile_forest": dict(n_estimators=3),
               "linear_qr": dict(steps=50)}
    rows, intervals = compare_methods(train, calib.subset(range(5)), test, 0.9, configs)
    assert len(rows) == 4
    status = {r.method: r.status for r in rows}
    assert status["diffusion"].startswith("failed")
    assert status["cqr"].startswith("failed")
    assert status["linear_qr"] == "ok"
    assert ("diffusion", 0.9) not in intervals
