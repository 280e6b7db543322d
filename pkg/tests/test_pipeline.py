import numpy as np
import pytest
from sklearn.base import clone

from mixlen import (
    ConditionalDiffusionRegressor,
    ConformalQuantileRegressor,
    GradientBoostingEnsemble,
    LinearQuantileRegressor,
    MixedOilLengthEstimator,
    PipelineFeaturizer,
    QuantileForestRegressor,
    gen_synthetic_pipeline,
)

TINY = ConditionalDiffusionRegressor(
    conditioner=GradientBoostingEnsemble(n_trees=10, n_members=1), hidden_layers=(8,),
    time_embedding_dim=4, epochs=2, n_steps=30, cross_fit=0,
)


@pytest.fixture(scope="module")
def fitted():
    ds = gen_synthetic_pipeline(150, seed=5)
    return ds, MixedOilLengthEstimator(TINY, n_samples=25).fit(ds.raw, ds.c_ac)


def test_samples_are_residuals_plus_formula(fitted):
    ds, est = fitted
    raw = ds.raw[:6]
    feats = PipelineFeaturizer().transform(raw)
    residual = est.regressor_.sample(feats, 25, 0)
    np.testing.assert_allclose(est.sample(raw), residual + ds.c_ap[:6, None], rtol=1e-12)


def test_predict_interval_contains_point_order(fitted):
    ds, est = fitted
    point, lo, hi = est.predict_interval(ds.raw[:10], alpha=0.9)
    assert np.all(lo <= hi)
    np.testing.assert_allclose(point, est.predict(ds.raw[:10]))


def test_from_fitted_wraps_residual_model(fitted):
    ds, est = fitted
    wrapped = MixedOilLengthEstimator.from_fitted(est.regressor_, n_samples=25)
    np.testing.assert_array_equal(wrapped.sample(ds.raw[:3]), est.sample(ds.raw[:3]))


@pytest.mark.parametrize("est", [
    GradientBoostingEnsemble(n_trees=7), LinearQuantileRegressor(0.2), QuantileForestRegressor(n_estimators=3),
    ConformalQuantileRegressor(0.8), TINY, MixedOilLengthEstimator(TINY), PipelineFeaturizer(),
])
def test_estimators_clone_with_params(est):
    copy = clone(est)
    assert type(copy) is type(est)
    assert copy.get_params(deep=False).keys() == est.get_params(deep=False).keys()


def test_featurizer_rejects_wrong_width():
    with pytest.raises(ValueError):
        PipelineFeaturizer().fit_transform(np.ones((2, 3)))
