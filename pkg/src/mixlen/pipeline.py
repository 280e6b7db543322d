"""Mixed-oil length intervals from raw pipeline conditions.

:class:`MixedOilLengthEstimator` featurizes raw ``(L, d, Re, C0)`` rows,
models the residual ``C_AC - C_AP`` with a sampling regressor and adds
``C_AP`` back to every pseudo-sample.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataio import PipelineFeaturizer
from .diffusion import ConditionalDiffusionRegressor
from .intervals import make_interval


class MixedOilLengthEstimator(RegressorMixin, BaseEstimator):
    """Interval estimator for mixed-oil length.

    Parameters
    ----------
    regressor : estimator with ``fit`` and ``sample``, optional
        Model of the residual given the features ``(C0, C_AP, d', Re')``.
        Defaults to :class:`ConditionalDiffusionRegressor`.
    n_samples : int, default=200
    random_state : int, default=0

    Examples
    --------
    >>> est = MixedOilLengthEstimator().fit(raw, c_ac)        # doctest: +SKIP
    >>> point, lower, upper = est.predict_interval(raw_test, alpha=0.95)  # doctest: +SKIP
    """

    def __init__(self, regressor=None, n_samples=200, random_state=0):
        self.regressor = regressor
        self.n_samples = n_samples
        self.random_state = random_state

    def _features(self, X):
        feats = self.featurizer_.transform(X)
        return feats, feats[:, 1]

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.featurizer_ = PipelineFeaturizer().fit(X)
        feats, c_ap = self._features(X)
        reg = self.regressor
        reg = ConditionalDiffusionRegressor(random_state=self.random_state) if reg is None else clone(reg)
        self.regressor_ = reg.fit(feats, y - c_ap)
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_fitted(cls, regressor, **params):
        """Wrap a residual model that was already fitted on featurized data."""
        est = cls(regressor=regressor, **params)
        est.featurizer_ = PipelineFeaturizer().fit(np.ones((1, 4)))
        est.regressor_ = regressor
        est.n_features_in_ = 4
        return est

    def sample(self, X, n_samples=None, random_state=None, **kwargs):
        """Pseudo-samples of the mixed-oil length, shape (n_rows, n_samples)."""
        check_is_fitted(self, "regressor_")
        X = check_array(X)
        feats, c_ap = self._features(X)
        n = self.n_samples if n_samples is None else n_samples
        seed = self.random_state if random_state is None else random_state
        return self.regressor_.sample(feats, n, seed, **kwargs) + c_ap[:, None]

    def predict(self, X):
        return self.sample(X).mean(axis=1)

    def predict_interval(self, X, alpha=0.9):
        est = [make_interval(s, alpha) for s in self.sample(X)]
        return (np.array([e.point for e in est]), np.array([e.lower for e in est]),
                np.array([e.upper for e in est]))
