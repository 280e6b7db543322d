"""Interval baselines: linear quantile regression, quantile forest and CQR.

:func:`compare_methods` runs them next to the diffusion model on identical
splits and reports coverage and interval length per method.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import CalibrationError, ConfigError, TrainingError, UsageError
from .intervals import average_radius, coverage_rate, make_interval, underestimation_prob
from .pretrain import fit_tree

log = logging.getLogger(__name__)

METHODS = ("diffusion", "linear_qr", "quantile_forest", "cqr")
COMPARE_CSV_FIELDS = ("method", "alpha", "coverage", "avg_length", "avg_radius",
                      "underestimation_prob_upper", "status")


def pinball_loss(u, tau):
    """Quantile loss ``tau * u`` for ``u >= 0`` and ``(tau - 1) * u`` otherwise."""
    if not 0 < tau < 1:
        raise UsageError(f"tau must lie in (0, 1), got {tau!r}")
    u = np.asarray(u, dtype=float)
    return np.where(u >= 0, tau * u, (tau - 1) * u)


def repair_crossing(lower, upper, method=""):
    """Swap endpoints wherever ``lower > upper``; returns (lower, upper, n_swapped)."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    bad = lower > upper
    n_bad = int(bad.sum())
    if n_bad:
        log.warning("%s: %d crossing quantile pairs swapped", method or "quantiles", n_bad)
        lower, upper = np.where(bad, upper, lower), np.where(bad, lower, upper)
    return lower, upper, n_bad


class LinearQuantileRegressor(RegressorMixin, BaseEstimator):
    """Affine model for the ``quantile``-level conditional quantile.

    Fitted by full-batch subgradient descent on the mean pinball loss with
    step size ``step_size / sqrt(k)`` over standardized features and target.
    The iterate with the lowest training loss is kept.
    """

    def __init__(self, quantile=0.5, steps=2000, step_size=1.0, random_state=0):
        self.quantile = quantile
        self.steps = steps
        self.step_size = step_size
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        tau = self.quantile
        if not 0 < tau < 1:
            raise ConfigError(f"quantile must lie in (0, 1), got {tau!r}")
        self.x_mean_ = X.mean(axis=0)
        sd = X.std(axis=0)
        self.x_scale_ = np.where(sd > 0, sd, 1.0)
        self.y_mean_ = float(y.mean())
        self.y_scale_ = float(y.std()) or 1.0
        Z = np.column_stack([np.ones(len(X)), (X - self.x_mean_) / self.x_scale_])
        ys = (y - self.y_mean_) / self.y_scale_

        rng = np.random.default_rng(self.random_state)
        w = 1e-3 * rng.standard_normal(Z.shape[1])
        best_w, best_loss = w.copy(), math.inf
        n = len(ys)
        for k in range(1, self.steps + 1):
            u = ys - Z @ w
            loss = float(np.mean(pinball_loss(u, tau)))
            if not math.isfinite(loss):
                raise TrainingError(k, loss)
            if loss < best_loss:
                best_w, best_loss = w.copy(), loss
            # subgradient of the mean pinball loss w.r.t. w
            g = -(Z.T @ np.where(u >= 0, tau, tau - 1.0)) / n
            w = w - self.step_size / math.sqrt(k) * g
        self.coef_std_ = best_w
        self.train_loss_ = best_loss
        # back to original units
        self.coef_ = best_w[1:] * self.y_scale_ / self.x_scale_
        self.intercept_ = float(self.y_mean_ + self.y_scale_ * best_w[0] - self.coef_ @ self.x_mean_)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_ + self.intercept_


def weighted_quantile(values, weights, tau):
    """Linear-interpolation quantile of a weighted sample.

    Sorted values with positive weight sit at positions
    ``(S_k - w_k) / (S_m - w_m)`` where ``S_k`` is the cumulative weight; with
    equal weights these are the usual ``(k - 1) / (m - 1)`` plotting
    positions.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    keep = weights > 0
    v, w = values[keep], weights[keep]
    if v.size == 0:
        raise UsageError("no positive weights")
    order = np.lexsort((w, v))
    v, w = v[order], w[order]
    if v.size == 1:
        return float(v[0])
    cum = np.cumsum(w)
    pos = (cum - w) / (cum[-1] - w[-1])
    return float(np.interp(tau, pos, v))


class QuantileForestRegressor(RegressorMixin, BaseEstimator):
    """Random-forest conditional quantiles from leaf co-membership weights.

    Every tree is grown on a bootstrap resample with all features considered
    at each split. The weight of training row ``i`` at ``x`` is the tree
    average of (bootstrap copies of ``i`` in ``x``'s leaf) / (leaf size).
    """

    def __init__(self, n_estimators=100, min_samples_leaf=5, max_depth=None, quantile=0.5, random_state=0):
        self.n_estimators = n_estimators
        self.min_samples_leaf = min_samples_leaf
        self.max_depth = max_depth
        self.quantile = quantile
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        n = len(y)
        depth = self.max_depth if self.max_depth is not None else 10**9
        seeds = np.random.SeedSequence(self.random_state).spawn(self.n_estimators)
        self.trees_ = []
        self.leaf_members_ = []
        for s in seeds:
            idx = np.random.default_rng(s).integers(0, n, size=n)
            tree = fit_tree(X[idx], y[idx], depth, self.min_samples_leaf)
            leaves = tree.apply(X[idx])
            members = {int(leaf): idx[leaves == leaf] for leaf in np.unique(leaves)}
            self.trees_.append(tree)
            self.leaf_members_.append(members)
        self.y_train_ = y
        self.n_features_in_ = X.shape[1]
        return self

    def weights(self, X):
        """Matrix of shape (n_rows, n_train) whose rows sum to one."""
        check_is_fitted(self, "trees_")
        X = check_array(X)
        W = np.zeros((len(X), len(self.y_train_)))
        for tree, members in zip(self.trees_, self.leaf_members_):
            for r, leaf in enumerate(tree.apply(X)):
                m = members[int(leaf)]
                np.add.at(W[r], m, 1.0 / len(m))
        return W / len(self.trees_)

    def predict_quantiles(self, X, quantiles):
        W = self.weights(X)
        return np.array([[weighted_quantile(self.y_train_, w, q) for q in quantiles] for w in W])

    def predict(self, X, quantile=None):
        q = self.quantile if quantile is None else quantile
        return self.predict_quantiles(X, [q])[:, 0]


def conformal_rank(n_cal, alpha):
    k = math.ceil((n_cal + 1) * alpha - 1e-9)
    if k > n_cal:
        raise CalibrationError(
            f"{n_cal} calibration rows are too few for level {alpha}; need at least "
            f"{math.ceil(alpha / (1 - alpha) - 1e-9)}"
        )
    return k


def _make_base(base, quantile, params, random_state):
    params = dict(params or {})
    if base == "linear":
        return LinearQuantileRegressor(quantile=quantile, random_state=random_state, **params)
    if base == "forest":
        return QuantileForestRegressor(quantile=quantile, random_state=random_state, **params)
    raise ConfigError(f"unknown CQR base {base!r}; choose 'linear' or 'forest'")


class ConformalQuantileRegressor(BaseEstimator):
    """Split-conformal widening of a pair of quantile regressors.

    ``fit`` trains the lower and upper base models, ``calibrate`` computes the
    correction ``Q`` on held-out rows, and :meth:`predict_interval` returns
    ``[q_lo(x) - Q, q_hi(x) + Q]``.
    """

    def __init__(self, alpha=0.9, base="linear", base_params=None, random_state=0):
        self.alpha = alpha
        self.base = base
        self.base_params = base_params
        self.random_state = random_state

    def fit(self, X, y):
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        X, y = check_X_y(X, y, y_numeric=True)
        lo, hi = (1 - self.alpha) / 2, (1 + self.alpha) / 2
        if self.base == "forest":
            # one forest serves both levels
            forest = _make_base("forest", 0.5, self.base_params, self.random_state).fit(X, y)
            self.lower_, self.upper_ = forest, forest
            self._levels = (lo, hi)
        else:
            self.lower_ = _make_base(self.base, lo, self.base_params, self.random_state).fit(X, y)
            self.upper_ = _make_base(self.base, hi, self.base_params, self.random_state).fit(X, y)
            self._levels = None
        return self

    def base_interval(self, X):
        check_is_fitted(self, "lower_")
        if self._levels is not None:
            q = self.lower_.predict_quantiles(X, self._levels)
            lo, hi = q[:, 0], q[:, 1]
        else:
            lo, hi = self.lower_.predict(X), self.upper_.predict(X)
        lo, hi, _ = repair_crossing(lo, hi, "cqr base")
        return lo, hi

    def conformity_scores(self, X, y):
        lo, hi = self.base_interval(X)
        y = np.asarray(y, dtype=float)
        return np.maximum(lo - y, y - hi)

    def calibrate(self, X, y):
        scores = self.conformity_scores(X, y)
        self.correction_ = conformal_correction(scores, self.alpha)
        return self

    def predict_interval(self, X):
        check_is_fitted(self, "correction_")
        lo, hi = self.base_interval(X)
        return lo - self.correction_, hi + self.correction_


def conformal_correction(scores, alpha):
    """The ``ceil((n + 1) alpha)``-th smallest conformity score."""
    scores = np.sort(np.asarray(scores, dtype=float))
    k = conformal_rank(len(scores), alpha)
    return float(scores[k - 1])


def fit_cqr(X_train, y_train, X_cal, y_cal, alpha=0.9, base="linear", base_params=None, random_state=0):
    return ConformalQuantileRegressor(alpha, base, base_params, random_state).fit(X_train, y_train).calibrate(X_cal, y_cal)


@dataclass
class ComparisonRow:
    method: str
    alpha: float
    coverage: float = math.nan
    avg_length: float = math.nan
    avg_radius: float = math.nan
    underestimation_prob_upper: float = math.nan
    status: str = "ok"

    def as_dict(self):
        return {f: getattr(self, f) for f in COMPARE_CSV_FIELDS}


def _score(method, alpha, point, lower, upper, truth):
    lower, upper, _ = repair_crossing(lower, upper, method)
    rad = average_radius((lower, upper))
    row = ComparisonRow(method, float(alpha), coverage_rate((lower, upper), truth), 2 * rad, rad,
                        underestimation_prob(upper, truth))
    return row, {"point": np.asarray(point, dtype=float), "lower": lower, "upper": upper, "truth": truth}


def compare_methods(train, calib, test, alpha=0.9, configs=None):
    """Score every interval method on the same (train, calib, test) datasets.

    All methods model the residual ``C_AC - C_AP`` from the four pipeline
    features and add ``C_AP`` back, so intervals are in meters of mixed oil.
    ``alpha`` may be a single level or a sequence of levels. A method that
    raises is reported with ``status = "failed: ..."`` rather than dropped.

    Returns
    -------
    rows : list of ComparisonRow
        ``len(METHODS)`` rows per level, levels outer.
    intervals : dict
        ``(method, alpha) -> {"point", "lower", "upper", "truth"}`` arrays for
        methods that succeeded.
    """
    from .diffusion import ConditionalDiffusionRegressor

    alphas = [float(alpha)] if np.isscalar(alpha) else [float(a) for a in alpha]
    configs = dict(configs or {})
    seed = configs.get("seed", 0)
    Xtr, rtr = train.X, train.targets
    Xca, rca = calib.X, calib.targets
    Xte, cap, truth = test.X, test.c_ap, test.c_ac

    def run_diffusion():
        model = configs.get("diffusion_model")
        if model is None:
            model = ConditionalDiffusionRegressor(random_state=seed, **configs.get("diffusion", {})).fit(Xtr, rtr)
        samples = model.sample(Xte) + cap[:, None]
        out = {}
        for a in alphas:
            est = [make_interval(s, a) for s in samples]
            out[a] = (np.array([e.point for e in est]), np.array([e.lower for e in est]),
                      np.array([e.upper for e in est]))
        return out

    def run_linear():
        params = configs.get("linear_qr", {})
        med = LinearQuantileRegressor(0.5, random_state=seed, **params).fit(Xtr, rtr).predict(Xte)
        out = {}
        for a in alphas:
            lo = LinearQuantileRegressor((1 - a) / 2, random_state=seed, **params).fit(Xtr, rtr).predict(Xte)
            hi = LinearQuantileRegressor((1 + a) / 2, random_state=seed, **params).fit(Xtr, rtr).predict(Xte)
            out[a] = (med + cap, lo + cap, hi + cap)
        return out

    def run_forest():
        forest = QuantileForestRegressor(random_state=seed, **configs.get("quantile_forest", {})).fit(Xtr, rtr)
        out = {}
        for a in alphas:
            q = forest.predict_quantiles(Xte, [0.5, (1 - a) / 2, (1 + a) / 2])
            out[a] = (q[:, 0] + cap, q[:, 1] + cap, q[:, 2] + cap)
        return out

    def run_cqr():
        cfg = configs.get("cqr", {})
        out = {}
        for a in alphas:
            model = fit_cqr(Xtr, rtr, Xca, rca, a, cfg.get("base", "linear"), cfg.get("base_params"), seed)
            lo, hi = model.predict_interval(Xte)
            out[a] = (0.5 * (lo + hi) + cap, lo + cap, hi + cap)
        return out

    runners = {"diffusion": run_diffusion, "linear_qr": run_linear,
               "quantile_forest": run_forest, "cqr": run_cqr}
    results = {}
    for method in METHODS:
        try:
            results[method] = runners[method]()
        except Exception as exc:  # reported per method, never silently dropped
            log.error("method %s failed: %s", method, exc)
            results[method] = exc

    rows, intervals = [], {}
    for a in alphas:
        for method in METHODS:
            res = results[method]
            if isinstance(res, Exception):
                rows.append(ComparisonRow(method, a, status=f"failed: {res}"))
                continue
            row, iv = _score(method, a, *res[a], truth)
            rows.append(row)
            intervals[(method, a)] = iv
    return rows, intervals
