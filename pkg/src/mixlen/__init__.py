"""Interval estimation of pipeline mixed-oil length with a conditional diffusion model."""

from .baselines import (
    ConformalQuantileRegressor,
    LinearQuantileRegressor,
    QuantileForestRegressor,
    compare_methods,
    pinball_loss,
)
from .dataio import (
    Dataset,
    FeatureVector,
    PipelineFeaturizer,
    PipelineRecord,
    featurize,
    filter_outliers,
    gen_synthetic_pipeline,
    gen_toy,
    load_csv,
    split,
    write_csv,
)
from .diffusion import ConditionalDiffusionRegressor, make_schedule
from .intervals import EvaluationReport, IntervalEstimate, make_interval
from .mechanistic import PipelineGeometry, austin_palfrey, critical_reynolds, equivalent_length
from .pipeline import MixedOilLengthEstimator
from .pretrain import GradientBoostingEnsemble

__version__ = "0.1.0"
