"""Quantile intervals from pseudo-samples and the evaluation metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .exceptions import DomainError, UsageError

MIN_SAMPLES = 20
INTERVAL_CSV_FIELDS = ("index", "point", "lower", "upper", "truth", "covered")


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    lower: float
    upper: float
    level: float
    n_samples: int

    @property
    def radius(self):
        return 0.5 * (self.upper - self.lower)


@dataclass(frozen=True)
class EvaluationReport:
    level: float
    coverage: float
    average_radius: float
    average_length: float
    underestimation_prob: float
    underestimation_prob_upper: float
    rmse: float
    r2: float
    mae: float
    n: int

    def to_dict(self):
        return asdict(self)


def empirical_quantile(samples, p):
    """Linearly interpolated order statistic at rank ``(n - 1) p + 1``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("samples", [], "must be non-empty")
    if not 0 <= p <= 1:
        raise DomainError("p", p, "must lie in [0, 1]")
    return float(np.quantile(x, p, method="linear"))


def make_interval(samples, alpha) -> IntervalEstimate:
    """Central interval at level ``alpha`` plus the sample mean as point estimate."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_SAMPLES:
        raise UsageError(f"need at least {MIN_SAMPLES} pseudo-samples for an interval, got {x.size}")
    if not 0 < alpha < 1:
        raise UsageError(f"alpha must lie in (0, 1), got {alpha!r}")
    lo, hi = np.quantile(x, [(1 - alpha) / 2, (1 + alpha) / 2], method="linear")
    return IntervalEstimate(float(np.mean(x)), float(lo), float(hi), float(alpha), int(x.size))


def _bounds(intervals):
    if isinstance(intervals, tuple) and len(intervals) == 2 and not isinstance(intervals[0], IntervalEstimate):
        lower, upper = intervals
        return np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    arr = [(iv.lower, iv.upper) if isinstance(iv, IntervalEstimate) else tuple(iv) for iv in intervals]
    arr = np.asarray(arr, dtype=float).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def _aligned(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise UsageError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise UsageError("need at least one value")
    return a, b


def coverage_rate(intervals, truths):
    """Fraction of truths inside their closed interval.

    ``intervals`` is a sequence of :class:`IntervalEstimate`, of
    ``(lower, upper)`` pairs, or a ``(lowers, uppers)`` tuple of arrays.
    """
    lower, upper = _bounds(intervals)
    lower, truths = _aligned(lower, truths)
    return float(np.mean((lower <= truths) & (truths <= upper)))


def average_radius(intervals):
    lower, upper = _bounds(intervals)
    if lower.size == 0:
        raise UsageError("need at least one interval")
    return float(np.mean((upper - lower) / 2))


def underestimation_prob(estimates, truths):
    """Fraction of cases where the estimate is strictly below the truth."""
    est, truths = _aligned(estimates, truths)
    return float(np.mean(est < truths))


def rmse(predictions, truths):
    p, y = _aligned(predictions, truths)
    return math.sqrt(float(np.mean((y - p) ** 2)))


def mae(predictions, truths):
    p, y = _aligned(predictions, truths)
    return float(np.mean(np.abs(y - p)))


def r2(predictions, truths):
    p, y = _aligned(predictions, truths)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if y.size < 2 or ss_tot == 0:
        raise DomainError("truths", "constant", "R^2 is undefined for zero-variance truths")
    return 1.0 - float(np.sum((y - p) ** 2)) / ss_tot


def evaluate(point, lower, upper, truths, level) -> EvaluationReport:
    point, truths = _aligned(point, truths)
    lower, upper = _aligned(lower, upper)
    rad = average_radius((lower, upper))
    return EvaluationReport(
        level=float(level),
        coverage=coverage_rate((lower, upper), truths),
        average_radius=rad,
        average_length=2 * rad,
        underestimation_prob=underestimation_prob(point, truths),
        underestimation_prob_upper=underestimation_prob(upper, truths),
        rmse=rmse(point, truths),
        r2=r2(point, truths),
        mae=mae(point, truths),
        n=int(truths.size),
    )


def interval_rows(point, lower, upper, truths, level=None):
    """Per-sample rows matching :data:`INTERVAL_CSV_FIELDS` (plus ``alpha``)."""
    rows = []
    for i, (p, lo, hi, y) in enumerate(zip(point, lower, upper, truths)):
        row = {"index": i, "point": float(p), "lower": float(lo), "upper": float(hi),
               "truth": float(y), "covered": int(lo <= y <= hi)}
        if level is not None:
            row["alpha"] = float(level)
        rows.append(row)
    return rows


def write_interval_csv(rows, path):
    rows = list(rows)
    fields = list(INTERVAL_CSV_FIELDS) + (["alpha"] if rows and "alpha" in rows[0] else [])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_report_json(reports, path, **extra):
    doc = {**extra, "reports": [r.to_dict() for r in reports]}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
