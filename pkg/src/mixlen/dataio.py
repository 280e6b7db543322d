"""Pipeline records, CSV interchange, feature engineering and synthetic data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .exceptions import DomainError, LoadError, SplitError, UsageError
from .mechanistic import PipelineGeometry, austin_palfrey

CSV_FIELDS = ("L", "d", "Re", "C0", "C_AC")
FEATURE_NAMES = ("C0", "C_AP", "d_prime", "Re_prime")

# (median log-ratio, log-ratio std) of C_AC / C_AP per generator profile
PROFILES = {"train": (0.03, 0.06), "test": (0.05, 0.07)}
DIAMETERS = (0.2, 0.25, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class FeatureVector:
    c0: float
    c_ap: float
    d_prime: float
    re_prime: float

    def as_array(self):
        return np.array([self.c0, self.c_ap, self.d_prime, self.re_prime])


@dataclass(frozen=True)
class PipelineRecord:
    geometry: PipelineGeometry
    c_ac: float
    pipeline_id: int = 0

    def __post_init__(self):
        c_ac = float(self.c_ac)
        if not math.isfinite(c_ac) or c_ac <= 0:
            raise DomainError("C_AC", c_ac)
        object.__setattr__(self, "c_ac", c_ac)


def featurize(geom: PipelineGeometry) -> FeatureVector:
    """Model inputs ``(C0, C_AP, d**0.5, Re**-0.1)`` for one geometry."""
    c_ap, _ = austin_palfrey(geom)
    return FeatureVector(geom.C0, c_ap, math.sqrt(geom.d), geom.Re**-0.1)


@dataclass(frozen=True)
class Dataset:
    """Index-aligned records, features and residual targets ``C_AC - C_AP``.

    Build with :meth:`from_records`; the aligned arrays are derived once.
    """

    records: tuple
    features: tuple = field(repr=False)
    targets: np.ndarray = field(repr=False)

    @classmethod
    def from_records(cls, records):
        records = tuple(records)
        feats = tuple(featurize(r.geometry) for r in records)
        targets = np.array([r.c_ac - f.c_ap for r, f in zip(records, feats)], dtype=float)
        targets.setflags(write=False)
        return cls(records, feats, targets)

    def __len__(self):
        return len(self.records)

    def subset(self, indices):
        idx = [int(i) for i in indices]
        targets = self.targets[idx].copy()
        targets.setflags(write=False)
        return Dataset(
            tuple(self.records[i] for i in idx),
            tuple(self.features[i] for i in idx),
            targets,
        )

    @property
    def X(self):
        """Feature matrix of shape (n, 4)."""
        if not self.records:
            return np.empty((0, len(FEATURE_NAMES)))
        return np.array([f.as_array() for f in self.features])

    @property
    def raw(self):
        """Raw geometry matrix with columns ``L, d, Re, C0``."""
        if not self.records:
            return np.empty((0, 4))
        return np.array([[r.geometry.L, r.geometry.d, r.geometry.Re, r.geometry.C0] for r in self.records])

    @property
    def c_ap(self):
        return np.array([f.c_ap for f in self.features], dtype=float)

    @property
    def c_ac(self):
        return np.array([r.c_ac for r in self.records], dtype=float)

    @property
    def pipeline_ids(self):
        return np.array([r.pipeline_id for r in self.records], dtype=int)


def _parse_float(text, name, line):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise LoadError(f"field {name!r} is not a number: {text!r}", line=line, field=name) from None
    if not math.isfinite(value):
        raise LoadError(f"field {name!r} is not finite", line=line, field=name)
    return value


def load_csv(path) -> Dataset:
    """Read a ``L,d,Re,C0,C_AC[,pipeline_id]`` file into a :class:`Dataset`.

    Errors are reported with the 1-based line number of the offending row
    (the header is line 1).
    """
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"no such file: {path}")
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise LoadError("missing header row", line=1)
        header = [h.strip() for h in header]
        missing = [c for c in CSV_FIELDS if c not in header]
        extra = [c for c in header if c not in CSV_FIELDS and c != "pipeline_id"]
        if missing or extra:
            raise LoadError(f"bad header {header}; expected {','.join(CSV_FIELDS)}[,pipeline_id]", line=1)
        col = {name: header.index(name) for name in header}
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise LoadError(f"expected {len(header)} fields, got {len(row)}", line=line)
            vals = {name: _parse_float(row[col[name]], name, line) for name in CSV_FIELDS}
            for name in ("L", "d", "Re", "C_AC"):
                if vals[name] <= 0:
                    raise LoadError(f"field {name!r} must be positive, got {vals[name]!r}", line=line, field=name)
            if vals["C0"] < 0:
                raise LoadError(f"field 'C0' must be >= 0, got {vals['C0']!r}", line=line, field="C0")
            pid = 0
            if "pipeline_id" in col:
                text = row[col["pipeline_id"]].strip()
                try:
                    pid = int(text)
                except ValueError:
                    raise LoadError(f"field 'pipeline_id' is not an integer: {text!r}", line=line, field="pipeline_id") from None
            geom = PipelineGeometry(vals["L"], vals["d"], vals["Re"], vals["C0"])
            records.append(PipelineRecord(geom, vals["C_AC"], pid))
    return Dataset.from_records(records)


def write_csv(ds: Dataset, path, *, pipeline_id=True):
    """Write ``ds`` so that :func:`load_csv` reproduces it exactly."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS + (("pipeline_id",) if pipeline_id else ()))
        for r in ds.records:
            g = r.geometry
            row = [repr(g.L), repr(g.d), repr(g.Re), repr(g.C0), repr(r.c_ac)]
            if pipeline_id:
                row.append(str(r.pipeline_id))
            writer.writerow(row)


def filter_outliers(ds: Dataset, threshold=0.20):
    """Split ``ds`` into (kept, removed) by relative error ``|C_AC - C_AP| / C_AC``.

    A record is removed only when its relative error strictly exceeds
    ``threshold``.
    """
    if not 0 < threshold <= 1:
        raise UsageError(f"threshold must lie in (0, 1], got {threshold!r}")
    rel = np.abs(ds.targets) / ds.c_ac if len(ds) else np.empty(0)
    bad = rel > threshold
    return ds.subset(np.flatnonzero(~bad)), ds.subset(np.flatnonzero(bad))


def train_size(n, train_fraction):
    return int(math.floor(n * train_fraction + 0.5))


def split(ds: Dataset, train_fraction=0.7, seed=0):
    """Random (train, valid) partition; both parts keep the original order."""
    if not 0 < train_fraction < 1:
        raise SplitError(f"train_fraction must lie in (0, 1), got {train_fraction!r}")
    n = len(ds)
    if n < 2:
        raise SplitError(f"need at least 2 records to split, got {n}")
    k = train_size(n, train_fraction)
    perm = np.random.default_rng(seed).permutation(n)
    return ds.subset(np.sort(perm[:k])), ds.subset(np.sort(perm[k:]))


def gen_toy(n, seed=0, *, noise=True):
    """Draw ``X ~ U(0, 10)`` and ``Y = X * exp(eps)`` with ``eps ~ N(0, 0.25)``.

    Returns
    -------
    x, y : ndarray of shape (n,)
    """
    if n <= 0:
        raise UsageError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 10.0, size=n)
    low = x < 1e-6
    while low.any():
        x[low] = rng.uniform(0.0, 10.0, size=int(low.sum()))
        low = x < 1e-6
    eps = rng.normal(0.0, 0.5, size=n) if noise else np.zeros(n)
    # x * exp(eps) equals exp(log(x) + eps) and keeps y == x exactly when eps == 0
    return x, x * np.exp(eps)


def gen_synthetic_pipeline(n, seed=0, shift="train", *, noise=True) -> Dataset:
    """Synthetic pipeline records with ``C_AC = C_AP * exp(eta)``.

    ``shift`` picks the lognormal profile for ``eta``: ``"train"`` uses
    N(0.03, 0.06^2), ``"test"`` N(0.05, 0.07^2). Training records are tagged
    with pipeline ids 1 and 2, test records with 3.
    """
    if n <= 0:
        raise UsageError(f"n must be positive, got {n}")
    if shift not in PROFILES:
        raise UsageError(f"unknown profile {shift!r}; choose from {sorted(PROFILES)}")
    mu, sigma = PROFILES[shift]
    rng = np.random.default_rng(seed)
    L = rng.uniform(5e4, 4e5, size=n)
    d = rng.choice(DIAMETERS, size=n)
    Re = rng.uniform(1.124e5, 8.819e5, size=n)
    C0 = rng.uniform(0.0, 500.0, size=n)
    eta = rng.normal(mu, sigma, size=n) if noise else np.zeros(n)
    if shift == "train":
        pid = rng.integers(1, 3, size=n)
    else:
        pid = np.full(n, 3)
    records = []
    for i in range(n):
        geom = PipelineGeometry(L[i], d[i], Re[i], C0[i])
        c_ap, _ = austin_palfrey(geom)
        records.append(PipelineRecord(geom, c_ap * math.exp(eta[i]), int(pid[i])))
    return Dataset.from_records(records)


class PipelineFeaturizer(TransformerMixin, BaseEstimator):
    """Map raw ``(L, d, Re, C0)`` columns to ``(C0, C_AP, d', Re')``.

    Stateless; ``fit`` only records the input width.
    """

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[1] != 4:
            raise ValueError(f"expected 4 columns (L, d, Re, C0), got {X.shape[1]}")
        self.n_features_in_ = 4
        return self

    def transform(self, X):
        X = check_array(X)
        if X.shape[1] != 4:
            raise ValueError(f"expected 4 columns (L, d, Re, C0), got {X.shape[1]}")
        out = np.empty_like(X, dtype=float)
        for i, (L, d, Re, C0) in enumerate(X):
            out[i] = featurize(PipelineGeometry(L, d, Re, C0)).as_array()
        return out

    def get_feature_names_out(self, input_features=None):
        return np.array(FEATURE_NAMES, dtype=object)
