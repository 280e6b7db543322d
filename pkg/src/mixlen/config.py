"""Run configuration: defaults < key-value file < command-line overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .exceptions import ConfigError

SEED_ENV = "MIXLEN_SEED"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # data preparation
    outlier_threshold: float = 0.20
    train_fraction: float = 0.7
    # noise schedule
    T: int = 1000
    beta1: float = 1e-5
    betaT: float = 2e-3
    # conditioner
    n_trees: int = 200
    max_depth: int = 3
    gbdt_learning_rate: float = 0.1
    min_samples_leaf: int = 5
    subsample: float = 0.9
    n_members: int = 5
    # noise network and optimiser
    hidden_layers: tuple = (128, 128, 128)
    activation: str = "softplus"
    time_embedding_dim: int = 32
    epochs: int = 500
    batch_size: int = 64
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_schedule: str = "constant"
    cross_fit: int = 5
    # sampling and evaluation
    alphas: tuple = (0.90, 0.95)
    n_samples: int = 200
    threads: int = 1

    def diffusion_params(self):
        return dict(
            n_steps=self.T, beta_start=self.beta1, beta_end=self.betaT,
            hidden_layers=tuple(self.hidden_layers), activation=self.activation,
            time_embedding_dim=self.time_embedding_dim, epochs=self.epochs,
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2, adam_eps=self.adam_eps,
            lr_schedule=self.lr_schedule, cross_fit=self.cross_fit, n_samples=self.n_samples, n_jobs=self.threads,
            random_state=self.seed,
        )

    def gbdt_params(self):
        return dict(
            n_trees=self.n_trees, max_depth=self.max_depth, learning_rate=self.gbdt_learning_rate,
            min_samples_leaf=self.min_samples_leaf, subsample=self.subsample,
            n_members=self.n_members, random_state=self.seed,
        )

    def to_dict(self):
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}


_FIELDS = {f.name: f for f in fields(RunConfig)}


def coerce(name, text):
    """Convert the string ``text`` to the type of config key ``name``."""
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    default = _FIELDS[name].default
    text = str(text).strip()
    try:
        if isinstance(default, tuple):
            item = type(default[0])
            return tuple(item(v) for v in text.replace(" ", "").split(",") if v)
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            value = float(text)
            if value != int(value):
                raise ValueError(text)
            return int(value)
        return type(default)(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        values[key] = coerce(key, val)
    return values


def load_config(path=None, overrides=None) -> RunConfig:
    """Build a :class:`RunConfig`; ``overrides`` win over the file.

    When neither the file nor the overrides set ``seed``, the ``MIXLEN_SEED``
    environment variable is used if present.
    """
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = coerce(key, val) if isinstance(val, str) else val
    if "seed" not in values and os.environ.get(SEED_ENV):
        values["seed"] = coerce("seed", os.environ[SEED_ENV])
    cfg = replace(RunConfig(), **values)
    if any(not 0 < a < 1 for a in cfg.alphas):
        raise ConfigError(f"alphas must lie in (0, 1): {cfg.alphas}")
    if cfg.n_samples < 20:
        raise ConfigError("n_samples must be >= 20 to form intervals")
    return cfg


def format_config(cfg: RunConfig):
    lines = []
    for k, v in cfg.to_dict().items():
        lines.append(f"{k} = {','.join(map(repr, v)) if isinstance(v, list) else v}")
    return "\n".join(lines) + "\n"
