"""Noise schedule and the closed-form pieces of the forward/reverse chains.

Arrays in :class:`DiffusionSchedule` have length ``T + 1`` and are indexed by
the timestep itself. Index 0 holds the conventions ``alpha_bar[0] = 1`` and
``beta[0] = 0`` so that step ``t = 1`` needs no special casing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigError


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    T: int
    beta1: float
    betaT: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_tilde: np.ndarray
    one_minus_alpha_bar: np.ndarray

    def check_t(self, t):
        t_arr = np.asarray(t)
        if np.any(t_arr < 1) or np.any(t_arr > self.T):
            raise IndexError(f"timestep out of range 1..{self.T}: {t!r}")


def make_schedule(T=1000, beta1=1e-5, betaT=2e-3) -> DiffusionSchedule:
    """Linear schedule ``beta_t = beta1 + (t - 1) * (betaT - beta1) / (T - 1)``."""
    if not (isinstance(T, (int, np.integer)) and T >= 2):
        raise ConfigError(f"T must be an integer >= 2, got {T!r}")
    if not 0 < beta1 <= betaT < 1:
        raise ConfigError(f"need 0 < beta1 <= betaT < 1, got beta1={beta1!r}, betaT={betaT!r}")
    T = int(T)
    beta = np.zeros(T + 1)
    steps = np.arange(T, dtype=float)
    beta[1:] = beta1 + steps * (betaT - beta1) / (T - 1)
    alpha = 1.0 - beta
    # log-space cumulative product; expm1 keeps 1 - alpha_bar accurate near t = 0
    log_ab = np.cumsum(np.log1p(-beta))
    alpha_bar = np.exp(log_ab)
    omab = -np.expm1(log_ab)
    beta_tilde = np.zeros(T + 1)
    beta_tilde[1:] = omab[:-1] / omab[1:] * beta[1:]
    for arr in (beta, alpha, alpha_bar, beta_tilde, omab):
        arr.setflags(write=False)
    return DiffusionSchedule(T, float(beta1), float(betaT), beta, alpha, alpha_bar, beta_tilde, omab)


def forward_sample(y0, fx, t, sched: DiffusionSchedule, eps=None, rng=None):
    """Corrupt ``y0`` to timestep ``t`` in one shot.

    ``y_t = sqrt(abar_t) y0 + (1 - sqrt(abar_t)) fx + sqrt(1 - abar_t) eps``.
    ``eps`` is drawn from ``rng`` when not supplied.
    """
    sched.check_t(t)
    return _forward(y0, fx, sched.alpha_bar[np.asarray(t)], eps, rng)


def _forward(y0, fx, alpha_bar, eps=None, rng=None):
    y0 = np.asarray(y0, dtype=float)
    if eps is None:
        rng = np.random.default_rng(rng)
        eps = rng.standard_normal(np.broadcast(y0, np.asarray(fx), alpha_bar).shape)
    s = np.sqrt(alpha_bar)
    return s * y0 + (1.0 - s) * fx + np.sqrt(1.0 - alpha_bar) * eps


def y0_from_eps(y_t, fx, eps_hat, alpha_bar):
    """Invert the one-shot forward corruption given a noise estimate."""
    s = np.sqrt(alpha_bar)
    return (y_t - (1.0 - s) * fx - np.sqrt(1.0 - alpha_bar) * eps_hat) / s


def posterior_coefficients(t, sched: DiffusionSchedule):
    """Weights of ``(y0_hat, y_t, fx)`` in the reverse-step mean at ``t``."""
    sched.check_t(t)
    ab_t = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t - 1]
    omab_prev = sched.one_minus_alpha_bar[t - 1]
    beta_t = sched.beta[t]
    sa_t = np.sqrt(sched.alpha[t])
    denom = sched.one_minus_alpha_bar[t]
    c_y0 = beta_t * np.sqrt(ab_prev) / denom
    c_yt = omab_prev * sa_t / denom
    # 1 + (sqrt(ab_t) - 1)(sqrt(a_t) + sqrt(ab_prev)) / (1 - ab_t), factored to
    # avoid cancellation when t is small
    c_fx = (beta_t / (1.0 + sa_t)) * (omab_prev / (1.0 + np.sqrt(ab_prev))) / (1.0 + np.sqrt(ab_t))
    return c_y0, c_yt, c_fx


def posterior_mean(y0_hat, y_t, fx, t, sched: DiffusionSchedule):
    c_y0, c_yt, c_fx = posterior_coefficients(t, sched)
    return c_y0 * y0_hat + c_yt * y_t + c_fx * fx


def time_embedding(t, T, dim=32):
    """Sinusoidal embedding of ``t / T``.

    Frequencies are geometric from 1 to ``T`` so the slowest component is
    monotone over the whole range and the fastest resolves single steps.
    Returns an array of shape ``(len(t), dim)``.
    """
    if dim % 2:
        raise ConfigError(f"time embedding dimension must be even, got {dim}")
    s = np.atleast_1d(np.asarray(t, dtype=float)) / T
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, math.log(T), half)) if half > 1 else np.ones(1)
    ang = s[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
