from .model import ConditionalDiffusionRegressor, EpsilonNet, diffusion_loss, loss_and_grad
from .network import MLP, Adam
from .schedule import (
    DiffusionSchedule,
    forward_sample,
    make_schedule,
    posterior_coefficients,
    posterior_mean,
    time_embedding,
    y0_from_eps,
)

__all__ = [
    "Adam",
    "ConditionalDiffusionRegressor",
    "DiffusionSchedule",
    "EpsilonNet",
    "MLP",
    "diffusion_loss",
    "forward_sample",
    "loss_and_grad",
    "make_schedule",
    "posterior_coefficients",
    "posterior_mean",
    "time_embedding",
    "y0_from_eps",
]
