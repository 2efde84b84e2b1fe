"""Autoregressive transformation models with Bernstein-polynomial transforms."""

from .bernstein import SupportBounds, basis, basis_extrapolated
from .core import ATModel, ModelSpec, ParamVector, at_to_ar, init_params, transform
from .forecast import ForecastDistribution, forecast_paths, log_score, rollout_log_score
from .likelihood import nll, nll_grad
from .trainer import TrainConfig, fit
from .uq import information_estimates, parametric_bootstrap

__version__ = "0.1.0"
