"""Additive mixed models for mortality forecasting."""

from ._mortgam import (
    Model,
    MortgamError,
    Panel,
    acf,
    covariates,
    default_config,
    fit,
    lee_carter,
    mse,
    qq,
    run,
    trim_refit,
)

__all__ = [
    "Model",
    "MortgamError",
    "Panel",
    "acf",
    "covariates",
    "default_config",
    "fit",
    "lee_carter",
    "mse",
    "qq",
    "run",
    "trim_refit",
]
