"""Nonparametric regression with mixed gradient observations."""

from .estimator import FitConfig, FittedModel, MixedDataset, default_weights, fit
from .exact import exact_fit
from .features import build_feature_map
from .kernels import AnovaKernelSpec, KernelSpec

__all__ = [
    "AnovaKernelSpec",
    "FitConfig",
    "FittedModel",
    "KernelSpec",
    "MixedDataset",
    "build_feature_map",
    "default_weights",
    "exact_fit",
    "fit",
]
