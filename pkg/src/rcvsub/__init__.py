"""Refitted cross-validation subsampling estimator for large-n regression.

Point estimates, standard errors and confidence intervals for all ``p``
coefficients of linear, logistic and Cox models from two small subsamples.
"""

from .dataset import CsvSchema, Dataset, DatasetView, FoldSplit, load_csv, split_halves, view, write_csv
from .errors import DataError, NumericalError, RcvError
from .estimator import (FitResult, SweepResult, fit_full, partial_regression_sweep, pilot_fit,
                        sandwich_variance, weighted_fit)
from .models import ModelSpec, WeightedCriterion, row_gradient_norm, row_loss, weighted_aggregate
from .pipeline import CoefEstimate, RcvConfig, RcvResult, confidence_interval, rcv_estimate
from .sampler import SamplerConfig, Subsample, compute_probabilities, sample_with_replacement
from .scad import ActiveSet, ScadConfig, fit_full_scad, fit_scad, scad_derivative, scad_penalty

__version__ = "0.1.0"

__all__ = [
    "ActiveSet", "CoefEstimate", "CsvSchema", "DataError", "Dataset", "DatasetView", "FitResult",
    "FoldSplit", "ModelSpec", "NumericalError", "RcvConfig", "RcvError", "RcvResult",
    "SamplerConfig", "ScadConfig", "Subsample", "SweepResult", "WeightedCriterion",
    "compute_probabilities", "confidence_interval", "fit_full", "fit_full_scad", "fit_scad",
    "load_csv", "partial_regression_sweep", "pilot_fit", "rcv_estimate", "row_gradient_norm",
    "row_loss", "sample_with_replacement", "sandwich_variance", "scad_derivative",
    "scad_penalty", "split_halves", "view", "weighted_aggregate", "weighted_fit", "write_csv",
]
