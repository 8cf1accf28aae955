"""Credal-set interval neural networks.

Classifiers whose weights, activations and outputs are intervals. The
Interval SoftMax head yields per-class probability intervals (a credal
set), from which aleatoric, epistemic and total uncertainty are read off.
"""
from .autodiff import Param, Tape, Var, backward, finite_diff_check
from .checkpoint import load_checkpoint, save_checkpoint
from .credal import (
    ImproperCredalSetError,
    ProbabilityIntervals,
    UncertaintyReport,
    average_intervals,
    batch_uncertainty,
    intersection_probability,
    lower_entropy,
    reachable,
    uncertainty,
    upper_entropy,
)
from .interval import IntervalError, IntervalTensor, degenerate
from .layers import CreINN, ModelSpec, interval_softmax
from .training import TrainConfig, fit, init_params, predict

__version__ = "0.1.0"

__all__ = [
    "Param",
    "Tape",
    "Var",
    "backward",
    "finite_diff_check",
    "load_checkpoint",
    "save_checkpoint",
    "ImproperCredalSetError",
    "ProbabilityIntervals",
    "UncertaintyReport",
    "average_intervals",
    "batch_uncertainty",
    "intersection_probability",
    "lower_entropy",
    "reachable",
    "uncertainty",
    "upper_entropy",
    "IntervalError",
    "IntervalTensor",
    "degenerate",
    "CreINN",
    "ModelSpec",
    "interval_softmax",
    "TrainConfig",
    "fit",
    "init_params",
    "predict",
]
