"""Multi-annotator deep learning: Python access to the C++ core.

Classes are 1-based in every argument and result; -1 marks a missing
annotation.
"""

from ._madl import (
    ConfigError,
    ContractError,
    ParseError,
    ShapeError,
    annotation_probability,
    annotator_weights,
    ap_metrics,
    bayes_ap,
    bayes_gt,
    cosine_lr,
    gamma_log_prior,
    gt_metrics,
    initial_confusion,
    majority_vote,
    run_experiment,
    simulate,
    weighted_loss,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "ParseError",
    "ShapeError",
    "annotation_probability",
    "annotator_weights",
    "ap_metrics",
    "bayes_ap",
    "bayes_gt",
    "cosine_lr",
    "gamma_log_prior",
    "gt_metrics",
    "initial_confusion",
    "majority_vote",
    "run_experiment",
    "simulate",
    "weighted_loss",
]
