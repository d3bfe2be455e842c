"""Fairness-constrained entropic optimal transport."""

from ._core import (
    ConfigError,
    InfeasibleError,
    NumericError,
    __version__,
    default_fairness_target,
    dual_ascent_entropic,
    fair_sinkhorn,
    fairness_loss,
    fairness_loss_grad,
    generate,
    group_coupling,
    mahalanobis_cost,
    model_cost,
    penalized_gcg,
    psd_project,
    repair_target,
    run_sweep,
    sinkhorn,
    squared_euclidean_cost,
)

__all__ = [
    "ConfigError",
    "InfeasibleError",
    "NumericError",
    "__version__",
    "default_fairness_target",
    "dual_ascent_entropic",
    "fair_sinkhorn",
    "fairness_loss",
    "fairness_loss_grad",
    "generate",
    "group_coupling",
    "mahalanobis_cost",
    "model_cost",
    "penalized_gcg",
    "psd_project",
    "repair_target",
    "run_sweep",
    "sinkhorn",
    "squared_euclidean_cost",
]
