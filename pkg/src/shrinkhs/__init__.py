"""Empirical-Bayes variational inference for sparse multi-task linear regression
under grouped global-local shrinkage, with network reconstruction, post-hoc
variable selection, a Gibbs reference sampler, and a simulation harness."""

from .model import (
    Hyperparams,
    NetworkEstimate,
    PosteriorSummary,
    RegressionTask,
    TaskValidationError,
    VariationalState,
    Variant,
    validate_task,
)
from .eb import run as eb_run
from .gibbs import McmcOptions, McmcSummary, gibbs_fit
from .selection import SelectionMethod, SelectionResult, dss_select, threshold_select
from .vb import FitOptions, expected_inv_lambda_sq, fit_single, init_state

__version__ = "0.1.0"

__all__ = [
    "FitOptions",
    "Hyperparams",
    "McmcOptions",
    "McmcSummary",
    "NetworkEstimate",
    "PosteriorSummary",
    "RegressionTask",
    "SelectionMethod",
    "SelectionResult",
    "TaskValidationError",
    "VariationalState",
    "Variant",
    "dss_select",
    "eb_run",
    "expected_inv_lambda_sq",
    "fit_single",
    "gibbs_fit",
    "init_state",
    "threshold_select",
    "validate_task",
    "__version__",
]
