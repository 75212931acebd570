"""Core data types shared by the inference modules, plus validation and JSON codecs.

Group labels are 1-based: task ``groups`` entries live in 1..G, and a label's
coefficient count within a task may be zero (groups absent from a task are legal).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

SCHEMA_VERSION = 1


class Variant(str, Enum):
    PINC = "pinc"
    PINC2 = "pinc2"


class TaskValidationError(ValueError):
    """Raised when a RegressionTask violates a structural invariant.

    ``reason`` is one of "dimension_mismatch", "empty_design", "label_out_of_range".
    """

    def __init__(self, reason: str, detail: str):
        self.reason = reason
        super().__init__(f"{reason}: {detail}")


@dataclass
class RegressionTask:
    """One response vector with its design matrix and group-label row."""

    index: int
    y: np.ndarray          # (n,)
    x: np.ndarray          # (n, s)
    groups: np.ndarray     # (s,) integer labels in 1..G

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.groups = np.asarray(self.groups, dtype=int)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def s(self) -> int:
        return self.x.shape[1] if self.x.ndim == 2 else 0

    def group_counts(self, n_groups: int) -> np.ndarray:
        """Coefficient count per group label, length n_groups (index g-1 for label g)."""
        return np.bincount(self.groups - 1, minlength=n_groups).astype(float)


def n_groups(tasks: list[RegressionTask]) -> int:
    """G inferred as the maximum label across all tasks."""
    return int(max(int(t.groups.max()) for t in tasks))


def validate_task(task: RegressionTask, n_groups: Optional[int] = None) -> None:
    """Check structural invariants, raising TaskValidationError naming the violation."""
    if task.x.ndim != 2:
        raise TaskValidationError("dimension_mismatch", f"x must be a matrix, got ndim={task.x.ndim}")
    n, s = task.x.shape
    if s == 0:
        raise TaskValidationError("empty_design", "x has no columns")
    if n == 0:
        raise TaskValidationError("empty_design", "x has no rows")
    if task.y.ndim != 1 or task.y.shape[0] != n:
        raise TaskValidationError(
            "dimension_mismatch", f"y has length {task.y.shape[0] if task.y.ndim == 1 else task.y.shape}, x has {n} rows"
        )
    if task.groups.ndim != 1 or task.groups.shape[0] != s:
        raise TaskValidationError(
            "dimension_mismatch", f"groups has length {task.groups.shape[0] if task.groups.ndim == 1 else task.groups.shape}, x has {s} columns"
        )
    if task.groups.size and task.groups.min() < 1:
        raise TaskValidationError("label_out_of_range", f"group label {int(task.groups.min())} below 1")
    if n_groups is not None and task.groups.size and task.groups.max() > n_groups:
        raise TaskValidationError(
            "label_out_of_range", f"group label {int(task.groups.max())} exceeds G={n_groups}"
        )
    if not np.all(np.isfinite(task.y)) or not np.all(np.isfinite(task.x)):
        raise TaskValidationError("dimension_mismatch", "non-finite entries in y or x")


@dataclass
class Hyperparams:
    """Global prior hyperparameters shared across tasks."""

    a: np.ndarray                      # (G,) group shape
    b: np.ndarray                      # (G,) group rate
    c: float
    d: float
    variant: Variant = Variant.PINC
    pooled_tau_sq: Optional[np.ndarray] = None   # (G,), used only under PINC2

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        self.variant = Variant(self.variant)
        if self.pooled_tau_sq is not None:
            self.pooled_tau_sq = np.atleast_1d(np.asarray(self.pooled_tau_sq, dtype=float))
        elif self.variant is Variant.PINC2:
            self.pooled_tau_sq = np.ones_like(self.a)
        if self.a.shape != self.b.shape:
            raise ValueError("a and b must have equal length")
        if np.any(self.a <= 0) or np.any(self.b <= 0) or self.c <= 0 or self.d <= 0:
            raise ValueError("hyperparameters must be strictly positive")
        if self.pooled_tau_sq is not None and np.any(self.pooled_tau_sq <= 0):
            raise ValueError("pooled_tau_sq must be strictly positive")

    @property
    def n_groups(self) -> int:
        return self.a.shape[0]

    def e_inv_tau_sq(self) -> np.ndarray:
        """Current E[tau^-2] per group under the active variant."""
        if self.variant is Variant.PINC2:
            return 1.0 / self.pooled_tau_sq
        return self.a / self.b


@dataclass
class VariationalState:
    """Per-task variational parameters (one factored posterior per task)."""

    beta_mean: np.ndarray                  # (s,)
    beta_cov: Optional[np.ndarray]         # (s, s); None until the first beta update
    a_star: np.ndarray                     # (G,)
    b_star: np.ndarray                     # (G,)
    c_star: float
    d_star: float
    lambda_l: np.ndarray                   # (s,)
    e_inv_lambda_sq: np.ndarray            # (s,)
    elbo: float = -np.inf
    converged: bool = False
    # Cached per-sweep scalars enabling O(s) ELBO evaluation without the full
    # covariance: diag(Sigma*), log|Sigma*|, ||y - X beta*||^2, tr(X'X Sigma*),
    # and the d_star value Sigma* was formed with.
    sigma_diag: Optional[np.ndarray] = None
    logdet_sigma: float = np.nan
    resid_sq: float = np.nan
    tr_xtx_sigma: float = np.nan
    # e^l E1(l) at the current lambda_l, shared by the scale and bound updates
    scaled_e1_l: Optional[np.ndarray] = None

    def copy(self) -> "VariationalState":
        return VariationalState(
            beta_mean=self.beta_mean.copy(),
            beta_cov=None if self.beta_cov is None else self.beta_cov.copy(),
            a_star=self.a_star.copy(),
            b_star=self.b_star.copy(),
            c_star=self.c_star,
            d_star=self.d_star,
            lambda_l=self.lambda_l.copy(),
            e_inv_lambda_sq=self.e_inv_lambda_sq.copy(),
            elbo=self.elbo,
            converged=self.converged,
            sigma_diag=None if self.sigma_diag is None else self.sigma_diag.copy(),
            logdet_sigma=self.logdet_sigma,
            resid_sq=self.resid_sq,
            tr_xtx_sigma=self.tr_xtx_sigma,
            scaled_e1_l=None if self.scaled_e1_l is None else self.scaled_e1_l.copy(),
        )


@dataclass
class PosteriorSummary:
    """Per-coefficient posterior summaries of one task's fit."""

    means: np.ndarray
    sds: np.ndarray
    kappa: np.ndarray
    elbo: float


@dataclass
class NetworkEstimate:
    """Symmetrized edge strengths and the selected edge set over p nodes."""

    p: int
    strength: np.ndarray                       # (p, p) symmetric, zero diagonal
    edges: set[tuple[int, int]] = field(default_factory=set)   # 0-based pairs i < j


# ---- JSON codecs -----------------------------------------------------------
#
# The on-disk schema (shared with the cli module): numpy arrays become nested
# lists, enums their string values, sets sorted lists. Floats rely on repr
# round-tripping, which is exact for binary64.

def task_to_json(task: RegressionTask) -> dict:
    return {
        "index": task.index,
        "y": task.y.tolist(),
        "x": task.x.tolist(),
        "groups": task.groups.tolist(),
    }


def task_from_json(obj: dict) -> RegressionTask:
    return RegressionTask(
        index=int(obj["index"]),
        y=np.asarray(obj["y"], dtype=float),
        x=np.asarray(obj["x"], dtype=float),
        groups=np.asarray(obj["groups"], dtype=int),
    )


def hyperparams_to_json(hyper: Hyperparams) -> dict:
    out = {
        "a": hyper.a.tolist(),
        "b": hyper.b.tolist(),
        "c": hyper.c,
        "d": hyper.d,
        "variant": hyper.variant.value,
    }
    if hyper.pooled_tau_sq is not None:
        out["pooled_tau_sq"] = hyper.pooled_tau_sq.tolist()
    return out


def hyperparams_from_json(obj: dict) -> Hyperparams:
    return Hyperparams(
        a=np.asarray(obj["a"], dtype=float),
        b=np.asarray(obj["b"], dtype=float),
        c=float(obj["c"]),
        d=float(obj["d"]),
        variant=Variant(obj["variant"]),
        pooled_tau_sq=None if obj.get("pooled_tau_sq") is None
        else np.asarray(obj["pooled_tau_sq"], dtype=float),
    )


def state_to_json(state: VariationalState) -> dict:
    return {
        "beta_mean": state.beta_mean.tolist(),
        "beta_cov": None if state.beta_cov is None else state.beta_cov.tolist(),
        "a_star": state.a_star.tolist(),
        "b_star": state.b_star.tolist(),
        "c_star": state.c_star,
        "d_star": state.d_star,
        "lambda_l": state.lambda_l.tolist(),
        "e_inv_lambda_sq": state.e_inv_lambda_sq.tolist(),
        "elbo": state.elbo,
        "converged": state.converged,
    }


def state_from_json(obj: dict) -> VariationalState:
    return VariationalState(
        beta_mean=np.asarray(obj["beta_mean"], dtype=float),
        beta_cov=None if obj.get("beta_cov") is None else np.asarray(obj["beta_cov"], dtype=float),
        a_star=np.asarray(obj["a_star"], dtype=float),
        b_star=np.asarray(obj["b_star"], dtype=float),
        c_star=float(obj["c_star"]),
        d_star=float(obj["d_star"]),
        lambda_l=np.asarray(obj["lambda_l"], dtype=float),
        e_inv_lambda_sq=np.asarray(obj["e_inv_lambda_sq"], dtype=float),
        elbo=float(obj["elbo"]),
        converged=bool(obj.get("converged", False)),
    )


def summary_to_json(summary: PosteriorSummary) -> dict:
    return {
        "means": summary.means.tolist(),
        "sds": summary.sds.tolist(),
        "kappa": summary.kappa.tolist(),
        "elbo": summary.elbo,
    }


def summary_from_json(obj: dict) -> PosteriorSummary:
    return PosteriorSummary(
        means=np.asarray(obj["means"], dtype=float),
        sds=np.asarray(obj["sds"], dtype=float),
        kappa=np.asarray(obj["kappa"], dtype=float),
        elbo=float(obj["elbo"]),
    )


def network_to_json(net: NetworkEstimate) -> dict:
    return {
        "p": net.p,
        "strength": net.strength.tolist(),
        "edges": sorted([list(e) for e in net.edges]),
    }


def network_from_json(obj: dict) -> NetworkEstimate:
    return NetworkEstimate(
        p=int(obj["p"]),
        strength=np.asarray(obj["strength"], dtype=float),
        edges={(int(i), int(j)) for i, j in obj["edges"]},
    )
