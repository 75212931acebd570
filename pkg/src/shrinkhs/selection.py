"""Post-hoc variable selection on a completed fit.

Two procedures: credible-level thresholding of the kappa statistic with an
evidence-bound refit over a fixed level grid, and a decoupled
shrinkage-and-selection (DSS) adaptive lasso tuned by K-fold cross-validation
with the one-standard-error rule.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtri

from .model import Hyperparams, PosteriorSummary, RegressionTask
from .vb import FitOptions, empty_model_elbo, fit_single

# Credible levels: 5%-step grid plus the right endpoint.
LEVEL_GRID = tuple(round(0.10 + 0.05 * k, 2) for k in range(18)) + (0.9999,)

# Below this magnitude a posterior mean is treated as exactly zero for DSS
# (its adaptive weight would be infinite).
DSS_ZERO_THRESHOLD = 1e-12

N_LAMBDA = 100
LAMBDA_MIN_RATIO = 1e-4

# K-fold CV on the DSS path needs enough rows per fold to be meaningful.
MIN_ROWS_FOR_CV = 15


class SelectionMethod(str, Enum):
    THRESHOLD = "threshold"
    DSS = "dss"


@dataclass
class SelectionResult:
    method: SelectionMethod
    selected: np.ndarray              # boolean, length s
    chosen_level: float               # credible level gamma, or penalty lambda
    score_trace: list                 # (level, score) pairs over the grid


@dataclass
class DssPath:
    lambdas: np.ndarray               # decreasing, positive
    coefficients: np.ndarray          # (len(lambdas), s), original coordinates


def kappa_statistic(summary: PosteriorSummary) -> np.ndarray:
    """Signal-to-sd ratio |mean|/sd per coefficient; +inf where sd is zero."""
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(summary.sds > 0.0,
                         np.abs(summary.means) / summary.sds, np.inf)
    return kappa


def symmetrize_kappa(k: np.ndarray) -> np.ndarray:
    """Average a square score matrix with its transpose; diagonal zeroed."""
    out = 0.5 * (k + k.T)
    np.fill_diagonal(out, 0.0)
    return out


def threshold_select(task: RegressionTask, hyper: Hyperparams,
                     summary: PosteriorSummary, state,
                     opts: FitOptions | None = None) -> SelectionResult:
    """Pick the credible level whose implied submodel has the best evidence.

    For each level gamma on the grid, coefficients with
    kappa > Phi^-1((1+gamma)/2) are kept, the model is refit on the surviving
    columns with hyperparameters frozen, and the refit bound scores the level.
    Identical survivor sets are refit once.
    """
    opts = opts or FitOptions()
    kappa = kappa_statistic(summary)
    cache: dict[tuple, float] = {}
    trace = []
    best_level, best_score, best_sel = None, -np.inf, None
    for gamma in LEVEL_GRID:
        quantile = float(ndtri(0.5 * (1.0 + gamma)))
        sel = kappa > quantile
        key = tuple(np.flatnonzero(sel))
        if key not in cache:
            cache[key] = _refit_elbo(task, hyper, sel, opts)
        score = cache[key]
        trace.append((gamma, score))
        if score > best_score:
            best_level, best_score, best_sel = gamma, score, sel
    return SelectionResult(method=SelectionMethod.THRESHOLD,
                           selected=best_sel.copy(),
                           chosen_level=best_level,
                           score_trace=trace)


def _refit_elbo(task: RegressionTask, hyper: Hyperparams, sel: np.ndarray,
                opts: FitOptions) -> float:
    if not sel.any():
        return empty_model_elbo(task.y, hyper)
    sub = RegressionTask(index=task.index, y=task.y, x=task.x[:, sel],
                         groups=task.groups[sel])
    state, _, _ = fit_single(sub, hyper, opts)
    return state.elbo


# ---- DSS: adaptive lasso on the posterior-mean fit -------------------------

def soft_threshold(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


def lasso_grid(x: np.ndarray, r: np.ndarray, lambdas: np.ndarray,
               tol: float = 1e-12, max_iter: int = 10_000) -> np.ndarray:
    """Coordinate-descent solutions of (1/n)||r - x theta||^2 + lambda ||theta||_1.

    Solves the whole (decreasing) penalty grid with warm starts; returns one
    coefficient row per penalty.
    """
    n, k = x.shape
    col_sq = 2.0 * np.sum(x * x, axis=0) / n
    theta = np.zeros(k)
    resid = r.copy()
    out = np.empty((lambdas.shape[0], k))
    for li, lam in enumerate(lambdas):
        for _ in range(max_iter):
            max_move = 0.0
            for j in range(k):
                if col_sq[j] == 0.0:
                    continue
                old = theta[j]
                rho = 2.0 * float(x[:, j] @ resid) / n + col_sq[j] * old
                new = soft_threshold(rho, lam) / col_sq[j]
                if new != old:
                    resid -= x[:, j] * (new - old)
                    theta[j] = new
                    max_move = max(max_move, abs(new - old))
            if max_move < tol:
                break
        out[li] = theta
    return out


def dss_objective(x: np.ndarray, beta_bar: np.ndarray, gamma: np.ndarray,
                  lam: float) -> float:
    """The adaptive-lasso surrogate objective at a candidate sparse vector."""
    n = x.shape[0]
    fit = x @ beta_bar
    diff = fit - x @ gamma
    active = np.abs(beta_bar) >= DSS_ZERO_THRESHOLD
    penalty = float(np.sum(np.abs(gamma[active]) / np.abs(beta_bar[active])))
    return float(diff @ diff) / n + lam * penalty


def dss_path(task: RegressionTask, beta_bar: np.ndarray,
             lambdas: np.ndarray | None = None) -> DssPath:
    """Sparse surrogates of the posterior-mean fit over a penalty grid.

    The adaptive weights 1/|beta_bar| are folded into the design so a plain
    l1 solver applies; coefficients with negligible posterior mean are pinned
    to zero throughout.
    """
    x = task.x
    n, s = x.shape
    active = np.abs(beta_bar) >= DSS_ZERO_THRESHOLD
    r = x @ beta_bar
    if not active.any():
        grid = lambdas if lambdas is not None else np.geomspace(1.0, LAMBDA_MIN_RATIO, N_LAMBDA)
        return DssPath(lambdas=np.asarray(grid, dtype=float),
                       coefficients=np.zeros((len(grid), s)))
    w = np.abs(beta_bar[active])
    xw = x[:, active] * w[None, :]
    if lambdas is None:
        lam_max = float(np.max(np.abs(2.0 * (xw.T @ r) / n)))
        if lam_max <= 0.0:
            lambdas = np.geomspace(1.0, LAMBDA_MIN_RATIO, N_LAMBDA)
        else:
            lambdas = np.geomspace(lam_max, LAMBDA_MIN_RATIO * lam_max, N_LAMBDA)
    lambdas = np.asarray(lambdas, dtype=float)
    theta = lasso_grid(xw, r, lambdas)
    coefficients = np.zeros((lambdas.shape[0], s))
    coefficients[:, active] = theta * w[None, :]
    return DssPath(lambdas=lambdas, coefficients=coefficients)


def dss_select(task: RegressionTask, hyper: Hyperparams, beta_bar: np.ndarray,
               folds: int = 5, opts: FitOptions | None = None) -> SelectionResult:
    """Tune the DSS penalty by K-fold CV with the one-standard-error rule.

    Each fold refits the posterior mean on its training rows (hyperparameters
    frozen) before tracing the surrogate path, so held-out predictions never
    see the held-out rows.
    """
    opts = opts or FitOptions()
    n = task.n
    if n < MIN_ROWS_FOR_CV:
        raise ValueError(
            f"cross-validated DSS needs at least {MIN_ROWS_FOR_CV} rows "
            f"(got {n}); use the THRESHOLD method for smaller samples"
        )
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if n < folds:
        raise ValueError("more folds than rows")

    full_path = dss_path(task, beta_bar)
    lambdas = full_path.lambdas

    fold_indices = np.array_split(np.arange(n), folds)
    fold_mse = []
    for test_idx in fold_indices:
        train_mask = np.ones(n, dtype=bool)
        train_mask[test_idx] = False
        y_train = task.y[train_mask]
        if np.ptp(y_train) == 0.0:
            warnings.warn("fold skipped: constant response in training rows",
                          RuntimeWarning)
            continue
        sub = RegressionTask(index=task.index, y=y_train,
                             x=task.x[train_mask], groups=task.groups)
        state, _, _ = fit_single(sub, hyper, opts)
        fold_curve = dss_path(sub, state.beta_mean, lambdas=lambdas)
        pred = task.x[test_idx] @ fold_curve.coefficients.T   # (n_test, L)
        err = pred - task.y[test_idx, None]
        fold_mse.append(np.mean(err * err, axis=0))
    if not fold_mse:
        raise ValueError("every fold was skipped; response is constant")
    fold_mse = np.asarray(fold_mse)                           # (K_eff, L)
    mean_mse = fold_mse.mean(axis=0)
    k_eff = fold_mse.shape[0]
    best = int(np.argmin(mean_mse))
    se = float(fold_mse[:, best].std(ddof=1) / np.sqrt(k_eff)) if k_eff > 1 else 0.0
    # largest penalty within one SE of the minimum (grid is decreasing)
    within = np.flatnonzero(mean_mse <= mean_mse[best] + se)
    chosen = int(within[0])
    gamma_hat = full_path.coefficients[chosen]
    return SelectionResult(method=SelectionMethod.DSS,
                           selected=np.abs(gamma_hat) > 0.0,
                           chosen_level=float(lambdas[chosen]),
                           score_trace=list(zip(lambdas.tolist(), mean_mse.tolist())))
