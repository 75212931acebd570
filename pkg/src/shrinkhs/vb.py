"""Per-task coordinate-ascent variational inference.

One sweep updates, in this fixed order: covariance and mean of the coefficient
block, the group-scale rates, the noise rate, the local-scale parameters, and
finally the evidence lower bound. The ELBO formula keeps the residual terms
that a self-consistent fixed point would cancel, so it is exact (a true lower
bound) at any intermediate parameter configuration — which is what makes the
per-sweep monotonicity checks meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.linalg.lapack import dpotrf, dpotri, dpotrs

from .model import (
    Hyperparams,
    PosteriorSummary,
    RegressionTask,
    VariationalState,
    Variant,
    validate_task,
)
from .specfn import digamma, log_gamma, scaled_e1

LOG_2PI = math.log(2.0 * math.pi)
LOG_PI = math.log(math.pi)

# Floor applied to the local-scale parameter l before scaled_e1 (the Lemma
# expectation has a logarithmic singularity at 0).
L_FLOOR = 1e-12
# Above this, E[lambda^-2] switches to its asymptotic series: the direct
# formula 1/(l*scaled_e1(l)) - 1 loses relative accuracy to cancellation.
_EZ_ASYMPTOTIC_CUTOFF = 1e5

# Fraction of the group's coefficient count entering the (constant) posterior
# shape of the group scales. Must be 1/2: the rate update below is the
# coordinate-ascent argmax only at that shape, and any other value breaks the
# bound's per-sweep monotonicity (measured decreases up to ~15 at 1/4).
TAU_SHAPE_FRACTION = 0.5


@dataclass
class FitOptions:
    tol: float = 1e-3
    max_iter: int = 1000
    track_elbo: bool = True

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def expected_inv_lambda_sq(l):
    """E[lambda^-2] under the local-scale marginal with parameter l.

    Equals 1/(l * e^l * E1(l)) - 1, strictly positive for all l > 0.
    """
    scalar = np.isscalar(l) or getattr(l, "ndim", 0) == 0
    arr = np.atleast_1d(np.asarray(l, dtype=float))
    out = np.empty_like(arr)
    direct = arr < _EZ_ASYMPTOTIC_CUTOFF
    if direct.any():
        v = arr[direct]
        out[direct] = 1.0 / (v * scaled_e1(v)) - 1.0
    tail = ~direct
    if tail.any():
        u = 1.0 / arr[tail]
        out[tail] = u * (1.0 - u * (1.0 - u * (3.0 - 13.0 * u)))
    if scalar:
        return float(out[0])
    return out.reshape(np.shape(l))


class TaskWorkspace:
    """Precomputed per-task quantities reused across sweeps."""

    def __init__(self, task: RegressionTask, n_groups: int):
        self.task = task
        self.n, self.s = task.x.shape
        self.g0 = task.groups - 1                      # 0-based labels
        self.n_groups = n_groups
        self.group_sizes = np.bincount(self.g0, minlength=n_groups).astype(float)
        self.xty = task.x.T @ task.y
        self.yty = float(task.y @ task.y)
        self.woodbury = self.s > 4 * self.n
        self.xtx = None if self.woodbury else task.x.T @ task.x

    def e_inv_tau_per_coef(self, state: VariationalState, hyper: Hyperparams) -> np.ndarray:
        if hyper.variant is Variant.PINC2:
            return (1.0 / hyper.pooled_tau_sq)[self.g0]
        return (state.a_star / state.b_star)[self.g0]


def init_state(task: RegressionTask, hyper: Hyperparams) -> VariationalState:
    """Initial variational parameters; the shapes stay constant thereafter."""
    validate_task(task, hyper.n_groups)
    s_g = task.group_counts(hyper.n_groups)
    n, s = task.x.shape
    return VariationalState(
        beta_mean=np.zeros(s),
        beta_cov=None,
        a_star=hyper.a + TAU_SHAPE_FRACTION * s_g,
        b_star=np.full(hyper.n_groups, 1e-3),
        c_star=hyper.c + 0.5 * n + 0.5 * s,
        d_star=1e-3,
        lambda_l=np.ones(s),
        e_inv_lambda_sq=np.ones(s),
    )


# ---- sweep kernels ---------------------------------------------------------

def _beta_kernel(ws: TaskWorkspace, state: VariationalState, hyper: Hyperparams,
                 full_cov: bool) -> None:
    dinv = ws.e_inv_tau_per_coef(state, hyper) * state.e_inv_lambda_sq
    scale = state.d_star / state.c_star            # 1 / E[sigma^-2]
    if not ws.woodbury:
        a_mat = ws.xtx.copy()
        a_mat[np.diag_indices_from(a_mat)] += dinv
        chol, info = dpotrf(a_mat, lower=1, overwrite_a=1)
        if info != 0:
            raise RuntimeError(f"coefficient-precision factorization failed (info={info})")
        logdet_a = 2.0 * float(np.sum(np.log(np.diag(chol))))
        beta, info = dpotrs(chol, ws.xty, lower=1)
        if info != 0:
            raise RuntimeError("coefficient solve failed")
        a_inv, info = dpotri(chol, lower=1, overwrite_c=1)
        if info != 0:
            raise RuntimeError("coefficient-covariance inversion failed")
        # dpotri fills one triangle only
        a_inv = np.tril(a_inv) + np.tril(a_inv, -1).T
        diag_a_inv = np.diag(a_inv).copy()
        state.beta_cov = scale * a_inv if full_cov else None
    else:
        # (X'X + D^-1)^-1 = V - V X' (I + X V X')^-1 X V with V = D = diag(1/dinv)
        v = 1.0 / dinv
        b_mat = ws.task.x * v[None, :]
        m_mat = b_mat @ ws.task.x.T
        m_mat[np.diag_indices_from(m_mat)] += 1.0
        chol = cho_factor(m_mat, lower=True, overwrite_a=True, check_finite=False)
        logdet_a = 2.0 * float(np.sum(np.log(np.diag(chol[0])))) - float(np.sum(np.log(v)))
        t1 = b_mat @ ws.xty
        t2 = cho_solve(chol, t1, check_finite=False)
        beta = v * ws.xty - b_mat.T @ t2
        z_mat = cho_solve(chol, b_mat, check_finite=False)
        diag_a_inv = v - np.einsum("nt,nt->t", b_mat, z_mat)
        state.beta_cov = scale * (np.diag(v) - b_mat.T @ z_mat) if full_cov else None
    state.beta_mean = beta
    state.sigma_diag = scale * diag_a_inv
    state.logdet_sigma = ws.s * math.log(scale) - logdet_a
    # tr(X'X Sigma*) = scale * (s - sum dinv * diag(A^-1))
    state.tr_xtx_sigma = scale * (ws.s - float(dinv @ diag_a_inv))
    resid = ws.task.y - ws.task.x @ beta
    state.resid_sq = float(resid @ resid)


def _tau_kernel(ws: TaskWorkspace, state: VariationalState, hyper: Hyperparams) -> None:
    if hyper.variant is Variant.PINC2:
        return
    m = state.beta_mean ** 2 + state.sigma_diag
    contrib = np.bincount(ws.g0, weights=state.e_inv_lambda_sq * m,
                          minlength=ws.n_groups)
    # Shape and rate of the exact conditional. The shape depends only on the
    # prior shape and the group size, so it is constant while the
    # hyperparameters are; re-deriving it here keeps the sweep an exact
    # ascent step when an outer loop has moved them.
    state.a_star = hyper.a + TAU_SHAPE_FRACTION * ws.group_sizes
    state.b_star = hyper.b + 0.5 * (state.c_star / state.d_star) * contrib


def _sigma_kernel(ws: TaskWorkspace, state: VariationalState, hyper: Hyperparams) -> None:
    dinv = ws.e_inv_tau_per_coef(state, hyper) * state.e_inv_lambda_sq
    m = state.beta_mean ** 2 + state.sigma_diag
    quad = float(dinv @ m)
    state.d_star = hyper.d + 0.5 * quad + 0.5 * (state.resid_sq + state.tr_xtx_sigma)


def _lambda_kernel(ws: TaskWorkspace, state: VariationalState, hyper: Hyperparams) -> None:
    e_u = state.c_star / state.d_star
    e_w = ws.e_inv_tau_per_coef(state, hyper)
    m = state.beta_mean ** 2 + state.sigma_diag
    l = 0.5 * e_u * e_w * m
    np.maximum(l, L_FLOOR, out=l)
    state.lambda_l = l
    se1 = scaled_e1(l)
    state.scaled_e1_l = se1
    state.e_inv_lambda_sq = _ez_from_scaled_e1(l, se1)


def _ez_from_scaled_e1(l: np.ndarray, se1: np.ndarray) -> np.ndarray:
    """E[lambda^-2] given a precomputed e^l E1(l); asymptotic branch included."""
    out = np.empty_like(l)
    direct = l < _EZ_ASYMPTOTIC_CUTOFF
    np.divide(1.0, l * se1, out=out, where=direct)
    out[direct] -= 1.0
    tail = ~direct
    if tail.any():
        u = 1.0 / l[tail]
        out[tail] = u * (1.0 - u * (1.0 - u * (3.0 - 13.0 * u)))
    return out


def _elbo_kernel(ws: TaskWorkspace, state: VariationalState, hyper: Hyperparams,
                 local_scales: bool = True) -> float:
    n, s = ws.n, ws.s
    e_u = state.c_star / state.d_star
    elog_u = digamma(state.c_star) - math.log(state.d_star)
    m = state.beta_mean ** 2 + state.sigma_diag
    ez = state.e_inv_lambda_sq

    terms = {}
    terms["gaussian"] = -0.5 * n * LOG_2PI + 0.5 * state.logdet_sigma + 0.5 * s

    if hyper.variant is Variant.PINC:
        e_w = state.a_star / state.b_star
        elog_w = digamma(state.a_star) - np.log(state.b_star)
        group_terms = (
            hyper.a * np.log(hyper.b) - log_gamma(hyper.a)
            - state.a_star * np.log(state.b_star) + log_gamma(state.a_star)
            + (0.5 * ws.group_sizes + hyper.a - state.a_star) * elog_w
            + (state.b_star - hyper.b) * e_w
        )
        terms["group_scales"] = float(np.sum(group_terms))
        e_w_coef = e_w[ws.g0]
    else:
        w = 1.0 / hyper.pooled_tau_sq
        terms["group_scales"] = 0.5 * float(ws.group_sizes @ np.log(w))
        e_w_coef = w[ws.g0]

    s_quad = float((e_w_coef * ez) @ m)
    terms["noise"] = (
        hyper.c * math.log(hyper.d) - log_gamma(hyper.c)
        - state.c_star * math.log(state.d_star) + log_gamma(state.c_star)
        + (0.5 * n + 0.5 * s + hyper.c - state.c_star) * elog_u
        + (state.d_star - hyper.d) * e_u
    )
    terms["quadratic"] = -0.5 * e_u * (state.resid_sq + state.tr_xtx_sigma + s_quad)
    if local_scales:
        se1 = state.scaled_e1_l
        if se1 is None or se1.shape != state.lambda_l.shape:
            se1 = scaled_e1(state.lambda_l)
        # log E1(l) = log(e^l E1(l)) - l; the -s log(pi) is the half-Cauchy
        # normalizers' share
        terms["local_scales"] = -s * LOG_PI + float(
            np.sum(np.log(se1) + state.lambda_l * ez))
    total = sum(terms.values())
    if not np.isfinite(total):
        detail = ", ".join(f"{k}={v!r}" for k, v in terms.items())
        raise RuntimeError(f"non-finite evidence bound: {detail}")
    return total


def _sweep(ws: TaskWorkspace, state: VariationalState, hyper: Hyperparams,
           full_cov: bool = True, local_scales: bool = True) -> float:
    """One full update sweep in the fixed order; returns the updated bound.

    With ``local_scales=False`` the per-coefficient scales stay frozen at one
    (a plain Gaussian coefficient prior — the ridge analogue of the model) and
    the bound drops the corresponding terms.
    """
    _beta_kernel(ws, state, hyper, full_cov)
    _tau_kernel(ws, state, hyper)
    _sigma_kernel(ws, state, hyper)
    if local_scales:
        _lambda_kernel(ws, state, hyper)
    state.elbo = _elbo_kernel(ws, state, hyper, local_scales=local_scales)
    return state.elbo


# ---- public per-block operations (convenience wrappers over the kernels) ----

def update_beta(state: VariationalState, task: RegressionTask,
                hyper: Hyperparams) -> VariationalState:
    _beta_kernel(TaskWorkspace(task, hyper.n_groups), state, hyper, full_cov=True)
    return state


def update_tau(state: VariationalState, task: RegressionTask,
               hyper: Hyperparams) -> VariationalState:
    _tau_kernel(TaskWorkspace(task, hyper.n_groups), state, hyper)
    return state


def update_sigma(state: VariationalState, task: RegressionTask,
                 hyper: Hyperparams) -> VariationalState:
    _sigma_kernel(TaskWorkspace(task, hyper.n_groups), state, hyper)
    return state


def update_lambda(state: VariationalState, task: RegressionTask,
                  hyper: Hyperparams) -> VariationalState:
    _lambda_kernel(TaskWorkspace(task, hyper.n_groups), state, hyper)
    return state


def elbo(state: VariationalState, task: RegressionTask, hyper: Hyperparams) -> float:
    return _elbo_kernel(TaskWorkspace(task, hyper.n_groups), state, hyper)


def posterior_summary(state: VariationalState) -> PosteriorSummary:
    sds = np.sqrt(np.maximum(state.sigma_diag, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(sds > 0.0, np.abs(state.beta_mean) / sds, np.inf)
    return PosteriorSummary(means=state.beta_mean.copy(), sds=sds,
                            kappa=kappa, elbo=state.elbo)


def empty_model_elbo(y: np.ndarray, hyper: Hyperparams) -> float:
    """Evidence bound of the coefficient-free model (all columns dropped).

    The noise block converges in a single update (d* = d + ||y||^2/2), so the
    bound has a closed form.
    """
    n = y.shape[0]
    c_star = hyper.c + 0.5 * n
    d_star = hyper.d + 0.5 * float(y @ y)
    return (
        -0.5 * n * LOG_2PI
        + hyper.c * math.log(hyper.d) - log_gamma(hyper.c)
        - c_star * math.log(d_star) + log_gamma(c_star)
    )


def fit_single(task: RegressionTask, hyper: Hyperparams,
               opts: FitOptions | None = None):
    """Run sweeps to convergence on one task.

    Returns (state, summary, iterations). Non-convergence within max_iter is
    flagged on the state, not raised.
    """
    opts = opts or FitOptions()
    validate_task(task, hyper.n_groups)
    ws = TaskWorkspace(task, hyper.n_groups)
    state = init_state(task, hyper)
    trace: list[float] = []
    iterations = 0
    for _ in range(opts.max_iter):
        previous = state.elbo
        _sweep(ws, state, hyper, full_cov=True)
        iterations += 1
        if opts.track_elbo:
            trace.append(state.elbo)
        if abs(state.elbo - previous) < opts.tol:
            state.converged = True
            break
    if opts.track_elbo:
        state.elbo_trace = trace
    return state, posterior_summary(state), iterations
