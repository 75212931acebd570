"""Global empirical-Bayes outer loop.

One outer iteration = one update sweep per task (E-step) followed by a
closed-form hyperparameter update (M-step): the group shape/rate pair under
PINC, or the pooled group scales under PINC2. The noise hyperparameters (c, d)
are never updated. After each M-step the per-task bounds are recomputed under
the new hyperparameters so the convergence deltas always compare like with
like.

Uniform task collections (all tasks sharing row/coefficient counts, as in the
network workflow) run through a vectorized batch engine; mixed collections
fall back to per-task sweeps. Both produce the same trace semantics.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ._batch import BatchEngine, uniform_shapes
from .model import Hyperparams, RegressionTask, VariationalState, Variant, validate_task
from .specfn import digamma
from .vb import FitOptions, TaskWorkspace, _elbo_kernel, _sweep, init_state, posterior_summary

HYPER_CLAMP_LO = 1e-6
HYPER_CLAMP_HI = 1e6


@dataclass
class EbTrace:
    """Per-outer-iteration diagnostics of the interleaved run."""

    a: list = field(default_factory=list)                  # (G,) per iteration (PINC)
    b: list = field(default_factory=list)
    pooled_tau_sq: list = field(default_factory=list)      # (G,) per iteration (PINC2)
    sum_elbo: list = field(default_factory=list)           # sum_i L_i after the E-step
    max_delta: list = field(default_factory=list)          # max_i |L_i^(k) - L_i^(k-1)|
    elbos_post_e: list = field(default_factory=list)       # (p,) after the E-step
    elbos_post_m: list = field(default_factory=list)       # (p,) recomputed after the M-step
    converged: bool = False

    @property
    def n_iterations(self) -> int:
        return len(self.sum_elbo)


def eb_update_pinc(states: list[VariationalState]) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form shape/rate update from the tasks' group-scale posteriors.

    Uses the moment sums S_g = sum_i E[tau_{i,g}^-2] and
    L_g = sum_i E[log tau_{i,g}^-2]; the shape solves the digamma-approximated
    stationarity condition, the rate matches the empirical mean exactly.
    """
    p = len(states)
    if p < 2:
        raise ValueError("eb_update_pinc needs at least two tasks")
    a_stars = np.stack([st.a_star for st in states])
    b_stars = np.stack([st.b_star for st in states])
    s_g = np.sum(a_stars / b_stars, axis=0)
    l_g = np.sum(digamma(a_stars) - np.log(b_stars), axis=0)
    return eb_pinc_closed_form(s_g, l_g, p)


def eb_pinc_closed_form(s_g: np.ndarray, l_g: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """The PINC M-step as a pure function of the sufficient statistics."""
    s_g = np.atleast_1d(np.asarray(s_g, dtype=float))
    l_g = np.atleast_1d(np.asarray(l_g, dtype=float))
    denom = np.log(s_g) - l_g / p - np.log(p)
    degenerate = denom <= 0.0
    if degenerate.any():
        warnings.warn(
            "group-scale dispersion degenerate (all tasks' scale posteriors "
            "coincide); shape clamped high",
            RuntimeWarning,
        )
    a_hat = np.where(degenerate, HYPER_CLAMP_HI, 0.5 / np.where(degenerate, 1.0, denom))
    a_hat = np.clip(a_hat, HYPER_CLAMP_LO, HYPER_CLAMP_HI)
    b_hat = np.clip(a_hat * p / s_g, HYPER_CLAMP_LO, HYPER_CLAMP_HI)
    return a_hat, b_hat


def eb_update_pinc2(states: list[VariationalState], tasks: list[RegressionTask],
                    current: np.ndarray) -> np.ndarray:
    """Pooled group-scale update: expected-complete-data variance estimate.

    Groups with no coefficients anywhere keep their current value.
    """
    current = np.atleast_1d(np.asarray(current, dtype=float))
    n_groups = current.shape[0]
    num = np.zeros(n_groups)
    den = np.zeros(n_groups)
    for st, task in zip(states, tasks):
        m = st.beta_mean ** 2 + st.sigma_diag
        contrib = np.bincount(task.groups - 1, weights=st.e_inv_lambda_sq * m,
                              minlength=n_groups)
        num += (st.c_star / st.d_star) * contrib
        den += np.bincount(task.groups - 1, minlength=n_groups)
    return _pinc2_from_stats(num, den, current)


def _pinc2_from_stats(num: np.ndarray, den: np.ndarray,
                      current: np.ndarray) -> np.ndarray:
    out = np.asarray(current, dtype=float).copy()
    mask = den > 0
    out[mask] = num[mask] / den[mask]
    return out


class _ScalarEngine:
    """Per-task sweep loop; handles mixed task shapes."""

    def __init__(self, tasks, hyper, local_scales):
        self.tasks = tasks
        self.local_scales = local_scales
        self.workspaces = [TaskWorkspace(t, hyper.n_groups) for t in tasks]
        self.states = [init_state(t, hyper) for t in tasks]

    def sweep(self, hyper):
        for ws, st in zip(self.workspaces, self.states):
            _sweep(ws, st, hyper, full_cov=True, local_scales=self.local_scales)
        return np.array([st.elbo for st in self.states])

    def elbos_under(self, hyper):
        vals = np.array([
            _elbo_kernel(ws, st, hyper, local_scales=self.local_scales)
            for ws, st in zip(self.workspaces, self.states)
        ])
        for st, val in zip(self.states, vals):
            st.elbo = float(val)
        return vals

    def pinc_stats(self):
        a_stars = np.stack([st.a_star for st in self.states])
        b_stars = np.stack([st.b_star for st in self.states])
        s_g = np.sum(a_stars / b_stars, axis=0)
        l_g = np.sum(digamma(a_stars) - np.log(b_stars), axis=0)
        return s_g, l_g

    def pinc2_stats(self):
        n_groups = self.workspaces[0].n_groups
        num = np.zeros(n_groups)
        den = np.zeros(n_groups)
        for st, task in zip(self.states, self.tasks):
            m = st.beta_mean ** 2 + st.sigma_diag
            num += (st.c_star / st.d_star) * np.bincount(
                task.groups - 1, weights=st.e_inv_lambda_sq * m, minlength=n_groups)
            den += np.bincount(task.groups - 1, minlength=n_groups)
        return num, den

    def materialize(self, converged):
        for st in self.states:
            st.converged = converged
        return self.states, [posterior_summary(st) for st in self.states]


def run(tasks: list[RegressionTask], hyper0: Hyperparams,
        opts: FitOptions | None = None, *, update_local_scales: bool = True,
        force_scalar_path: bool = False):
    """Interleave per-task E-sweeps with M-steps until the bound settles.

    Returns (states, summaries, hyper, trace); non-convergence is flagged on
    the trace and the states, never raised.
    """
    opts = opts or FitOptions()
    p = len(tasks)
    if p == 0:
        raise ValueError("no tasks")
    hyper = replace(hyper0)
    n_groups = hyper.n_groups
    for task in tasks:
        validate_task(task, n_groups)

    if force_scalar_path or not uniform_shapes(tasks):
        engine = _ScalarEngine(tasks, hyper, update_local_scales)
    else:
        engine = BatchEngine(tasks, hyper, update_local_scales)

    trace = EbTrace()
    prev = np.full(p, -np.inf)
    pinc_single_warned = False

    for _ in range(opts.max_iter):
        elbos = engine.sweep(hyper)
        max_delta = float(np.max(np.abs(elbos - prev)))
        prev = elbos

        # ---- M-step: closed-form hyperparameter update
        if hyper.variant is Variant.PINC:
            s_g, l_g = engine.pinc_stats()
            if p == 1:
                if not pinc_single_warned:
                    warnings.warn(
                        "empirical Bayes with a single task is degenerate; "
                        "group shape clamped high",
                        RuntimeWarning,
                    )
                    pinc_single_warned = True
                a_hat = np.full(n_groups, HYPER_CLAMP_HI)
                b_hat = np.clip(a_hat / s_g, HYPER_CLAMP_LO, HYPER_CLAMP_HI)
            else:
                a_hat, b_hat = eb_pinc_closed_form(s_g, l_g, p)
            hyper = replace(hyper, a=a_hat, b=b_hat)
        else:
            num, den = engine.pinc2_stats()
            hyper = replace(hyper, pooled_tau_sq=_pinc2_from_stats(num, den, hyper.pooled_tau_sq))

        # ---- rebase the bounds on the new hyperparameters
        post_m = engine.elbos_under(hyper)

        if opts.track_elbo:
            if hyper.variant is Variant.PINC:
                trace.a.append(hyper.a.copy())
                trace.b.append(hyper.b.copy())
            else:
                trace.pooled_tau_sq.append(hyper.pooled_tau_sq.copy())
            trace.sum_elbo.append(float(np.sum(elbos)))
            trace.max_delta.append(max_delta)
            trace.elbos_post_e.append(np.asarray(elbos).copy())
            trace.elbos_post_m.append(np.asarray(post_m).copy())

        if max_delta < opts.tol:
            trace.converged = True
            break

    states, summaries = engine.materialize(trace.converged)
    return states, summaries, hyper, trace
