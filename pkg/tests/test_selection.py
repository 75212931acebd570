"""Tests for post-fit variable selection: kappa thresholding and the
adaptive-lasso surrogate path."""
import math

import numpy as np
import numpy.testing as npt
import pytest
import scipy.optimize
import scipy.special

from shrinkhs.model import Hyperparams, PosteriorSummary, RegressionTask
from shrinkhs.selection import (
    DSS_ZERO_THRESHOLD,
    LEVEL_GRID,
    MIN_ROWS_FOR_CV,
    N_LAMBDA,
    SelectionMethod,
    dss_objective,
    dss_path,
    dss_select,
    kappa_statistic,
    lasso_grid,
    soft_threshold,
    symmetrize_kappa,
    threshold_select,
)
from shrinkhs.vb import FitOptions, empty_model_elbo, fit_single


def vague_hyper():
    return Hyperparams(a=[1e-3], b=[1e-3], c=1e-3, d=1e-3)


def make_task(n=60, s=6, beta=(2.0, -2.0, 0, 0, 0, 0), noise=0.3, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, s))
    y = x @ np.asarray(beta, dtype=float) + noise * rng.standard_normal(n)
    return RegressionTask(index=0, y=y, x=x, groups=np.ones(s, dtype=int))


def normal_quantile_oracle(gamma: float) -> float:
    """Invert Phi((1+gamma)/2) by bisection on erf, independent of ndtri."""
    target = gamma     # P(|Z| <= c) = erf(c / sqrt 2)
    return scipy.optimize.brentq(
        lambda c: scipy.special.erf(c / math.sqrt(2.0)) - target, 0.0, 40.0,
        xtol=1e-13)


# ------------------------------------------------------- kappa machinery

def test_kappa_statistic_definition():
    summ = PosteriorSummary(means=np.array([1.0, -4.0, 0.0]),
                            sds=np.array([0.5, 2.0, 0.0]),
                            kappa=np.zeros(3), elbo=0.0)
    npt.assert_allclose(kappa_statistic(summ)[:2], [2.0, 2.0])
    assert kappa_statistic(summ)[2] == np.inf


def test_symmetrize_kappa():
    k = np.array([[9.0, 2.0], [4.0, 9.0]])
    out = symmetrize_kappa(k)
    npt.assert_allclose(out, [[0.0, 3.0], [3.0, 0.0]])


def test_level_grid_contents():
    assert LEVEL_GRID[0] == 0.10
    assert LEVEL_GRID[-2] == 0.95
    assert LEVEL_GRID[-1] == 0.9999
    assert len(LEVEL_GRID) == 19
    npt.assert_allclose(np.diff(LEVEL_GRID[:-1]), 0.05)


# ------------------------------------------------------- threshold selection

def fitted(seed=0, **kw):
    task = make_task(seed=seed, **kw)
    hyper = vague_hyper()
    state, summary, _ = fit_single(task, hyper)
    return task, hyper, state, summary


def test_threshold_select_recovers_strong_signal():
    task, hyper, state, summary = fitted()
    res = threshold_select(task, hyper, summary, state)
    assert res.method is SelectionMethod.THRESHOLD
    npt.assert_array_equal(res.selected, [True, True, False, False, False, False])
    assert res.chosen_level in LEVEL_GRID


def test_threshold_rule_matches_quantile_oracle():
    task, hyper, state, summary = fitted(seed=5)
    res = threshold_select(task, hyper, summary, state)
    kappa = kappa_statistic(summary)
    cut = normal_quantile_oracle(res.chosen_level)
    npt.assert_array_equal(res.selected, kappa > cut)


def test_threshold_trace_covers_grid_and_chooses_argmax():
    task, hyper, state, summary = fitted(seed=2)
    res = threshold_select(task, hyper, summary, state)
    levels = [lv for lv, _ in res.score_trace]
    scores = [sc for _, sc in res.score_trace]
    assert tuple(levels) == LEVEL_GRID
    best = int(np.argmax(scores))
    assert res.chosen_level == levels[best]
    assert scores[best] == max(scores)


def test_threshold_scores_are_refit_bounds():
    task, hyper, state, summary = fitted(seed=3)
    res = threshold_select(task, hyper, summary, state)
    kappa = kappa_statistic(summary)
    for gamma, score in res.score_trace[:4] + res.score_trace[-4:]:
        sel = kappa > normal_quantile_oracle(gamma)
        if not sel.any():
            expect = empty_model_elbo(task.y, hyper)
        else:
            sub = RegressionTask(index=0, y=task.y, x=task.x[:, sel],
                                 groups=task.groups[sel])
            expect = fit_single(sub, hyper)[0].elbo
        npt.assert_allclose(score, expect, rtol=1e-10)


def test_threshold_identical_survivors_share_scores():
    task, hyper, state, summary = fitted(seed=4)
    res = threshold_select(task, hyper, summary, state)
    kappa = kappa_statistic(summary)
    by_set = {}
    for gamma, score in res.score_trace:
        key = tuple(np.flatnonzero(kappa > normal_quantile_oracle(gamma)))
        by_set.setdefault(key, set()).add(score)
    for key, scores in by_set.items():
        assert len(scores) == 1, f"survivor set {key} scored inconsistently"


def test_threshold_survivors_nest_with_level():
    _, _, _, summary = fitted(seed=6)
    kappa = kappa_statistic(summary)
    prev = None
    for gamma in LEVEL_GRID:
        sel = set(np.flatnonzero(kappa > normal_quantile_oracle(gamma)))
        if prev is not None:
            assert sel <= prev
        prev = sel


def test_threshold_mostly_empty_on_pure_noise():
    empties = 0
    for seed in range(10):
        task, hyper, state, summary = fitted(seed=100 + seed,
                                             beta=(0, 0, 0, 0, 0, 0),
                                             noise=1.0)
        res = threshold_select(task, hyper, summary, state)
        empties += int(res.selected.sum() == 0)
    assert empties >= 8


# ------------------------------------------------------- lasso machinery

def test_soft_threshold_values():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-3.0, 1.0) == -2.0
    assert soft_threshold(0.5, 1.0) == 0.0
    assert soft_threshold(-0.5, 1.0) == 0.0


def test_lasso_single_column_closed_form():
    # theta(lam) = soft(2 x'r/n, lam) * n / (2 ||x||^2)
    n = 4
    x = np.array([[1.0], [0.0], [0.0], [0.0]])
    r = np.array([3.0, 1.0, -1.0, 2.0])
    lambdas = np.array([2.0, 1.5, 1.0, 0.1, 0.0])
    out = lasso_grid(x, r, lambdas)
    rho = 2.0 * 3.0 / n
    expect = [soft_threshold(rho, lam) / (2.0 / n) for lam in lambdas]
    npt.assert_allclose(out[:, 0], expect, atol=1e-12)


def test_lasso_orthogonal_design_componentwise():
    n = 6
    x = np.zeros((n, 2))
    x[0, 0] = 2.0       # column norms 4 and 1
    x[1, 1] = 1.0
    r = np.array([4.0, -3.0, 0.0, 0.0, 0.0, 0.0])
    lambdas = np.array([1.0, 0.5, 0.01])
    out = lasso_grid(x, r, lambdas)
    for li, lam in enumerate(lambdas):
        for j in range(2):
            colsq = 2.0 * np.sum(x[:, j] ** 2) / n
            rho = 2.0 * float(x[:, j] @ r) / n
            npt.assert_allclose(out[li, j], soft_threshold(rho, lam) / colsq,
                                atol=1e-12)


def test_lasso_beats_grid_search_on_correlated_pair():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((30, 2))
    x[:, 1] = 0.7 * x[:, 0] + 0.3 * x[:, 1]
    r = x @ np.array([1.0, -0.5]) + 0.1 * rng.standard_normal(30)
    n = 30
    for lam in (0.5, 0.1, 0.02):
        sol = lasso_grid(x, r, np.array([lam]))[0]
        obj_sol = float((r - x @ sol) @ (r - x @ sol)) / n \
            + lam * float(np.sum(np.abs(sol)))
        grid = np.linspace(-2.0, 2.0, 161)
        best = np.inf
        for t0 in grid:
            resid0 = r - x[:, 0] * t0
            vals = resid0[:, None] - np.outer(x[:, 1], grid)
            objs = np.sum(vals * vals, axis=0) / n \
                + lam * (abs(t0) + np.abs(grid))
            best = min(best, float(objs.min()))
        assert obj_sol <= best + 1e-8


def test_dss_objective_manual():
    x = np.array([[1.0, 0.0], [0.0, 2.0]])
    beta_bar = np.array([1.0, 0.5])
    gamma = np.array([0.5, 0.0])
    # fit = (1, 1); x@gamma = (0.5, 0); diff = (0.5, 1); ||diff||^2/n = 0.625
    # penalty = |0.5|/1 + 0/0.5 = 0.5, lam = 2 -> total 1.625
    npt.assert_allclose(dss_objective(x, beta_bar, gamma, 2.0), 1.625)


# ------------------------------------------------------- DSS path

def test_dss_path_endpoints():
    task = make_task(n=50, s=4, beta=(1.5, -1.0, 0.4, 0.0), noise=0.2, seed=9)
    beta_bar = np.linalg.lstsq(task.x, task.y, rcond=None)[0]
    path = dss_path(task, beta_bar)
    assert path.lambdas.shape == (N_LAMBDA,)
    assert np.all(np.diff(path.lambdas) < 0)
    # largest penalty kills every coefficient...
    npt.assert_array_equal(path.coefficients[0], np.zeros(4))
    # ...the smallest one reproduces the substantial components (a near-zero
    # component keeps a huge adaptive weight and may stay thresholded)
    npt.assert_allclose(path.coefficients[-1][:3], beta_bar[:3], atol=5e-3)
    npt.assert_allclose(path.coefficients[-1], beta_bar, atol=1e-2)


def test_dss_path_pins_zero_posterior_means():
    task = make_task(n=40, s=4, beta=(2.0, 0, 0, 0), noise=0.3, seed=10)
    beta_bar = np.array([1.8, 0.0, 0.0, 0.2])
    path = dss_path(task, beta_bar)
    npt.assert_array_equal(path.coefficients[:, 1], 0.0)
    npt.assert_array_equal(path.coefficients[:, 2], 0.0)
    assert np.any(path.coefficients[:, 3] != 0.0)


def test_dss_path_all_zero_posterior():
    task = make_task(n=20, s=3, beta=(0, 0, 0), seed=11)
    path = dss_path(task, np.zeros(3))
    npt.assert_array_equal(path.coefficients, np.zeros((N_LAMBDA, 3)))


def test_dss_path_honors_explicit_grid():
    task = make_task(n=30, s=3, beta=(1.0, 0, 0), seed=12)
    lams = np.array([0.9, 0.3, 0.05])
    path = dss_path(task, np.array([1.0, 0.1, 0.0]), lambdas=lams)
    npt.assert_array_equal(path.lambdas, lams)
    assert path.coefficients.shape == (3, 3)


# ------------------------------------------------------- DSS selection

def test_dss_select_validation():
    hyper = vague_hyper()
    small = make_task(n=MIN_ROWS_FOR_CV - 1, s=3, beta=(1, 0, 0), seed=13)
    with pytest.raises(ValueError, match="at least"):
        dss_select(small, hyper, np.ones(3))
    task = make_task(n=20, s=3, beta=(1, 0, 0), seed=13)
    with pytest.raises(ValueError, match="folds"):
        dss_select(task, hyper, np.ones(3), folds=1)
    with pytest.raises(ValueError, match="more folds than rows"):
        dss_select(task, hyper, np.ones(3), folds=21)


def test_dss_select_recovers_strong_signal():
    task = make_task(seed=14)
    hyper = vague_hyper()
    state, summary, _ = fit_single(task, hyper)
    res = dss_select(task, hyper, state.beta_mean)
    assert res.method is SelectionMethod.DSS
    npt.assert_array_equal(res.selected, [True, True, False, False, False, False])
    assert res.chosen_level > 0.0


def test_dss_one_se_rule_prefers_sparser_models():
    task = make_task(seed=15)
    hyper = vague_hyper()
    state, _, _ = fit_single(task, hyper)
    res = dss_select(task, hyper, state.beta_mean)
    lambdas = np.array([lv for lv, _ in res.score_trace])
    scores = np.array([sc for _, sc in res.score_trace])
    assert len(lambdas) == N_LAMBDA
    # the chosen penalty is never below the CV minimizer (grid is decreasing)
    assert res.chosen_level >= lambdas[int(np.argmin(scores))]


def test_threshold_and_dss_agree_on_clear_signals():
    agree = 0
    hyper = vague_hyper()
    for seed in range(10):
        task = make_task(n=80, s=6, beta=(3.0, -3.0, 0, 0, 0, 0),
                         noise=0.2, seed=200 + seed)
        state, summary, _ = fit_single(task, hyper)
        thr = threshold_select(task, hyper, summary, state)
        dss = dss_select(task, hyper, state.beta_mean)
        agree += int(np.array_equal(thr.selected, dss.selected))
    assert agree >= 8
