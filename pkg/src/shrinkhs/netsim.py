"""Gaussian-graphical simulation workflow and its metrics.

A ground-truth precision matrix with a known sparsity pattern is drawn, data
are sampled from the implied Gaussian, and the network is re-estimated by
regressing each variable on all others. Includes the l1-error and ROC metrics
used to score recovered networks, and a replicate harness that emits one CSV
row per (replicate, method) cell.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import solve_triangular

from .model import Hyperparams, NetworkEstimate, RegressionTask, Variant
from .vb import FitOptions
from . import eb
from .selection import symmetrize_kappa

MIN_EIGENVALUE = 0.05
DRAW_LO, DRAW_HI = 0.3, 0.8     # raw off-diagonal magnitudes before rescaling
DIAG_SLACK = 0.1                # diagonal-dominance margin
_MAX_DRAW_ATTEMPTS = 200


class Topology(str, Enum):
    BAND = "band"
    CLUSTER = "cluster"
    HUB = "hub"


@dataclass
class PrecisionSpec:
    p: int
    topology: Topology
    bandwidth: int = 1          # BAND: edge iff 0 < |i-j| <= bandwidth
    clusters: int = 5           # CLUSTER: number of cliques
    hubs: int | None = None     # HUB: number of star blocks (default p // 10)
    seed: int = 0

    def __post_init__(self):
        self.topology = Topology(self.topology)
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if self.topology is Topology.BAND and not (1 <= self.bandwidth < self.p):
            raise ValueError("bandwidth must be in [1, p)")
        if self.topology is Topology.CLUSTER and not (1 <= self.clusters <= self.p // 2):
            raise ValueError("clusters must be in [1, p/2]")
        if self.topology is Topology.HUB:
            if self.hubs is None:
                self.hubs = max(1, self.p // 10)
            if not (1 <= self.hubs <= self.p // 2):
                raise ValueError("hubs must be in [1, p/2]")


@dataclass
class GroundTruth:
    omega: np.ndarray           # (p, p) precision, unit diagonal
    adjacency: np.ndarray       # boolean (p, p), zero diagonal
    beta: np.ndarray            # (p, p-1) true coefficients, task layout

    @property
    def p(self) -> int:
        return self.omega.shape[0]


def _support(spec: PrecisionSpec) -> np.ndarray:
    p = spec.p
    adj = np.zeros((p, p), dtype=bool)
    if spec.topology is Topology.BAND:
        for off in range(1, spec.bandwidth + 1):
            idx = np.arange(p - off)
            adj[idx, idx + off] = True
    elif spec.topology is Topology.CLUSTER:
        for block in np.array_split(np.arange(p), spec.clusters):
            for ii, i in enumerate(block):
                adj[i, block[ii + 1:]] = True
    else:
        for block in np.array_split(np.arange(p), spec.hubs):
            hub = block[0]
            adj[hub, block[1:]] = True
    return adj | adj.T


def generate_precision(spec: PrecisionSpec) -> GroundTruth:
    """Draw a unit-diagonal precision matrix with the topology's exact support.

    Raw off-diagonal entries are uniform with magnitudes in [DRAW_LO, DRAW_HI]
    and random signs; the diagonal is set to the absolute row sum plus
    DIAG_SLACK, making the matrix strictly diagonally dominant and hence
    positive definite, and the result is rescaled to unit diagonal. The row
    sum grows with node degree while individual entries do not, so high-degree
    nodes (cliques, hubs) carry weaker partial correlations than chain nodes.
    A draw is retried if the rescaled matrix's smallest eigenvalue falls below
    MIN_EIGENVALUE.
    """
    rng = np.random.default_rng(spec.seed)
    adj = _support(spec)
    p = spec.p
    iu = np.triu_indices(p, 1)
    on_support = adj[iu]
    n_edges = int(on_support.sum())
    for _ in range(_MAX_DRAW_ATTEMPTS):
        vals = np.zeros(len(iu[0]))
        vals[on_support] = (rng.uniform(DRAW_LO, DRAW_HI, size=n_edges)
                            * rng.choice([-1.0, 1.0], size=n_edges))
        omega = np.zeros((p, p))
        omega[iu] = vals
        omega += omega.T
        np.fill_diagonal(omega, np.abs(omega).sum(axis=1) + DIAG_SLACK)
        d = 1.0 / np.sqrt(np.diag(omega))
        omega *= d[:, None] * d[None, :]
        if float(np.linalg.eigvalsh(omega)[0]) >= MIN_EIGENVALUE:
            return _finish(omega, adj)
    raise RuntimeError("could not draw a feasible precision matrix")


def _finish(omega: np.ndarray, adj: np.ndarray) -> GroundTruth:
    got = (omega != 0.0) & ~np.eye(omega.shape[0], dtype=bool)
    if not np.array_equal(got, adj):
        raise RuntimeError("support mismatch in generated precision")
    return GroundTruth(omega=omega, adjacency=adj,
                       beta=coefficients_from_precision(omega))


def sample_gaussian(truth: GroundTruth, n: int, seed) -> np.ndarray:
    """n i.i.d. rows from the zero-mean Gaussian with precision truth.omega."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(truth.omega)
    z = rng.standard_normal((n, truth.p))
    # solve L' x = z row-wise: cov(x) = (L L')^{-1} = omega^{-1}
    return solve_triangular(chol, z.T, trans="T", lower=True).T


def build_regression_system(data: np.ndarray,
                            prior_adjacency: np.ndarray | None = None) -> list[RegressionTask]:
    """One regression task per column: that column against all the others.

    With a prior adjacency, each task gets two groups — label 1 for partners
    the prior calls unconnected, label 2 for prior edges; without one, a
    single group.
    """
    n, p = data.shape
    if p < 2:
        raise ValueError("need at least two columns")
    tasks = []
    for i in range(p):
        cols = np.r_[0:i, i + 1:p]
        if prior_adjacency is None:
            groups = np.ones(p - 1, dtype=int)
        else:
            groups = np.where(prior_adjacency[i, cols], 2, 1).astype(int)
        tasks.append(RegressionTask(index=i, y=data[:, i].copy(),
                                    x=data[:, cols].copy(), groups=groups))
    return tasks


def coefficients_from_precision(omega: np.ndarray) -> np.ndarray:
    """True regression coefficients -omega[i,t]/omega[i,i], task layout."""
    p = omega.shape[0]
    out = np.empty((p, p - 1))
    for i in range(p):
        cols = np.r_[0:i, i + 1:p]
        out[i] = -omega[i, cols] / omega[i, i]
    return out


def l1_errors(estimates: np.ndarray, truth: GroundTruth) -> tuple[float, float]:
    """(err0, err1): absolute error mass on true zeros and on true edges.

    Both directed copies of every pair count, matching the p regressions'
    full coefficient layout.
    """
    estimates = np.asarray(estimates, dtype=float)
    if estimates.shape != truth.beta.shape:
        raise ValueError(
            f"estimate layout {estimates.shape} does not match truth {truth.beta.shape}")
    p = truth.p
    nonzero = np.empty((p, p - 1), dtype=bool)
    for i in range(p):
        cols = np.r_[0:i, i + 1:p]
        nonzero[i] = truth.adjacency[i, cols]
    diff = estimates - truth.beta
    err0 = float(np.sum(np.abs(estimates[~nonzero])))
    err1 = float(np.sum(np.abs(diff[nonzero])))
    return err0, err1


def roc_curve(strength: np.ndarray, adjacency: np.ndarray):
    """Threshold sweep on unordered pairs: ((FPR, TPR) points, trapezoid AUC).

    AUC is NaN when the truth has no edges or nothing but edges.
    """
    p = strength.shape[0]
    if not np.allclose(strength, strength.T):
        raise ValueError("strength matrix must be symmetric")
    iu = np.triu_indices(p, 1)
    scores = strength[iu]
    labels = adjacency[iu]
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    order = np.argsort(-scores, kind="stable")
    scores, labels = scores[order], labels[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    k = 0
    while k < len(scores):
        thr = scores[k]
        while k < len(scores) and scores[k] == thr:
            if labels[k]:
                tp += 1
            else:
                fp += 1
            k += 1
        points.append((fp / n_neg if n_neg else np.nan,
                       tp / n_pos if n_pos else np.nan))
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    pts = np.array(points, dtype=float)
    if n_pos == 0 or n_neg == 0:
        return pts, float("nan")
    auc = float(np.trapezoid(pts[:, 1], pts[:, 0]))
    return pts, auc


def assemble_network(summaries, selections=None) -> NetworkEstimate:
    """Directed per-task statistics -> one undirected network estimate.

    Strength is the symmetrized kappa matrix; edges are pairs selected in
    either direction (empty when no selections are given).
    """
    p = len(summaries)
    kmat = np.zeros((p, p))
    for i, summ in enumerate(summaries):
        cols = np.r_[0:i, i + 1:p]
        kappa = np.where(np.isfinite(summ.kappa), summ.kappa, 0.0)
        kmat[i, cols] = kappa
    strength = symmetrize_kappa(kmat)
    edges = set()
    if selections is not None:
        for i, res in enumerate(selections):
            sel = res.selected if hasattr(res, "selected") else np.asarray(res, dtype=bool)
            cols = np.r_[0:i, i + 1:p]
            for t in cols[sel]:
                edges.add((min(i, int(t)), max(i, int(t))))
    return NetworkEstimate(p=p, strength=strength, edges=edges)


def corrupt_adjacency(adjacency: np.ndarray, fraction: float, seed) -> np.ndarray:
    """Swap a random fraction of the edges with equally many non-edges."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    rng = np.random.default_rng(seed)
    p = adjacency.shape[0]
    iu = np.triu_indices(p, 1)
    vals = adjacency[iu].copy()
    ones = np.flatnonzero(vals)
    zeros = np.flatnonzero(~vals)
    k = min(int(round(fraction * len(ones))), len(ones), len(zeros))
    if k > 0:
        drop = rng.choice(ones, size=k, replace=False)
        add = rng.choice(zeros, size=k, replace=False)
        vals[drop] = False
        vals[add] = True
    out = np.zeros_like(adjacency)
    out[iu] = vals
    return out | out.T


# ---- replicate harness -----------------------------------------------------

@dataclass
class ReplicateResult:
    topology: str
    n: int
    p: int
    method: str
    prior: str
    replicate: int
    err0: float
    err1: float
    auc: float
    seconds: float

    def csv_row(self) -> list:
        return [self.topology, self.n, self.p, self.method, self.prior,
                self.replicate, self.err0, self.err1, self.auc, self.seconds]


CSV_HEADER = ["topology", "n", "p", "method", "prior", "replicate",
              "err0", "err1", "auc", "seconds"]

METHODS = ("pinc", "pinc2", "ridge")
PRIORS = ("none", "true", "corrupted")


def _harness_hyper(method: str, n_groups: int) -> tuple[Hyperparams, bool]:
    vague = 1e-3
    if method == "pinc2":
        # The pooled scale starts at the same small value as the per-task
        # scale initializers. A diffuse start is dangerous when s_i >> n: the
        # fit interpolates, the noise estimate collapses, and the pooled
        # update can never shrink its way back out.
        hyper = Hyperparams(a=np.full(n_groups, vague), b=np.full(n_groups, vague),
                            c=vague, d=vague, variant=Variant.PINC2,
                            pooled_tau_sq=np.full(n_groups, vague))
        return hyper, True
    hyper = Hyperparams(a=np.full(n_groups, vague), b=np.full(n_groups, vague),
                        c=vague, d=vague, variant=Variant.PINC)
    return hyper, method != "ridge"


def replicate_seed(master_seed: int, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(replicate,))


def run_replicate(spec: PrecisionSpec, n: int, method: str, replicate: int,
                  master_seed: int, prior: str = "none",
                  prior_corruption: float = 0.5,
                  opts: FitOptions | None = None):
    """One simulation cell: draw truth + data, fit, score.

    Returns (ReplicateResult, states, summaries, hyper, truth).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if prior not in PRIORS:
        raise ValueError(f"unknown prior setting {prior!r}")
    opts = opts or FitOptions(tol=1e-3, max_iter=200)
    ss = replicate_seed(master_seed, replicate)
    seeds = ss.spawn(3)
    spec_rep = PrecisionSpec(p=spec.p, topology=spec.topology,
                             bandwidth=spec.bandwidth, clusters=spec.clusters,
                             hubs=spec.hubs, seed=seeds[0])
    truth = generate_precision(spec_rep)
    data = sample_gaussian(truth, n, seeds[1])
    if prior == "none":
        prior_adj = None
    elif prior == "true":
        prior_adj = truth.adjacency
    else:
        prior_adj = corrupt_adjacency(truth.adjacency, prior_corruption, seeds[2])
    tasks = build_regression_system(data, prior_adj)
    hyper0, local_scales = _harness_hyper(method, 1 if prior_adj is None else 2)
    t0 = time.perf_counter()
    states, summaries, hyper, trace = eb.run(tasks, hyper0, opts,
                                             update_local_scales=local_scales)
    seconds = time.perf_counter() - t0
    estimates = np.stack([st.beta_mean for st in states])
    err0, err1 = l1_errors(estimates, truth)
    net = assemble_network(summaries)
    _, auc = roc_curve(net.strength, truth.adjacency)
    result = ReplicateResult(topology=spec.topology.value, n=n, p=spec.p,
                             method=method, prior=prior, replicate=replicate,
                             err0=err0, err1=err1, auc=auc, seconds=seconds)
    return result, states, summaries, hyper, truth


def run_simulation(spec: PrecisionSpec, n: int, methods, replicates: int,
                   master_seed: int, prior: str = "none",
                   prior_corruption: float = 0.5,
                   opts: FitOptions | None = None,
                   threads: int = 1) -> list[ReplicateResult]:
    """All (replicate, method) cells for one topology/n; deterministic order."""
    jobs = [(rep, method) for rep in range(replicates) for method in methods]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_replicate_row, spec, n, method, rep,
                                   master_seed, prior, prior_corruption, opts)
                       for rep, method in jobs]
            rows = [f.result() for f in futures]
    else:
        rows = [_replicate_row(spec, n, method, rep, master_seed, prior,
                               prior_corruption, opts)
                for rep, method in jobs]
    return rows


def _replicate_row(spec, n, method, rep, master_seed, prior, prior_corruption, opts):
    result, *_ = run_replicate(spec, n, method, rep, master_seed, prior,
                               prior_corruption, opts)
    return result
