"""Command-line surface: fitting, network reconstruction, simulation, benchmarks.

Subcommands
-----------
fit        Grouped multi-task fit from response/design CSVs.
network    Fit every column of a data matrix against the rest and select edges.
simulate   Topology-based data generation, fits, and l1/ROC metrics.
select     Grouped fit followed by per-task variable selection.
bench      Variational fit versus the reference sampler on seeded tasks.

Input CSVs are rectangular and numeric with a header row. In the grouped
subcommands the design file's columns are consumed left to right, one block
per response column; an optional group file gives each task's labels as one
(possibly ragged) row, whose length sets that task's block width. In network
mode the prior file is a 0/1 adjacency matrix instead.

A plain-text config file (``--config``, ``key=value`` lines, ``#`` comments)
supplies defaults; command-line flags override it. Every run echoes its full
effective configuration into ``summary.json``. Exit status: 0 on success, 2
for usage errors, 3 for unreadable or malformed inputs/outputs, 4 when a fit
ran out of iterations without converging.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import eb, gibbs, vb
from .model import (Hyperparams, RegressionTask, SCHEMA_VERSION,
                    TaskValidationError, Variant)
from .netsim import (PRIORS, PrecisionSpec, Topology, build_regression_system,
                     assemble_network, roc_curve, run_replicate, CSV_HEADER)
from .selection import dss_select, threshold_select
from .vb import FitOptions

_VAGUE = 1e-3


class DataError(Exception):
    """Unreadable or structurally invalid input/output data."""


class _UsageError(DataError):
    """Bad configuration (flags or config file), distinct from bad data."""


_COMMON = {
    "variant": "pinc",
    "selector": "none",
    "tol": 1e-3,
    "max_iter": 1000,
    "seed": 0,
    "threads": None,
    "out": ".",
    "standardize": False,
}
_DEFAULTS = {
    "fit": {**_COMMON, "response": None, "design": None, "prior": None},
    "network": {**_COMMON, "selector": "threshold", "data": None, "prior": None},
    "simulate": {**_COMMON, "variant": "all", "topology": "band", "n": 10,
                 "p": 100, "reps": 20, "prior": "none", "prior_corruption": 0.5,
                 "bandwidth": 1, "clusters": 5, "hubs": None},
    "select": {**_COMMON, "selector": "threshold", "response": None,
               "design": None, "prior": None},
    "bench": {**_COMMON, "n": 30, "p": 10, "reps": 20, "n_iter": 40_000,
              "n_burnin": 20_000},
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shrinkhs",
        description="Sparse multi-task regression with grouped global-local "
                    "shrinkage: fits, networks, simulations, benchmarks.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value file of option defaults")
        sp.add_argument("--variant", choices=["pinc", "pinc2", "all"])
        sp.add_argument("--selector", choices=["threshold", "dss", "none"])
        sp.add_argument("--tol", type=float)
        sp.add_argument("--max-iter", type=int, dest="max_iter")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--standardize", action="store_true",
                        help="center and scale every loaded column")

    sp = sub.add_parser("fit", help="grouped multi-task fit from CSVs",
                        argument_default=argparse.SUPPRESS)
    common(sp)
    sp.add_argument("--response", help="n x T response matrix CSV")
    sp.add_argument("--design", help="design matrix CSV, one block per task")
    sp.add_argument("--prior", help="per-task group-label rows (ragged CSV)")

    sp = sub.add_parser("network", help="column-on-the-rest network fit",
                        argument_default=argparse.SUPPRESS)
    common(sp)
    sp.add_argument("--data", help="n x p data matrix CSV")
    sp.add_argument("--prior", help="p x p 0/1 adjacency CSV")

    sp = sub.add_parser("simulate", help="generate, fit, and score replicates",
                        argument_default=argparse.SUPPRESS)
    common(sp)
    sp.add_argument("--topology", choices=[t.value for t in Topology])
    sp.add_argument("--n", type=int)
    sp.add_argument("--p", type=int)
    sp.add_argument("--reps", type=int)
    sp.add_argument("--prior", choices=list(PRIORS))
    sp.add_argument("--prior-corruption", type=float, dest="prior_corruption")
    sp.add_argument("--bandwidth", type=int)
    sp.add_argument("--clusters", type=int)
    sp.add_argument("--hubs", type=int)

    sp = sub.add_parser("select", help="grouped fit plus variable selection",
                        argument_default=argparse.SUPPRESS)
    common(sp)
    sp.add_argument("--response", help="n x T response matrix CSV")
    sp.add_argument("--design", help="design matrix CSV, one block per task")
    sp.add_argument("--prior", help="per-task group-label rows (ragged CSV)")

    sp = sub.add_parser("bench", help="variational fit versus the sampler",
                        argument_default=argparse.SUPPRESS)
    common(sp)
    sp.add_argument("--n", type=int, help="rows per task")
    sp.add_argument("--p", type=int, help="coefficients per task")
    sp.add_argument("--reps", type=int, help="number of tasks")
    sp.add_argument("--n-iter", type=int, dest="n_iter")
    sp.add_argument("--n-burnin", type=int, dest="n_burnin")
    return parser


def _load_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise DataError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{ln}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _coerce(key: str, value, template) -> object:
    if not isinstance(value, str):
        return value
    if isinstance(template, bool) or key == "standardize":
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise DataError(f"config value for {key} is not a boolean: {value}")
    if isinstance(template, int) and not isinstance(template, bool):
        return int(value)
    if isinstance(template, float):
        return float(value)
    if template is None and key in ("threads", "hubs", "n", "p", "reps"):
        return int(value)
    return value


def _effective_config(sub: str, provided: dict) -> dict:
    base = dict(_DEFAULTS[sub])
    config_path = provided.pop("config", None)
    if config_path:
        for key, value in _load_config_file(config_path).items():
            if key == "config":
                continue
            if key not in base:
                raise DataError(f"unknown config key for {sub}: {key}")
            base[key] = _coerce(key, value, _DEFAULTS[sub][key])
    for key, value in provided.items():
        base[key] = _coerce(key, value, _DEFAULTS[sub].get(key))
    if base.get("threads") is None:
        env = os.environ.get("SHRINKHS_THREADS")
        base["threads"] = int(env) if env else (os.cpu_count() or 1)
    base["subcommand"] = sub
    return base


def _read_matrix(path: str, what: str) -> np.ndarray:
    """Rectangular numeric CSV with one header row."""
    if path is None:
        raise DataError(f"missing required input: {what}")
    if not os.path.exists(path):
        raise DataError(f"{what} file not found: {path}")
    rows = _read_rows(path, what)
    width = len(rows[0])
    for idx, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {idx + 2} has {len(row)} cells, "
                            f"expected {width}")
    return np.array(rows, dtype=float)


def _read_rows(path: str, what: str) -> list:
    """CSV body as numeric rows, ragged allowed; header row skipped."""
    out = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2:
        raise DataError(f"{path}: {what} needs a header row and data")
    for ln, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        row = []
        for col, cell in enumerate(line.split(","), 1):
            try:
                row.append(float(cell))
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric cell at row {ln}, column {col}: "
                    f"{cell.strip()!r}") from None
        out.append(row)
    if not out:
        raise DataError(f"{path}: {what} has no data rows")
    return out


def _standardize(mat: np.ndarray, path: str) -> np.ndarray:
    sd = mat.std(axis=0)
    if np.any(sd == 0):
        bad = int(np.flatnonzero(sd == 0)[0]) + 1
        raise DataError(f"{path}: column {bad} is constant; cannot standardize")
    return (mat - mat.mean(axis=0)) / sd


def load_tasks(response_csv: str, design_csv: str, prior_csv: str | None = None,
               standardize: bool = False) -> list[RegressionTask]:
    """Grouped-mode ingestion: one task per response column.

    The design matrix is split into consecutive column blocks. With a prior
    file, row t's length is task t's block width and its entries are the group
    labels; otherwise every task spans the full design under a single group.
    """
    resp = _read_matrix(response_csv, "response")
    design = _read_matrix(design_csv, "design")
    if resp.shape[0] != design.shape[0]:
        raise DataError(f"response has {resp.shape[0]} rows, design has "
                        f"{design.shape[0]}")
    if standardize:
        resp = _standardize(resp, response_csv)
        design = _standardize(design, design_csv)
    n_tasks = resp.shape[1]
    if prior_csv is not None:
        group_rows = _read_rows(prior_csv, "group labels")
        if len(group_rows) != n_tasks:
            raise DataError(f"{prior_csv}: {len(group_rows)} group rows for "
                            f"{n_tasks} response columns")
        widths = [len(r) for r in group_rows]
    else:
        group_rows = None
        if design.shape[1] % n_tasks:
            raise DataError("design width is not a multiple of the task count "
                            "and no group file was given")
        widths = [design.shape[1] // n_tasks] * n_tasks
    if sum(widths) != design.shape[1]:
        raise DataError(f"group rows cover {sum(widths)} design columns, "
                        f"design has {design.shape[1]}")
    tasks = []
    start = 0
    for t in range(n_tasks):
        stop = start + widths[t]
        if group_rows is None:
            groups = np.ones(widths[t], dtype=int)
        else:
            raw = np.array(group_rows[t])
            groups = raw.astype(int)
            if np.any(groups != raw) or np.any(groups < 1):
                raise DataError(f"{prior_csv}: row {t + 2} must hold integer "
                                f"labels >= 1")
        tasks.append(RegressionTask(index=t, y=resp[:, t].copy(),
                                    x=design[:, start:stop].copy(), groups=groups))
        start = stop
    return tasks


def load_network(data_csv: str, prior_csv: str | None = None,
                 standardize: bool = False):
    """Network-mode ingestion: data matrix plus optional adjacency prior."""
    data = _read_matrix(data_csv, "data")
    if standardize:
        data = _standardize(data, data_csv)
    adjacency = None
    if prior_csv is not None:
        adjacency = _read_matrix(prior_csv, "adjacency prior")
        p = data.shape[1]
        if adjacency.shape != (p, p):
            raise DataError(f"{prior_csv}: adjacency is {adjacency.shape}, "
                            f"data has {p} columns")
        if not np.isin(adjacency, (0.0, 1.0)).all():
            raise DataError(f"{prior_csv}: adjacency entries must be 0 or 1")
        adjacency = adjacency.astype(bool)
    return data, adjacency


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    return str(value)


def _write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Topology):
        return obj.value
    return obj


def _json_render(obj, pad: str) -> str:
    """JSON text with every finite float at 17 significant digits."""
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        inner = ",\n".join(
            f'{pad} {json.dumps(str(k))}: {_json_render(v, pad + " ")}'
            for k, v in sorted(obj.items()))
        return "{\n" + inner + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        inner = ",\n".join(f"{pad} {_json_render(v, pad + ' ')}" for v in obj)
        return "[\n" + inner + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, float):
        return f"{obj:.17g}" if np.isfinite(obj) else "null"
    if obj is None:
        return "null"
    if isinstance(obj, int):
        return str(obj)
    return json.dumps(obj)


def _write_summary(out_dir: str, payload: dict) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **_jsonable(payload)}
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        fh.write(_json_render(payload, "") + "\n")


def _hyper_json(hyper: Hyperparams) -> dict:
    return {"a": hyper.a, "b": hyper.b, "c": hyper.c, "d": hyper.d,
            "variant": hyper.variant.value,
            "pooled_tau_sq": hyper.pooled_tau_sq}


def _initial_hyper(variant: str, n_groups: int) -> Hyperparams:
    kind = Variant(variant)
    pooled = np.full(n_groups, _VAGUE) if kind is Variant.PINC2 else None
    return Hyperparams(a=np.full(n_groups, _VAGUE), b=np.full(n_groups, _VAGUE),
                       c=_VAGUE, d=_VAGUE, variant=kind, pooled_tau_sq=pooled)


def _write_coefficients(out_dir: str, tasks, states, summaries,
                        selections=None) -> None:
    rows = []
    for i, (task, state, summ) in enumerate(zip(tasks, states, summaries)):
        sel = selections[i].selected if selections is not None else None
        for t in range(task.s):
            rows.append([task.index, t, int(task.groups[t]),
                         state.beta_mean[t], summ.sds[t], summ.kappa[t],
                         bool(sel[t]) if sel is not None else False])
    _write_csv(os.path.join(out_dir, "coefficients.csv"),
               ["task", "index", "group", "mean", "sd", "kappa", "selected"],
               rows)


def _select_tasks(tasks, states, summaries, hyper, selector: str, opts):
    if selector == "none":
        return None
    picks = []
    for task, state, summ in zip(tasks, states, summaries):
        if selector == "threshold":
            picks.append(threshold_select(task, hyper, summ, state, opts))
        else:
            picks.append(dss_select(task, hyper, state.beta_mean, opts=opts))
    return picks


def _fit_common(cfg: dict, tasks) -> tuple:
    n_groups = max(int(t.groups.max()) for t in tasks)
    opts = FitOptions(tol=cfg["tol"], max_iter=cfg["max_iter"])
    hyper0 = _initial_hyper(cfg["variant"], n_groups)
    t0 = time.perf_counter()
    states, summaries, hyper, trace = eb.run(tasks, hyper0, opts)
    seconds = time.perf_counter() - t0
    return states, summaries, hyper, trace, seconds, opts


def _cmd_fit(cfg: dict) -> int:
    if cfg["variant"] == "all":
        cfg["variant"] = "pinc"
    tasks = load_tasks(cfg["response"], cfg["design"], cfg["prior"],
                       cfg["standardize"])
    states, summaries, hyper, trace, seconds, opts = _fit_common(cfg, tasks)
    selections = _select_tasks(tasks, states, summaries, hyper,
                               cfg["selector"], opts)
    out = cfg["out"]
    _write_coefficients(out, tasks, states, summaries, selections)
    _write_summary(out, {
        "config": cfg, "hyper": _hyper_json(hyper),
        "eb_iterations": len(trace.sum_elbo), "converged": trace.converged,
        "seconds": seconds,
        "tasks": [{"index": t.index, "elbo": st.elbo, "converged": st.converged}
                  for t, st in zip(tasks, states)]})
    return 0 if trace.converged else 4


def _cmd_network(cfg: dict) -> int:
    if cfg["variant"] == "all":
        cfg["variant"] = "pinc"
    data, adjacency = load_network(cfg["data"], cfg["prior"], cfg["standardize"])
    tasks = build_regression_system(data, adjacency)
    states, summaries, hyper, trace, seconds, opts = _fit_common(cfg, tasks)
    selections = _select_tasks(tasks, states, summaries, hyper,
                               cfg["selector"], opts)
    net = assemble_network(summaries, selections)
    out = cfg["out"]
    _write_coefficients(out, tasks, states, summaries, selections)
    _write_csv(os.path.join(out, "edges.csv"), ["node_a", "node_b", "strength"],
               [[i, j, net.strength[i, j]] for i, j in sorted(net.edges)])
    _write_summary(out, {
        "config": cfg, "hyper": _hyper_json(hyper),
        "eb_iterations": len(trace.sum_elbo), "converged": trace.converged,
        "seconds": seconds, "n_edges": len(net.edges),
        "tasks": [{"index": t.index, "elbo": st.elbo, "converged": st.converged}
                  for t, st in zip(tasks, states)]})
    return 0 if trace.converged else 4


def _cmd_simulate(cfg: dict) -> int:
    methods = ("pinc", "pinc2", "ridge") if cfg["variant"] == "all" \
        else (cfg["variant"],)
    spec = PrecisionSpec(p=cfg["p"], topology=Topology(cfg["topology"]),
                         bandwidth=cfg["bandwidth"], clusters=cfg["clusters"],
                         hubs=cfg["hubs"], seed=0)
    opts = FitOptions(tol=cfg["tol"], max_iter=cfg["max_iter"])
    metric_rows, roc_rows = [], []
    t0 = time.perf_counter()
    for rep in range(cfg["reps"]):
        for method in methods:
            result, states, summaries, hyper, truth = run_replicate(
                spec, cfg["n"], method, rep, cfg["seed"], cfg["prior"],
                cfg["prior_corruption"], opts)
            metric_rows.append(result.csv_row())
            net = assemble_network(summaries)
            points, _ = roc_curve(net.strength, truth.adjacency)
            roc_rows.extend([rep, method, fpr, tpr] for fpr, tpr in points)
    seconds = time.perf_counter() - t0
    out = cfg["out"]
    _write_csv(os.path.join(out, "metrics.csv"), CSV_HEADER, metric_rows)
    _write_csv(os.path.join(out, "roc.csv"),
               ["replicate", "method", "fpr", "tpr"], roc_rows)
    by_method = {m: [r for r in metric_rows if r[3] == m] for m in methods}
    _write_summary(out, {
        "config": cfg, "seconds": seconds,
        "means": {m: {"err0": float(np.mean([r[6] for r in rows])),
                      "err1": float(np.mean([r[7] for r in rows])),
                      "auc": float(np.nanmean([r[8] for r in rows]))}
                  for m, rows in by_method.items()}})
    return 0


def _cmd_select(cfg: dict) -> int:
    if cfg["selector"] == "none":
        raise DataError("select requires --selector threshold or dss")
    return _cmd_fit(cfg)


def _cmd_bench(cfg: dict) -> int:
    if cfg["variant"] == "all":
        cfg["variant"] = "pinc"
    rng = np.random.default_rng(cfg["seed"])
    opts = FitOptions(tol=cfg["tol"], max_iter=cfg["max_iter"])
    mcmc = gibbs.McmcOptions(n_iter=cfg["n_iter"], n_burnin=cfg["n_burnin"],
                             seed=cfg["seed"])
    n, s = cfg["n"], cfg["p"]
    hyper = _initial_hyper(cfg["variant"], 1)
    rows = []
    for rep in range(cfg["reps"]):
        x = rng.standard_normal((n, s))
        beta = np.zeros(s)
        beta[:2] = (1.0, -1.0)
        y = x @ beta + 0.5 * rng.standard_normal(n)
        task = RegressionTask(index=rep, y=y, x=x, groups=np.ones(s, dtype=int))
        t0 = time.perf_counter()
        state, _, _ = vb.fit_single(task, hyper, opts)
        t_vb = time.perf_counter() - t0
        summary = gibbs.gibbs_fit(task, hyper, mcmc)
        diff = float(np.max(np.abs(state.beta_mean - summary.beta_mean)))
        corr = float(np.corrcoef(state.beta_mean, summary.beta_mean)[0, 1])
        rows.append([rep, n, s, t_vb, summary.seconds,
                     summary.seconds / t_vb, diff, corr,
                     float(summary.ess.min())])
    out = cfg["out"]
    _write_csv(os.path.join(out, "bench.csv"),
               ["task", "n", "s", "vb_seconds", "gibbs_seconds", "ratio",
                "max_abs_diff", "corr", "min_ess"], rows)
    _write_summary(out, {
        "config": cfg,
        "max_abs_diff": float(np.max([r[6] for r in rows])),
        "min_corr": float(np.min([r[7] for r in rows])),
        "median_ratio": float(np.median([r[5] for r in rows]))})
    return 0


_RUNNERS = {"fit": _cmd_fit, "network": _cmd_network, "simulate": _cmd_simulate,
            "select": _cmd_select, "bench": _cmd_bench}
_REQUIRED = {"fit": ("response", "design"), "network": ("data",),
             "simulate": (), "select": ("response", "design"), "bench": ()}
# Keys holding input paths, checked for existence right after configuration.
# simulate's --prior is a knowledge-prior mode, not a path.
_PATH_KEYS = {"fit": ("response", "design", "prior"),
              "network": ("data", "prior"),
              "select": ("response", "design", "prior"),
              "simulate": (), "bench": ()}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors / --help
        return exc.code if isinstance(exc.code, int) else 2
    sub = ns.subcommand
    provided = {k: v for k, v in vars(ns).items() if k != "subcommand"}
    try:
        cfg = _effective_config(sub, provided)
        for key in _REQUIRED[sub]:
            if cfg.get(key) is None:
                raise _UsageError(f"{sub} requires --{key}")
    except (DataError, ValueError, OSError) as exc:
        print(f"shrinkhs {sub}: usage error: {exc}", file=sys.stderr)
        return 2
    try:
        for key in _PATH_KEYS[sub]:
            path = cfg.get(key)
            if path is not None and not os.path.exists(path):
                raise DataError(f"{key} file not found: {path}")
        out_dir = cfg["out"]
        if not os.path.isdir(out_dir):
            raise DataError(f"output directory does not exist: {out_dir}")
        if not os.access(out_dir, os.W_OK):
            raise DataError(f"output directory is not writable: {out_dir}")
        return _RUNNERS[sub](cfg)
    except (DataError, TaskValidationError, OSError) as exc:
        print(f"shrinkhs {sub}: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
