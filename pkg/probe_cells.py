"""Probe: per-cell err0/err1 orderings for all methods, spec generator."""
import sys
import time

import numpy as np

from shrinkhs.netsim import (
    PrecisionSpec, Topology, run_replicate,
)

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 1
master = 99

for topo in (Topology.BAND, Topology.CLUSTER, Topology.HUB):
    spec = PrecisionSpec(p=100, topology=topo, seed=0)
    from shrinkhs.netsim import generate_precision
    tr = generate_precision(PrecisionSpec(p=100, topology=topo, seed=12345))
    mags = np.abs(tr.beta[tr.beta != 0])
    print(f"{topo.value}: |beta| range [{mags.min():.3f}, {mags.max():.3f}] "
          f"mean {mags.mean():.3f}  ||b1||_1 {np.abs(tr.beta).sum():.1f}")

for topo in (Topology.BAND, Topology.CLUSTER, Topology.HUB):
    for n in (10, 100):
        rows = {}
        for method in ("pinc", "pinc2", "ridge"):
            e0s, e1s, ts = [], [], []
            for rep in range(reps):
                spec = PrecisionSpec(p=100, topology=topo, seed=0)
                t0 = time.perf_counter()
                res = run_replicate(spec, n, method, rep, master)[0]
                ts.append(time.perf_counter() - t0)
                e0s.append(res.err0)
                e1s.append(res.err1)
            rows[method] = (float(np.mean(e0s)), float(np.mean(e1s)), sum(ts))
        re0, re1, _ = rows["ridge"]
        for m in ("pinc", "pinc2"):
            e0, e1, tt = rows[m]
            f0 = "OK " if e0 < re0 else "LOSE"
            f1 = "OK " if e1 < re1 else "LOSE"
            print(f"{topo.value:8s} n={n:3d} {m:6s} err0={e0:8.3f}({f0}) "
                  f"err1={e1:8.3f}({f1})  [ridge {re0:8.3f}/{re1:7.3f}] {tt:5.1f}s")
