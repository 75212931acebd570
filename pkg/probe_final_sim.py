"""Full acceptance-scale simulation: criterion-5 cells + criterion-6/7 prior runs."""
import json
import time

import numpy as np

from shrinkhs.netsim import PrecisionSpec, Topology, run_replicate, run_simulation

REPS = 20
MASTER = 20260822
out = {}

t_all = time.perf_counter()
for topo in ("band", "cluster", "hub"):
    for n in (10, 100):
        for method in ("pinc", "pinc2", "ridge"):
            spec = PrecisionSpec(p=100, topology=Topology(topo), seed=0)
            e0s, e1s = [], []
            t0 = time.perf_counter()
            for rep in range(REPS):
                res = run_replicate(spec, n, method, rep, MASTER)[0]
                e0s.append(res.err0)
                e1s.append(res.err1)
            dt = time.perf_counter() - t0
            key = f"{topo}/{n}/{method}"
            out[key] = {"err0": float(np.mean(e0s)), "err1": float(np.mean(e1s)),
                        "sd0": float(np.std(e0s)), "sd1": float(np.std(e1s)),
                        "secs": dt}
            print(f"{key:22s} err0={np.mean(e0s):9.3f}±{np.std(e0s):7.3f} "
                  f"err1={np.mean(e1s):8.3f}±{np.std(e1s):6.3f} {dt:6.1f}s", flush=True)

print(f"\ncriterion-5 total: {time.perf_counter()-t_all:.0f}s")

# criterion 6/7: band n=10, priors none/true/corrupted, AUC + group separation
t_c6 = time.perf_counter()
for prior in ("none", "true", "corrupted"):
    spec = PrecisionSpec(p=100, topology=Topology.BAND, seed=0)
    aucs, seps = [], []
    for rep in range(REPS):
        res, states, summaries, hyper, truth = run_replicate(
            spec, 10, "pinc", rep, MASTER, prior=prior)
        aucs.append(res.auc)
        if prior == "true":
            ratio = (hyper.a[0] / hyper.b[0]) / (hyper.a[1] / hyper.b[1])
            seps.append(float(ratio))
    key = f"band/10/pinc/{prior}"
    out[key] = {"auc": float(np.mean(aucs)), "sd": float(np.std(aucs))}
    if seps:
        out[key]["sep_ratio_geo"] = float(np.exp(np.mean(np.log(seps))))
        out[key]["sep_min"] = float(np.min(seps))
    print(f"{key:28s} auc={np.mean(aucs):.4f}±{np.std(aucs):.4f} "
          + (f"sep_geo={out[key]['sep_ratio_geo']:.1f} min={out[key]['sep_min']:.1f}"
             if seps else ""), flush=True)
print(f"criterion-6 total: {time.perf_counter()-t_c6:.0f}s")

with open("/root/pkg/final_sim.json", "w") as fh:
    json.dump(out, fh, indent=1)
print("saved final_sim.json")
