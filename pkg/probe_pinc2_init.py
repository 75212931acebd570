"""Probe: pinc2 pooled-tau-sq init 0.05 vs 1e-3, band topology, n=10 and n=100."""
import time

import numpy as np

from shrinkhs import eb
from shrinkhs.model import Hyperparams, Variant
from shrinkhs.vb import FitOptions
from shrinkhs.netsim import (
    PrecisionSpec, Topology, build_regression_system, coefficients_from_precision,
    generate_precision, l1_errors, sample_gaussian,
)

spec = PrecisionSpec(p=100, topology=Topology.BAND, seed=20123)
truth = generate_precision(spec)
beta_true = coefficients_from_precision(truth.omega)
opts = FitOptions(tol=1e-3, max_iter=200)

for n in (10, 100):
    rng = np.random.default_rng(777 + n)
    data = sample_gaussian(truth, n, rng)
    tasks = build_regression_system(data, prior_adjacency=None)
    for pooled0 in (0.05, 1e-3):
        hyper0 = Hyperparams(
            a=np.full(1, 1e-3), b=np.full(1, 1e-3), c=1e-3, d=1e-3,
            variant=Variant.PINC2, pooled_tau_sq=np.full(1, pooled0),
        )
        t0 = time.perf_counter()
        states, summaries, hyper_fin, trace = eb.run(tasks, hyper0, opts)
        dt = time.perf_counter() - t0
        est = np.column_stack([st.beta_mean for st in states]).T
        e0, e1 = l1_errors(est, truth)
        esig = float(np.mean([st.c_star / st.d_star for st in states]))
        print(f"n={n:3d} pooled0={pooled0:g}: err0={e0:8.3f} err1={e1:7.3f} "
              f"pooled_fin={float(hyper_fin.pooled_tau_sq[0]):.4g} "
              f"mean_Esig={esig:9.2f} iters={len(trace.sum_elbo)} {dt:5.1f}s")
