"""One-shot margin check for VB-vs-Gibbs agreement (criterion 4)."""
import time

import numpy as np

from shrinkhs.gibbs import McmcOptions, gibbs_fit
from shrinkhs.model import Hyperparams, RegressionTask, Variant
from shrinkhs.vb import FitOptions, fit_single

hyper = Hyperparams(a=np.array([1e-3]), b=np.array([1e-3]),
                    c=1e-3, d=1e-3, variant=Variant.PINC)

vb_means, gibbs_means = [], []
vb_secs = gibbs_secs = 0.0
for t in range(20):
    rng = np.random.default_rng(1000 + t)
    x = rng.standard_normal((30, 10))
    beta = np.zeros(10)
    beta[0], beta[1] = 1.0, -1.0
    y = x @ beta + 0.5 * rng.standard_normal(30)
    task = RegressionTask(index=t, y=y, x=x, groups=np.ones(10, dtype=int))

    t0 = time.perf_counter()
    state, summary, _ = fit_single(task, hyper, FitOptions())
    vb_secs += time.perf_counter() - t0
    vb_means.append(summary.means)

    t0 = time.perf_counter()
    msum = gibbs_fit(task, hyper, McmcOptions(n_iter=40_000, n_burnin=20_000, seed=t))
    gibbs_secs += time.perf_counter() - t0
    gibbs_means.append(msum.beta_mean)
    print(f"task {t}: vb {vb_secs:.3f}s cum, gibbs {gibbs_secs:.1f}s cum", flush=True)

v = np.concatenate(vb_means)
g = np.concatenate(gibbs_means)
diff = float(np.max(np.abs(v - g)))
corr = float(np.corrcoef(v, g)[0, 1])
ratio = gibbs_secs / vb_secs
print(f"max_abs_diff = {diff:.4f}  (need <= 0.1)")
print(f"corr         = {corr:.5f}  (need >= 0.95)")
print(f"speed ratio  = {ratio:.1f}x (need >= 100)  vb={vb_secs:.3f}s gibbs={gibbs_secs:.1f}s")
