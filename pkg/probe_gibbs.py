"""Smoke: Geweke joint check, VB-vs-Gibbs agreement, conjugacy, no-data prior."""
import time

import numpy as np

from shrinkhs import gibbs, vb
from shrinkhs.model import Hyperparams, RegressionTask

# --- 1. Geweke-style joint distribution check (small first) ---
t0 = time.perf_counter()
zs = gibbs.joint_distribution_check(n=5, s=2, n_draws=4000, seed=11)
print(f"joint check ({time.perf_counter()-t0:.1f}s):")
for k, v in zs.items():
    flag = "OK" if abs(v) < 4 else "BAD"
    print(f"  {k}: z={v:+.2f} {flag}")

# --- 2. VB vs Gibbs on one criterion-4-style task ---
rng = np.random.default_rng(42)
n, s = 30, 10
x = rng.standard_normal((n, s))
beta_true = np.zeros(s)
beta_true[0], beta_true[1] = 1.0, -1.0
y = x @ beta_true + 0.5 * rng.standard_normal(n)
task = RegressionTask(index=0, y=y, x=x, groups=np.ones(s, dtype=int))
hyper = Hyperparams(a=np.array([1e-3]), b=np.array([1e-3]), c=1e-3, d=1e-3)

t0 = time.perf_counter()
st, summ, _ = vb.fit_single(task, hyper, vb.FitOptions(tol=1e-8, max_iter=500))
t_vb = time.perf_counter() - t0
t0 = time.perf_counter()
ms = gibbs.gibbs_fit(task, hyper, gibbs.McmcOptions(seed=7))
t_gibbs = time.perf_counter() - t0
diff = np.abs(st.beta_mean - ms.beta_mean)
corr = np.corrcoef(st.beta_mean, ms.beta_mean)[0, 1]
print(f"\nVB vs Gibbs: max|diff|={diff.max():.4f} corr={corr:.4f}")
print(f"  vb mean    {np.array2string(st.beta_mean, precision=3)}")
print(f"  gibbs mean {np.array2string(ms.beta_mean, precision=3)}")
print(f"  gibbs sd   {np.array2string(ms.beta_sd, precision=3)}")
print(f"  min ESS {ms.ess.min():.0f}  t_vb={t_vb*1e3:.1f}ms t_gibbs={t_gibbs:.2f}s "
      f"ratio={t_gibbs/t_vb:.0f}x")

# --- 3. Conjugacy: lambda, tau frozen at 1 -> ridge mean ---
ms_r = gibbs.gibbs_fit(task, hyper, gibbs.McmcOptions(n_iter=20000, n_burnin=5000, seed=3),
                       freeze_lambda=True, freeze_tau=True)
ridge = np.linalg.solve(x.T @ x + np.eye(s), x.T @ y)
print(f"\nconjugacy: max|gibbs-ridge|={np.abs(ms_r.beta_mean - ridge).max():.4f} "
      f"(mc-se ~{(ms_r.beta_sd/np.sqrt(ms_r.ess)).max():.4f})")

# --- 4. no-data column: prior symmetry -> mean ~ 0 ---
x0 = np.zeros((8, 1))
task0 = RegressionTask(index=0, y=np.ones(8), x=x0, groups=np.array([1]))
ms0 = gibbs.gibbs_fit(task0, Hyperparams(a=np.array([2.0]), b=np.array([1.0]), c=2.0, d=1.0),
                      gibbs.McmcOptions(n_iter=20000, n_burnin=2000, seed=5))
print(f"no-data beta mean: {ms0.beta_mean[0]:+.4f} (sd {ms0.beta_sd[0]:.3f})")
