"""One-shot check of refit-evidence selector recovery rate (criterion 8)."""
import numpy as np

from shrinkhs.model import Hyperparams, RegressionTask, Variant
from shrinkhs.selection import threshold_select
from shrinkhs.vb import FitOptions, fit_single

hyper = Hyperparams(a=np.array([1e-3]), b=np.array([1e-3]),
                    c=1e-3, d=1e-3, variant=Variant.PINC)

hits = 0
truth = np.zeros(10, dtype=bool)
truth[:2] = True
for rep in range(50):
    rng = np.random.default_rng(3000 + rep)
    x = rng.standard_normal((40, 10))
    beta = np.zeros(10)
    beta[0], beta[1] = 3.0, -3.0
    y = x @ beta + 0.2 * rng.standard_normal(40)
    task = RegressionTask(index=rep, y=y, x=x, groups=np.ones(10, dtype=int))
    state, summary, _ = fit_single(task, hyper, FitOptions())
    res = threshold_select(task, hyper, summary, state)
    ok = bool(np.array_equal(res.selected, truth))
    hits += ok
    if not ok:
        sel = np.flatnonzero(res.selected)
        print(f"rep {rep}: selected {sel} level {res.chosen_level}", flush=True)

print(f"recovery: {hits}/50 = {hits/50:.0%} (need >= 90%)")
