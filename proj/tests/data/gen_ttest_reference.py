"""Regenerates ttest_reference.json with scipy.stats.ttest_rel."""
import json
import pathlib

import numpy as np
from scipy import stats

rng = np.random.default_rng(20240517)
cases = []
for k in range(50):
    n = int(rng.integers(2, 40))
    a = rng.uniform(0.7, 1.0, n)
    b = a - rng.normal(rng.uniform(-0.05, 0.05), rng.uniform(0.005, 0.05), n)
    res = stats.ttest_rel(a, b)
    cases.append({"a": a.tolist(), "b": b.tolist(), "t": float(res.statistic), "p": float(res.pvalue)})

out = pathlib.Path(__file__).with_name("ttest_reference.json")
out.write_text(json.dumps({"generator": "scipy.stats.ttest_rel", "cases": cases}, indent=1))
