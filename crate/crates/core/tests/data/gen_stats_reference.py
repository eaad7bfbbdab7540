"""Regenerates stats_reference.json with scipy as the independent oracle.

Run from this directory: python3 gen_stats_reference.py
"""
import json

import numpy as np
from scipy import stats

rng = np.random.default_rng(20240611)
welch = []
shapes = [
    (100, 10.0, 1.0, 100, 12.0, 1.0),
    (100, 6281.0, 180.0, 100, 6072.0, 150.0),
    (30, 5.0, 2.0, 45, 5.3, 0.5),
    (12, 0.0, 1.0, 9, 0.1, 3.0),
    (200, 24.24, 0.8, 180, 24.11, 0.9),
    (5, 1.0, 0.1, 7, 1.05, 0.2),
    (150, 265.5, 12.0, 150, 261.8, 11.0),
    (2, 3.0, 1.0, 3, 4.0, 1.0),
    (60, 15.12e6, 1.1e6, 70, 13.85e6, 0.9e6),
    (100, 100.0, 10.0, 100, 100.0, 10.0),
]
for na, ma, sa, nb, mb, sb in shapes:
    a = rng.normal(ma, sa, na)
    b = rng.normal(mb, sb, nb)
    r = stats.ttest_ind(a, b, equal_var=False)
    welch.append({"a": a.tolist(), "b": b.tolist(), "statistic": float(r.statistic), "p_value": float(r.pvalue)})

ramp = np.arange(1, 501, dtype=float)
gauss = rng.normal(0.0, 1.0, 500)
norm = []
for name, xs in [("ramp", ramp), ("gaussian", gauss)]:
    r = stats.normaltest(xs)
    norm.append({"name": name, "values": xs.tolist(), "statistic": float(r.statistic), "p_value": float(r.pvalue)})

with open("stats_reference.json", "w") as f:
    json.dump({"welch": welch, "normality": norm}, f, indent=1)
for w in welch:
    print(w["statistic"], w["p_value"])
for n in norm:
    print(n["name"], n["statistic"], n["p_value"])
