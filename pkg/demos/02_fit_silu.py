"""Fit FS parameters to SiLU with surrogate-gradient BPTT.

A short fit (a few seconds) next to the shipped K=16 parameters, which came
from ``src/fsconv/data/silu_k16_fit.json`` with 30000 iterations.

Run:  python demos/02_fit_silu.py
"""

from dataclasses import replace

import numpy as np

from fsconv import published_params
from fsconv.fit import fit_detailed, load_fit_config, region_mses
from fsconv.fs_core import ActivationFunction, fs_simulate_batch

target, cfg = load_fit_config("src/fsconv/data/silu_k16_fit.json")
quick = replace(cfg, iterations=3000)
result = fit_detailed(target, quick)
regions = {"[-2,2]": [(-2.0, 2.0)], "outside": [(-8.0, -2.0), (2.0, 12.0)]}

print("short fit   :", {k: round(v, 5) for k, v in region_mses(result.params, "silu", regions).items()})
shipped = published_params("silu")
print("shipped K=16:", {k: round(v, 5) for k, v in region_mses(shipped, "silu", regions).items()})

# a coarse text plot of the shipped approximation
silu = ActivationFunction("silu")
xs = np.linspace(-6, 6, 13)
approx, spikes = fs_simulate_batch(xs, shipped)
print("\n     x    silu     fs  spikes")
for x, a, s in zip(xs, approx, spikes.sum(axis=1)):
    print(f"{x:6.1f} {silu(np.array([x]))[0]:7.3f} {a:6.3f} {s:7d}")
