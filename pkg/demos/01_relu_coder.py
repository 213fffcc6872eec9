"""Walk through the analytic ReLU coder: spike trains are binary digits.

Run:  python demos/01_relu_coder.py
"""

import numpy as np

from fsconv import make_relu_params
from fsconv.fs_core import fs_simulate, fs_simulate_batch

K, ALPHA = 10, 25.0
params = make_relu_params(K, ALPHA)
print(f"K={K} alpha={ALPHA}: thresholds {params.thresholds[:3]} ... {params.thresholds[-1]:.5f}")

# one neuron, step by step
x = 17.3
out = fs_simulate(x, params)
bits = "".join(str(int(s)) for s in out.spikes)
print(f"\nx={x} -> spike train {bits}  ({out.spike_count} spikes)")
print(f"decoded {out.value:.6f}, int(bits, 2) * alpha / 2^K = {int(bits, 2) * ALPHA / 2**K:.6f}")

# the grid of representable values is reproduced exactly
grid = np.arange(2**K) * ALPHA / 2**K
values, _ = fs_simulate_batch(grid, params)
print(f"\ngrid of {grid.size} points, max |error| = {np.max(np.abs(values - grid)):.1e}")

# anything else is truncated to the grid point below it, and clipped at the top
xs = np.array([-3.0, 0.01, 12.34567, 24.99, 30.0])
values, spikes = fs_simulate_batch(xs, params)
for xi, v, s in zip(xs, values, spikes.sum(axis=1)):
    print(f"  x={xi:9.5f}  decoded={v:9.5f}  spikes={s}")

# spikes per neuron averaged over a uniform input
xs = np.random.default_rng(0).uniform(0, ALPHA, 100_000)
_, spikes = fs_simulate_batch(xs, params)
print(f"\nmean spikes for x ~ U[0, {ALPHA}): {spikes.sum(axis=1).mean():.3f} (K/2 = {K / 2})")
