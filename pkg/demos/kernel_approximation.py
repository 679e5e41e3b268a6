"""Approximate the logistic-model kernel by Erlang mixtures.

The true kernel is a two-term folded-normal mixture. Weights taken from
increments of its CDF on a grid of width dt give a mixture with rate
a = 1/dt; the CDF error shrinks as dt does, slowly (roughly like sqrt(dt)).

    python3 demos/kernel_approximation.py
"""

import math

import numpy as np

from distdelay import tijms_weights
from distdelay.models import LOGISTIC_KERNEL

grid = np.linspace(0.0, 2.0, 2001)
true_cdf = LOGISTIC_KERNEL.cdf(grid)

print(f"true mean delay {LOGISTIC_KERNEL.mean():.4f} mo")
print(f"{'dt':>8} {'M':>5} {'sup cdf err':>12} {'mean':>8}")
for dt in (0.2, 0.1, 0.05, 0.025, 0.0125):
    M = math.ceil(2.0 / dt)
    mix = tijms_weights(LOGISTIC_KERNEL.cdf, dt, M)
    err = np.max(np.abs(mix.cdf(grid) - true_cdf))
    print(f"{dt:8.4f} {M:5d} {err:12.5f} {mix.mean():8.4f}")

# the densities converge much less uniformly than the CDFs: the sharp
# component (sigma = 0.06 mo) needs a high rate before it is resolved
mix = tijms_weights(LOGISTIC_KERNEL.cdf, 0.0125, 160)
peak = grid[np.argmax(LOGISTIC_KERNEL.pdf(grid))]
print(f"peak at {peak:.3f} mo: true pdf {LOGISTIC_KERNEL.pdf(peak):.3f}, mixture pdf {mix.pdf(peak):.3f}")
