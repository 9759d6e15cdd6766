"""
CV@R of a sample, two ways
==========================

The superquantile of a sample is the mean of its worst alpha fraction.
The same number is the minimum over t of t + E(Z - t)_+ / alpha, and the
minimizing t is the upper quantile.
"""

import numpy as np

from cvarsgd import cvar_sorted, cvar_variational

rng = np.random.default_rng(0)
z = rng.lognormal(sigma=1.0, size=10_000)   # a skewed loss sample

for alpha in (1.0, 0.5, 0.2, 0.05, 0.01):
    a = cvar_sorted(z, alpha)
    b, t = cvar_variational(z, alpha)
    print(f"alpha={alpha:<5} sorted={a:.6f} variational={b:.6f} t*={t:.4f}")

# alpha = 1 is the mean, small alpha tends to the maximum
print("mean", z.mean(), "max", z.max())

# the variational objective is convex and piecewise linear in t
ts = np.linspace(0, 10, 11)
f = [t + np.maximum(z - t, 0).mean() / 0.2 for t in ts]
print(np.round(f, 3))
