"""
Building blocks: zero-inflated counts, ICAR energy, random-walk forecasts
=========================================================================

Small numerical checks that show what each component of the model does.
"""

# %%
import math

import numpy as np

from boem.forecast import forecast_state
from boem.graph import from_edges, icar_quadform, icar_sampling_basis
from boem.model import ParameterState, zip_logpmf_marginal, zip_moments

# %%
# Zero inflation mixes a point mass at 0 with a Poisson. Variance grows
# faster than the mean once rho > 0.
for rho in (0.0, 0.2, 0.5):
    m, v = zip_moments(4.0, rho)
    p0 = math.exp(zip_logpmf_marginal(0, 4.0, rho))
    print(f"rho={rho:.1f}: mean {m:.2f}, variance {v:.2f}, P(y=0) {p0:.3f}")

# %%
# The ICAR prior penalizes differences between neighbours. A smooth field
# costs little energy, a checkerboard costs a lot, and constants are free.
ids = [f"r{i}c{j}" for i in range(4) for j in range(4)]
edges = [(f"r{i}c{j}", f"r{i}c{j + 1}") for i in range(4) for j in range(3)]
edges += [(f"r{i}c{j}", f"r{i + 1}c{j}") for i in range(3) for j in range(4)]
grid = from_edges(edges, ids)
rows, cols = np.divmod(np.arange(16), 4)
for label, u in [("constant", np.ones(16)), ("gradient", rows / 3.0), ("checkerboard", ((rows + cols) % 2) * 1.0)]:
    print(f"{label:12s} energy {icar_quadform(grid, u):6.2f}")

# %%
# Exact draws from the sum-to-zero ICAR prior come from the eigenbasis of D - W.
B = icar_sampling_basis(grid)
draw = B @ np.random.default_rng(0).standard_normal(B.shape[1])
print(f"ICAR draw sums to {draw.sum():.1e}")

# %%
# Forecasts extend kappa as a random walk: the mean stays at the last fitted
# value and the variance grows linearly with the horizon.
state = ParameterState(alpha=0.0, u=np.zeros(16), v=np.zeros(16), kappa=np.array([0.1, -0.1, 0.2]),
                       omega=np.zeros((16, 3)), pi=np.zeros((16, 3), int), rho=0.2,
                       sd_alpha=1.0, sd_v=0.1, sd_u=0.5, sd_kappa=0.1, sd_omega=0.2)
paths = np.stack([forecast_state(state, range(3, 15), grid, np.random.default_rng([1, k]), B).kappa[3:]
                  for k in range(4000)])
for h in (1, 4, 12):
    x = paths[:, h - 1]
    print(f"h={h:2d}: mean {x.mean():+.3f}, variance {x.var():.4f} (expected {h * 0.01:.4f})")
