"""
Hypercube corners and participation ratio
=========================================

On the unit sphere the smallest possible max-magnitude is 1/sqrt(d), met
exactly at the corners (all entries +-1/sqrt(d)). Distance to the nearest
corner is an l1 score in disguise.
"""

import numpy as np

from cornerquant.corner_geometry import NormalizedBatch, corner_objective, l1_score, participation_ratios
from cornerquant.tensor_core import random_hadamard

d = 16
g = np.random.default_rng(0)
x = g.standard_normal((200, d))
x[:, 0] *= 20

batch = NormalizedBatch.from_raw(x)
for name, r in (("identity", np.eye(d)), ("hadamard", random_hadamard(d, 0))):
    obj = corner_objective(r, batch)
    l1 = l1_score(r, batch)  # mean l1 norm per row
    print(f"{name:9s} objective {obj:8.3f}  via l1: {2 * batch.n - 2 / np.sqrt(d) * l1 * batch.n:8.3f}")

# %% Normalized participation ratio: 1 at corners, 1/d for a single spike.
corners = g.choice([-1.0, 1.0], (4, d))
print("PR at corners:", participation_ratios(corners))
print("PR of raw outlier rows (median):", np.median(participation_ratios(x)))
print("PR after Hadamard (median):", np.median(participation_ratios(x @ random_hadamard(d, 0).T)))
