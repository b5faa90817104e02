"""
Closed-form rotation updates
============================

For fixed corner targets Z the best rotation is U V^T from the SVD of
Z^T X. Alternating target selection and this solve never increases the
objective.
"""

import numpy as np

from cornerquant.corner_geometry import NormalizedBatch
from cornerquant.procrustes import ProcrustesAccumulator, alternate
from cornerquant.tensor_core import random_hadamard

d = 32
g = np.random.default_rng(1)
x = g.standard_t(3, (500, d)) * np.exp(g.normal(0, 1, d))
batch = NormalizedBatch.from_raw(x)

history = []
alternate(random_hadamard(d, 0), batch, 15, history)
print("objective per step:", np.round(history, 3))

# %% Statistics can be streamed chunk by chunk; only the d x d matrix is kept.
r = random_hadamard(d, 0)
whole = ProcrustesAccumulator(d).add(r, x)
chunked = ProcrustesAccumulator(d)
for part in np.array_split(x, 9):
    chunked.add(r, part)
print("chunked vs whole:", np.max(np.abs(whole.c - chunked.c)))
