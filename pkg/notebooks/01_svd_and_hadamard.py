"""
Jacobi SVD and Hadamard rotations
=================================

The rotation updates need an SVD of small square matrices and the
baselines need randomized Hadamard matrices. Both live in tensor_core.
"""

import numpy as np

from cornerquant.tensor_core import hadamard_matrix, hadamard_transform, orthogonality_residual, random_hadamard, svd

# %% A one-sided Jacobi SVD reconstructs its input to rounding error.
a = np.random.default_rng(0).standard_normal((6, 6))
res = svd(a)
print("singular values:", np.round(res.sigma, 4))
print("reconstruction error:", np.max(np.abs(res.reconstruct() - a)))
print("U orthogonal to", orthogonality_residual(res.u))

# %% The fast Walsh-Hadamard transform agrees with the dense matrix.
h = random_hadamard(8, seed=1)
x = np.random.default_rng(2).standard_normal((3, 8))
print("random Hadamard orthogonal to", orthogonality_residual(h))
dense = hadamard_matrix(8)
print("fast transform vs dense matrix:", np.max(np.abs(hadamard_transform(x) - x @ dense.T)))

# An outlier in one channel gets spread over all eight.
spike = np.zeros(8)
spike[3] = 1.0
print("spike after transform:", hadamard_transform(spike))
