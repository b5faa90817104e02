"""
Folding rotations into a transformer
====================================

Residual and value/output rotations can be absorbed into the weights so
that the floating-point model computes exactly the same function.
"""

import numpy as np

from cornerquant.calibration import hadamard_baseline
from cornerquant.toy_transformer import ModelConfig, fold_rotations, forward, fuse_rmsnorm, init_model

cfg = ModelConfig()
model = fuse_rmsnorm(init_model(cfg))
rots = hadamard_baseline(cfg, seed=0)
tokens = np.random.default_rng(0).integers(0, cfg.vocab, (4, 64))

base, _ = forward(model, tokens)
rotated, _ = forward(fold_rotations(model, rots), tokens, rots=rots)
print("max logit difference:", np.max(np.abs(base - rotated)))
