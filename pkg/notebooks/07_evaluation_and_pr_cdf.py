"""
Quantization error and participation-ratio CDFs
===============================================

Compare no rotation, a random Hadamard rotation and the calibrated one on
held-out sequences.
"""

import numpy as np

from cornerquant.calibration import calibrate_online, hadamard_baseline
from cornerquant.cli import build_model, calib_config, eval_specs, load_tokens
from cornerquant.config import RunConfig
from cornerquant.corner_geometry import cdf_of_values
from cornerquant.metrics import collect_pr, evaluate_model
from cornerquant.toy_transformer import RotationSet

cfg = RunConfig()
model, _ = build_model(cfg)
calib, held = load_tokens(cfg)
had = hadamard_baseline(model.cfg, cfg.seed)
calibrated, _ = calibrate_online(model, calib, calib_config(cfg), had)
variants = {"identity": RotationSet.identity(model.cfg), "hadamard": had, "calibrated": calibrated}

for triplet in ("4-4-16", "4-4-4"):
    print(triplet)
    for name, rots in variants.items():
        report, summary = evaluate_model(model, rots, held, eval_specs(cfg, triplet))
        print(f"  {name:10s} mean rel err {summary['mean_rel_err']:.5f}  nll {summary['nll']:.4f}")

# %% A coarse text rendering of the PR CDFs: fraction of tokens at or below each threshold.
grid = 11
print("threshold " + " ".join(f"{t:4.1f}" for t, _ in cdf_of_values(np.array([0.5]), grid)))
for name, rots in variants.items():
    cdf = cdf_of_values(collect_pr(model, rots, held), grid)
    print(f"{name:9s} " + " ".join(f"{f:4.2f}" for _, f in cdf))
