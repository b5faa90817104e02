"""
Online calibration on the toy outlier model
===========================================

Mini-batches of sequences are pushed through the model; the residual
rotation and the per-head value rotations are re-solved after each batch.
"""

from cornerquant.calibration import calibrate_online, hadamard_baseline
from cornerquant.cli import build_model, calib_config, load_tokens
from cornerquant.config import RunConfig

cfg = RunConfig()
model, recipe = build_model(cfg)
calib, held = load_tokens(cfg)
print("outlier residual channels:", recipe.residual_channels)

rots, trace = calibrate_online(model, calib, calib_config(cfg), hadamard_baseline(model.cfg, cfg.seed))
for rec in trace.records[::8] + trace.records[-1:]:
    per_row = rec["r1_objective"] / rec["r1_rows"]
    print(f"batch {rec['batch']:2d}: objective/row {per_row:.4f}  mean PR {rec['mean_pr']:.4f}")
