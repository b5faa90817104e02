"""Rotation calibration that pushes normalized activations toward hypercube corners.

Rotations are fitted with closed-form orthogonal Procrustes updates on
streaming mini-batches of activations from a small transformer, then folded
into its weights ahead of low-bit quantization.
"""

from .errors import (
    ConfigError,
    EmptyAccumulatorError,
    InvalidInputError,
    InvalidSpecError,
    NumericalError,
    PreconditionError,
)
from .tensor_core import (
    SvdResult,
    hadamard_matrix,
    hadamard_transform,
    orthogonality_residual,
    random_hadamard,
    random_orthogonal,
    svd,
)
from .quantizers import (
    QuantizerSpec,
    QuantStats,
    mse_bound_sym,
    mse_bound_zp,
    quant_stats,
    quantize_symmetric,
    quantize_tensor,
    quantize_zeropoint,
    range_ratio,
    signed_range,
)
from .corner_geometry import (
    NormalizedBatch,
    corner_objective,
    corner_targets,
    l1_score,
    participation_ratio,
    participation_ratios,
    pr_cdf,
)
from .procrustes import BlockDiagonalRotation, ProcrustesAccumulator, accumulate, alternate, opu, opu_blockdiag
from .toy_transformer import (
    ModelConfig,
    RotationSet,
    TapRecord,
    ToyTransformer,
    fold_rotations,
    forward,
    fuse_rmsnorm,
    init_model,
    nll,
    quantize_weights,
)
from .containers import load_model, load_rotations, read_activation_dump, save_model, save_rotations
from .calibration import CalibConfig, CalibTrace, calibrate_offline, calibrate_online, hadamard_baseline
from .metrics import EvalSpecs, LayerErrorReport, collect_pr, evaluate_model, relative_quant_error
from .synthetic import SyntheticSpec, apply_recipe, make_recipe, synthetic_tokens

__version__ = "0.1.0"
