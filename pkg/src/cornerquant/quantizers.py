"""Simulated uniform quantizers and their worst-case error bounds.

Quantizers return float64 arrays on the dequantized grid. Rounding is
half-away-from-zero. A clipping ratio shrinks the range before the grid is
built and out-of-range values clamp to the grid extremes; in zeropoint mode
the range is shrunk about its midpoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidSpecError

__all__ = [
    "QuantizerSpec",
    "QuantStats",
    "round_half_away",
    "quantize_symmetric",
    "quantize_zeropoint",
    "quantize_tensor",
    "mse_bound_sym",
    "mse_bound_zp",
    "range_ratio",
    "signed_range",
    "quant_stats",
]

_MODES = ("symmetric", "zeropoint")
_GRANULARITIES = ("per_tensor", "per_token", "grouped")


@dataclass(frozen=True)
class QuantizerSpec:
    """Bit width, mode, granularity and clipping ratio of a uniform quantizer.

    ``group_size`` is only meaningful for ``granularity="grouped"``.
    """

    bits: int = 4
    mode: str = "zeropoint"
    granularity: str = "per_token"
    group_size: int | None = None
    clip_ratio: float = 1.0

    def __post_init__(self):
        if not isinstance(self.bits, (int, np.integer)) or self.bits < 2:
            raise InvalidSpecError(f"bits must be an integer >= 2, got {self.bits!r}")
        if self.mode not in _MODES:
            raise InvalidSpecError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.granularity not in _GRANULARITIES:
            raise InvalidSpecError(f"granularity must be one of {_GRANULARITIES}")
        if self.granularity == "grouped":
            if self.group_size is None or self.group_size < 1:
                raise InvalidSpecError("grouped granularity needs a positive group_size")
        if not (0.0 < self.clip_ratio <= 1.0):
            raise InvalidSpecError(f"clip_ratio must lie in (0, 1], got {self.clip_ratio}")

    @property
    def qmax_sym(self) -> int:
        return 2 ** (self.bits - 1) - 1

    @property
    def levels_zp(self) -> int:
        return 2**self.bits - 1


@dataclass(frozen=True)
class QuantStats:
    """``mse`` is the total squared error ``||Q(x) - x||²`` (not a per-entry mean)."""

    mse: float
    sqnr: float
    range_ratio: float
    linf: float
    signed_range: float


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _check_bits(spec: QuantizerSpec, mode: str):
    if spec.mode != mode:
        raise InvalidSpecError(f"expected a {mode} spec, got mode={spec.mode!r}")


def _sym_rows(x: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    # x is (units, n); one scale per unit row.
    qmax = spec.qmax_sym
    amax = np.max(np.abs(x), axis=1, keepdims=True)
    delta = spec.clip_ratio * amax / qmax
    safe = np.where(delta > 0, delta, 1.0)
    q = np.clip(round_half_away(x / safe), -qmax, qmax) * safe
    return np.where(delta > 0, q, x)


def _zp_rows(x: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    levels = spec.levels_zp
    hi = np.max(x, axis=1, keepdims=True)
    lo = np.min(x, axis=1, keepdims=True)
    width = spec.clip_ratio * (hi - lo)
    delta = width / levels
    safe = np.where(delta > 0, delta, 1.0)
    lo_clipped = 0.5 * (hi + lo) - 0.5 * width
    zero_point = round_half_away(-lo_clipped / safe)
    codes = np.clip(round_half_away(x / safe + zero_point), 0, levels)
    q = (codes - zero_point) * safe
    return np.where(delta > 0, q, x)


def quantize_symmetric(x: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    """Symmetric per-tensor quantization of a vector.

    ``Δ = clip · max|x| / (2^(b-1) - 1)`` and ``Q(x) = Δ · round(x / Δ)``
    clamped to ``±(2^(b-1) - 1) Δ``. An all-zero input is returned unchanged.
    """
    _check_bits(spec, "symmetric")
    x = np.asarray(x, dtype=np.float64)
    return _sym_rows(x.reshape(1, -1), spec).reshape(x.shape)


def quantize_zeropoint(x: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    """Asymmetric (zeropoint) per-tensor quantization of a vector.

    ``Δ = clip · (max x - min x) / (2^b - 1)``, integer zeropoint
    ``ζ = round(-lo / Δ)`` and ``Q(x) = Δ · (clamp(round(x/Δ + ζ), 0, 2^b - 1) - ζ)``.
    Constant inputs are returned unchanged.
    """
    _check_bits(spec, "zeropoint")
    x = np.asarray(x, dtype=np.float64)
    return _zp_rows(x.reshape(1, -1), spec).reshape(x.shape)


def quantize_tensor(x: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    """Quantize a matrix unit-wise according to ``spec.granularity``.

    ``per_token`` uses one scale per row, ``grouped`` one per contiguous
    ``group_size`` slice of each row, ``per_tensor`` a single scale. Arrays
    with more than two dimensions are treated as stacks of rows over the last
    axis.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        raise InvalidInputError("cannot quantize a scalar")
    shape = x.shape
    n = shape[-1]
    rows = x.reshape(-1, n)
    if spec.granularity == "per_tensor":
        units = rows.reshape(1, -1)
    elif spec.granularity == "per_token":
        units = rows
    else:
        g = spec.group_size
        if n % g:
            raise InvalidSpecError(f"group_size {g} does not divide row length {n}")
        units = rows.reshape(-1, g)
    fn = _sym_rows if spec.mode == "symmetric" else _zp_rows
    return fn(units, spec).reshape(shape)


def mse_bound_sym(x: np.ndarray, b: int) -> float:
    """``d · max|x|² / (4 (2^(b-1) - 1)²)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return 0.0
    return float(x.size * np.max(np.abs(x)) ** 2 / (4.0 * (2 ** (b - 1) - 1) ** 2))


def mse_bound_zp(x: np.ndarray, b: int) -> float:
    """``d · (max x - min x)² / (4 (2^b - 1)²)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return 0.0
    return float(x.size * signed_range(x) ** 2 / (4.0 * (2**b - 1) ** 2))


def signed_range(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.max(x) - np.min(x))


def range_ratio(x: np.ndarray) -> float:
    """Dynamic-range ratio ``max|x|² / ||x||²``; lies in ``[1/d, 1]``."""
    x = np.asarray(x, dtype=np.float64)
    m = float(np.max(np.abs(x))) if x.size else 0.0
    if m == 0.0:
        raise InvalidInputError("range ratio of a zero vector is undefined")
    # scale by the max first so tiny or huge inputs neither underflow nor overflow
    y = x / m
    return float(1.0 / (y @ y))


def quant_stats(x: np.ndarray, spec: QuantizerSpec) -> QuantStats:
    x = np.asarray(x, dtype=np.float64).ravel()
    if not np.any(x):
        return QuantStats(mse=0.0, sqnr=float("inf"), range_ratio=float("nan"), linf=0.0, signed_range=0.0)
    q = quantize_tensor(x.reshape(1, -1), spec).ravel()
    err = float(np.sum((q - x) ** 2))
    energy = float(x @ x)
    return QuantStats(
        mse=err,
        sqnr=energy / err if err > 0 else float("inf"),
        range_ratio=range_ratio(x),
        linf=float(np.max(np.abs(x))),
        signed_range=signed_range(x),
    )
