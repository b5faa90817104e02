"""Hypercube-corner targets, the corner-distance objective and participation ratios."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "NormalizedBatch",
    "normalize_rows",
    "corner_targets",
    "corner_objective",
    "l1_score",
    "participation_ratio",
    "participation_ratios",
    "pr_cdf",
    "cdf_of_values",
]

MIN_ROW_NORM = 1e-12


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Unit-normalize rows, dropping rows with norm below ``1e-12``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError(f"expected a 2-D activation matrix, got shape {x.shape}")
    norms = np.linalg.norm(x, axis=1)
    keep = norms >= MIN_ROW_NORM
    return x[keep] / norms[keep, None]


@dataclass(frozen=True)
class NormalizedBatch:
    """Activation rows scaled to unit l2 norm (near-zero rows removed)."""

    xt: np.ndarray

    @classmethod
    def from_raw(cls, x: np.ndarray) -> "NormalizedBatch":
        return cls(normalize_rows(x))

    @property
    def n(self) -> int:
        return self.xt.shape[0]

    @property
    def d(self) -> int:
        return self.xt.shape[1]


def corner_targets(rotated: np.ndarray) -> np.ndarray:
    """Nearest hypercube vertex per row: ``sign(y) / sqrt(d)`` with ``sign(0) = +1``."""
    rotated = np.asarray(rotated, dtype=np.float64)
    d = rotated.shape[-1]
    return np.where(rotated < 0, -1.0, 1.0) / np.sqrt(d)


def _rotate(r: np.ndarray, batch: NormalizedBatch) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (batch.d, batch.d):
        raise InvalidInputError(f"rotation shape {r.shape} does not match batch dim {batch.d}")
    return batch.xt @ r.T


def corner_objective(r: np.ndarray, batch: NormalizedBatch) -> float:
    """``sum_i ||R x_i - z_i||²`` with corner targets taken from the current ``R``."""
    y = _rotate(r, batch)
    return float(np.sum((y - corner_targets(y)) ** 2))


def l1_score(r: np.ndarray, batch: NormalizedBatch) -> float:
    """Mean l1 norm of the rotated unit rows, in ``[1, sqrt(d)]``."""
    y = _rotate(r, batch)
    return float(np.mean(np.sum(np.abs(y), axis=1)))


def participation_ratios(x: np.ndarray) -> np.ndarray:
    """Row-wise normalized participation ratio ``||x||₂⁴ / (d ||x||₄⁴)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    sq = x * x
    l2sq = sq.sum(axis=1)
    l4 = (sq * sq).sum(axis=1)
    if np.any(l4 == 0):
        raise InvalidInputError("participation ratio of a zero vector is undefined")
    return l2sq**2 / (x.shape[1] * l4)


def participation_ratio(x: np.ndarray) -> float:
    return float(participation_ratios(np.asarray(x).reshape(1, -1))[0])


def pr_cdf(batch: np.ndarray, grid: int) -> list[tuple[float, float]]:
    """Empirical CDF of row-wise normalized PR at ``grid`` thresholds spanning [0, 1]."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise InvalidInputError("pr_cdf needs at least one row")
    return cdf_of_values(participation_ratios(batch), grid)


def cdf_of_values(values: np.ndarray, grid: int) -> list[tuple[float, float]]:
    """Fraction of ``values`` at or below each of ``grid`` evenly spaced thresholds in [0, 1]."""
    if grid < 2:
        raise InvalidInputError("grid must be >= 2")
    values = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if values.size == 0:
        raise InvalidInputError("no values")
    thresholds = np.linspace(0.0, 1.0, grid)
    # PR of an exact corner can land a few ulps above 1.
    counts = np.searchsorted(values, thresholds + 1e-12 * (thresholds == 1.0), side="right")
    return [(float(t), float(c) / values.size) for t, c in zip(thresholds, counts)]
