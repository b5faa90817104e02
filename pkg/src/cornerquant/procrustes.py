"""Closed-form orthogonal Procrustes updates over streamed activations.

With corner targets ``Z`` fixed by the current rotation and unit rows ``X``,
the best orthogonal ``R`` for ``min ||X Rᵀ - Z||_F`` is ``U Vᵀ`` where
``Zᵀ X = U Σ Vᵀ``. The cross-covariance is a plain sum over rows, so it can be
accumulated one chunk at a time and the activations discarded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corner_geometry import NormalizedBatch, corner_objective, corner_targets, normalize_rows
from .errors import EmptyAccumulatorError, InvalidInputError
from .tensor_core import svd

__all__ = [
    "ProcrustesAccumulator",
    "BlockDiagonalRotation",
    "accumulate",
    "opu",
    "opu_blockdiag",
    "alternate",
]


@dataclass
class ProcrustesAccumulator:
    d: int
    c: np.ndarray = field(default=None)
    n_samples: int = 0
    # sum of ||R x||_1 over accumulated rows, for the pre-update objective
    l1_sum: float = 0.0

    def __post_init__(self):
        if self.c is None:
            self.c = np.zeros((self.d, self.d))

    def reset(self):
        self.c = np.zeros((self.d, self.d))
        self.n_samples = 0
        self.l1_sum = 0.0

    def add(self, r: np.ndarray, x: np.ndarray) -> "ProcrustesAccumulator":
        """Add raw activation rows ``x`` with targets taken from rotation ``r``."""
        x = np.asarray(x, dtype=np.float64)
        if x.size == 0:
            return self
        if x.ndim != 2 or x.shape[1] != self.d:
            raise InvalidInputError(f"expected rows of width {self.d}, got shape {x.shape}")
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (self.d, self.d):
            raise InvalidInputError(f"rotation shape {r.shape} does not match d={self.d}")
        xt = normalize_rows(x)
        y = xt @ r.T
        z = corner_targets(y)
        self.c += z.T @ xt
        self.n_samples += xt.shape[0]
        self.l1_sum += float(np.abs(y).sum())
        return self

    def objective_before(self) -> float:
        """Corner objective of the accumulated rows under the rotation used to add them."""
        return 2.0 * self.n_samples - 2.0 / np.sqrt(self.d) * self.l1_sum

    def objective_bound(self, r: np.ndarray) -> float:
        """Distance to the *fixed* accumulated targets under ``r``.

        Upper-bounds the corner objective at ``r`` since re-choosing the
        targets can only lower it.
        """
        return 2.0 * self.n_samples - 2.0 * float(np.sum(np.asarray(r) * self.c))

    def solve(self) -> np.ndarray:
        if self.n_samples == 0:
            raise EmptyAccumulatorError("cannot solve an empty Procrustes accumulator")
        res = svd(self.c)
        return res.u @ res.vt


def accumulate(acc: ProcrustesAccumulator, r: np.ndarray, x: np.ndarray) -> ProcrustesAccumulator:
    return acc.add(r, x)


def opu(acc: ProcrustesAccumulator) -> np.ndarray:
    """Orthogonal Procrustes update ``R = U Vᵀ`` from the accumulated statistics."""
    return acc.solve()


@dataclass
class BlockDiagonalRotation:
    """Block-diagonal orthogonal operator; ``blocks`` has shape ``(n_blocks, k, k)``."""

    blocks: np.ndarray

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks, dtype=np.float64)
        if self.blocks.ndim != 3 or self.blocks.shape[1] != self.blocks.shape[2]:
            raise InvalidInputError(f"blocks must be (n, k, k), got {self.blocks.shape}")

    @classmethod
    def identity(cls, n_blocks: int, block_dim: int) -> "BlockDiagonalRotation":
        return cls(np.broadcast_to(np.eye(block_dim), (n_blocks, block_dim, block_dim)).copy())

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def block_dim(self) -> int:
        return self.blocks.shape[1]

    @property
    def dim(self) -> int:
        return self.n_blocks * self.block_dim

    def dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        k = self.block_dim
        for i, b in enumerate(self.blocks):
            out[i * k:(i + 1) * k, i * k:(i + 1) * k] = b
        return out

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Rotate rows: returns ``x Rᵀ`` computed block by block."""
        x = np.asarray(x, dtype=np.float64)
        lead = x.shape[:-1]
        xs = x.reshape(-1, self.n_blocks, self.block_dim)
        return np.einsum("nhj,hij->nhi", xs, self.blocks).reshape(*lead, self.dim)

    def apply_inverse(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        lead = x.shape[:-1]
        xs = x.reshape(-1, self.n_blocks, self.block_dim)
        return np.einsum("nhi,hij->nhj", xs, self.blocks).reshape(*lead, self.dim)


def opu_blockdiag(accs: list[ProcrustesAccumulator]) -> BlockDiagonalRotation:
    """Solve one Procrustes problem per block and assemble them."""
    if not accs:
        raise InvalidInputError("need at least one accumulator")
    k = accs[0].d
    blocks = []
    for i, acc in enumerate(accs):
        if acc.d != k:
            raise InvalidInputError(f"block {i} has dim {acc.d}, expected {k}")
        if acc.n_samples == 0:
            raise EmptyAccumulatorError(f"accumulator for block {i} is empty")
        blocks.append(acc.solve())
    return BlockDiagonalRotation(np.stack(blocks))


def alternate(r0: np.ndarray, batch: NormalizedBatch, steps: int, history: list | None = None) -> np.ndarray:
    """Alternate target selection and Procrustes solves on a fixed batch.

    If ``history`` is given, the corner objective before each step and after
    the last one is appended to it.
    """
    if steps < 1:
        raise InvalidInputError("steps must be >= 1")
    r = np.asarray(r0, dtype=np.float64)
    acc = ProcrustesAccumulator(batch.d)
    for _ in range(steps):
        if history is not None:
            history.append(corner_objective(r, batch))
        acc.reset()
        acc.add(r, batch.xt)
        r = acc.solve()
    if history is not None:
        history.append(corner_objective(r, batch))
    return r
