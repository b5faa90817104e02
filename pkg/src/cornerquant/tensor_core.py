"""Dense linear-algebra primitives: SVD, orthogonal sampling, Hadamard transforms.

Every routine works in float64. Random matrices are drawn from numpy's
``PCG64`` bit generator (via :func:`numpy.random.default_rng`), so a given
``(dim, seed)`` pair always produces the same matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError, NumericalError

__all__ = [
    "SvdResult",
    "svd",
    "random_orthogonal",
    "hadamard_transform",
    "hadamard_matrix",
    "random_hadamard",
    "orthogonality_residual",
    "is_power_of_two",
    "rng",
]

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60


def rng(seed) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` (int or sequence of ints)."""
    return np.random.Generator(np.random.PCG64(seed))


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def orthogonality_residual(q: np.ndarray) -> float:
    """``max |QᵀQ - I|``."""
    q = np.asarray(q, dtype=np.float64)
    return float(np.max(np.abs(q.T @ q - np.eye(q.shape[1]))))


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


@lru_cache(maxsize=64)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    # Tournament schedule: n-1 rounds of n/2 disjoint column pairs (n even).
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        p = np.array([players[i] for i in range(n // 2)])
        q = np.array([players[n - 1 - i] for i in range(n // 2)])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _complete_basis(u: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace the columns of ``u`` not in ``keep`` with an orthonormal completion."""
    m = u.shape[0]
    basis = [u[:, j] for j in range(u.shape[1]) if keep[j]]
    extra = []
    for e in np.eye(m):
        if len(basis) + len(extra) == u.shape[1]:
            break
        v = e.copy()
        for _ in range(2):
            for b in basis + extra:
                v -= (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            extra.append(v / nv)
    out = u.copy()
    missing = np.flatnonzero(~keep)
    for j, v in zip(missing, extra):
        out[:, j] = v
    return out


def svd(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> SvdResult:
    """Full SVD of a square matrix by one-sided (Hestenes) Jacobi.

    Column pairs are orthogonalised with plane rotations in a parallel
    round-robin order until every pair satisfies
    ``|a_p . a_q| <= tol * |a_p| |a_q|``. Columns whose norm falls below
    ``n * eps * ||A||_F`` are treated as zero singular values; their left
    singular vectors are completed to an orthonormal basis deterministically
    (Gram-Schmidt over the standard basis).

    Parameters
    ----------
    a : (n, n) array_like
        Finite real matrix.
    tol : float
        Relative off-orthogonality threshold that ends the sweeps.
    max_sweeps : int
        Sweep cap; exceeding it raises :class:`NumericalError`.

    Returns
    -------
    SvdResult
        ``u`` and ``vt`` square orthogonal, ``sigma`` sorted descending.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"svd expects a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("svd input contains non-finite entries")
    n = a.shape[0]
    if n == 0:
        raise InvalidInputError("svd input is empty")

    # Pad to an even column count with a zero column; it never rotates.
    n_pad = n + (n % 2)
    work = np.zeros((n, n_pad))
    work[:, :n] = a
    v = np.eye(n_pad)
    # Columns below this norm are rounding noise of an exactly singular matrix.
    floor = n * np.finfo(np.float64).eps * np.linalg.norm(a)
    floor_sq = floor * floor

    if n_pad > 1:
        rounds = _round_robin(n_pad)
        for _ in range(max_sweeps):
            off = 0.0
            for p, q in rounds:
                ap, aq = work[:, p], work[:, q]
                alpha = np.einsum("ij,ij->j", ap, ap)
                beta = np.einsum("ij,ij->j", aq, aq)
                gamma = np.einsum("ij,ij->j", ap, aq)
                scale = np.sqrt(alpha * beta)
                active = (np.abs(gamma) > tol * scale) & (alpha > floor_sq) & (beta > floor_sq)
                if not np.any(active):
                    continue
                with np.errstate(divide="ignore", invalid="ignore"):
                    off = max(off, float(np.max(np.abs(gamma[active]) / scale[active])))
                # tan of the rotation angle, t = γ sgn(δ) / (|δ| + hypot(γ, δ)); overflow-free
                delta = 0.5 * (beta - alpha)
                denom = np.where(active, np.abs(delta) + np.hypot(gamma, delta), 1.0)
                t = np.where(active, np.where(delta >= 0, gamma, -gamma) / denom, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                work[:, p], work[:, q] = c * ap - s * aq, s * ap + c * aq
                vp, vq = v[:, p], v[:, q]
                v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
            if off <= tol:
                break
        else:
            raise NumericalError(f"Jacobi SVD did not converge in {max_sweeps} sweeps")

    work, v = work[:, :n], v[:n, :n]
    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, work, v = sigma[order], work[:, order], v[:, order]

    keep = sigma > floor
    u = np.zeros((n, n))
    u[:, keep] = work[:, keep] / sigma[keep]
    if not np.all(keep):
        sigma = np.where(keep, sigma, 0.0)
        u = _complete_basis(u, keep)
    return SvdResult(u=u, sigma=sigma, vt=v.T.copy())


def random_orthogonal(dim: int, seed) -> np.ndarray:
    """Orthogonal matrix from the QR factorisation of a seeded Gaussian matrix.

    The sign of each column is fixed so ``diag(R)`` of the QR is positive,
    which makes the draw Haar distributed.
    """
    if dim < 1:
        raise InvalidInputError("dim must be >= 1")
    g = rng(seed).standard_normal((dim, dim))
    q, r = np.linalg.qr(g)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs


def hadamard_transform(x: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Fast Walsh-Hadamard transform along the last axis.

    Sylvester ordering; with ``normalize`` the result is scaled by
    ``1/sqrt(d)`` so the operator is orthogonal and self-inverse.
    """
    x = np.array(x, dtype=np.float64)
    d = x.shape[-1]
    if not is_power_of_two(d):
        raise InvalidInputError(f"Hadamard length must be a power of 2, got {d}")
    lead = x.shape[:-1]
    y = x.reshape(-1, d)
    h = 1
    while h < d:
        y = y.reshape(-1, d // (2 * h), 2, h)
        a, b = y[:, :, 0, :], y[:, :, 1, :]
        y = np.stack((a + b, a - b), axis=2)
        h *= 2
    y = y.reshape(*lead, d)
    if normalize:
        y /= np.sqrt(d)
    return y


@lru_cache(maxsize=32)
def _hadamard_cached(dim: int) -> np.ndarray:
    m = hadamard_transform(np.eye(dim), normalize=True)
    m.setflags(write=False)
    return m


def hadamard_matrix(dim: int) -> np.ndarray:
    """Normalized Sylvester Hadamard matrix (symmetric, orthogonal)."""
    if not is_power_of_two(dim):
        raise InvalidInputError(f"Hadamard dimension must be a power of 2, got {dim}")
    return _hadamard_cached(dim).copy()


def random_hadamard(dim: int, seed=None, signs: np.ndarray | None = None) -> np.ndarray:
    """Normalized Hadamard matrix times a random ``±1`` diagonal: ``H @ diag(s)``.

    ``signs`` overrides the seeded draw.
    """
    h = hadamard_matrix(dim)
    if signs is None:
        signs = rng(seed).choice(np.array([-1.0, 1.0]), size=dim)
    signs = np.asarray(signs, dtype=np.float64)
    if signs.shape != (dim,):
        raise InvalidInputError("signs must have length dim")
    return h * signs
