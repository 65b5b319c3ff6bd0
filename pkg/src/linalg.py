"""
Dense linear-algebra kernels used by similarity and clustering.

All functions are pure: they never modify their inputs and hold no state, so
they can be called from worker threads freely.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.special import entr, log_softmax, softmax
from sklearn.utils.extmath import randomized_svd

from .errors import InvalidArgumentError

ORTHONORMAL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class OrthonormalBasis:
    """A d×p matrix whose columns are orthonormal"""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        vectors = np.array(self.vectors, dtype=float, copy=True)
        if vectors.ndim == 1:
            vectors = vectors[:, None]
        if vectors.ndim != 2 or vectors.shape[1] < 1:
            raise InvalidArgumentError(f"Basis must be a d×p matrix, got shape {vectors.shape}")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def p(self) -> int:
        return int(self.vectors.shape[1])

    def projector(self) -> np.ndarray:
        return self.vectors @ self.vectors.T

    def is_orthonormal(self, tol: float = ORTHONORMAL_TOL) -> bool:
        gram = self.vectors.T @ self.vectors
        return bool(np.allclose(gram, np.eye(self.p), atol=tol, rtol=0.0))


def _as_finite_matrix(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got {arr.ndim}-D")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return arr


def _fix_signs(u: np.ndarray) -> np.ndarray:
    # First nonzero component of every column made non-negative
    u = u.copy()
    for col in range(u.shape[1]):
        column = u[:, col]
        scale = np.max(np.abs(column))
        if scale == 0.0:
            continue
        nonzero = np.flatnonzero(np.abs(column) > 1e-12 * scale)
        if column[nonzero[0]] < 0:
            u[:, col] = -column
    return u


def truncated_svd(
    m: np.ndarray,
    p: int,
    method: str = "exact",
    seed: int = 0,
) -> OrthonormalBasis:
    """
    Top-p left singular vectors of m.

    Args:
        m: Finite rows×cols matrix
        p: Number of singular vectors, 1 ≤ p ≤ min(rows, cols)
        method: "exact" (LAPACK gesdd) or "randomized" (range finder)
        seed: Seed of the randomized range finder

    Returns:
        Orthonormal basis with the sign of each vector fixed

    Raises:
        InvalidArgumentError: On out-of-range p, non-finite input or unknown method
    """
    arr = _as_finite_matrix(m)
    rows, cols = arr.shape
    if not isinstance(p, (int, np.integer)) or p < 1 or p > min(rows, cols):
        raise InvalidArgumentError(f"p must be in [1, {min(rows, cols)}], got {p}")

    if method == "exact":
        u, _, _ = scipy.linalg.svd(arr, full_matrices=False, lapack_driver="gesdd")
        u = u[:, :p]
    elif method == "randomized":
        u, _, _ = randomized_svd(arr, n_components=int(p), random_state=seed)
    else:
        raise InvalidArgumentError(f"Unknown SVD method: {method}")

    return OrthonormalBasis(_fix_signs(u))


def principal_angles(a: OrthonormalBasis, b: OrthonormalBasis) -> np.ndarray:
    """All principal angles between span(a) and span(b), ascending, in degrees"""
    if a.dim != b.dim:
        raise InvalidArgumentError(f"Dimension mismatch: {a.dim} vs {b.dim}")
    sigma = scipy.linalg.svdvals(a.vectors.T @ b.vectors)
    return np.degrees(np.arccos(np.clip(sigma, -1.0, 1.0)))


def principal_angle_min(a: OrthonormalBasis, b: OrthonormalBasis) -> float:
    """
    Smallest principal angle between two subspaces.

    Computed as arccos of the largest singular value of aᵀb, clamped to
    [0, 90] degrees.
    """
    if a.dim != b.dim:
        raise InvalidArgumentError(f"Dimension mismatch: {a.dim} vs {b.dim}")
    sigma_max = float(np.max(scipy.linalg.svdvals(a.vectors.T @ b.vectors)))
    angle = float(np.degrees(np.arccos(min(max(sigma_max, 0.0), 1.0))))
    return min(max(angle, 0.0), 90.0)


def _included_mask(shape: Tuple[int, int], exclude_diagonal: bool) -> np.ndarray:
    mask = np.ones(shape, dtype=bool)
    if exclude_diagonal:
        np.fill_diagonal(mask, False)
    return mask


def minmax_normalize(m: np.ndarray, exclude_diagonal: bool = False) -> np.ndarray:
    """
    Min-max normalize a matrix into [0, 1].

    Args:
        m: Matrix (square when exclude_diagonal is set)
        exclude_diagonal: Ignore the diagonal for the range and force it to 0

    Returns:
        New matrix; a degenerate range maps every included entry to 0
    """
    arr = np.array(m, dtype=float, copy=True)
    if exclude_diagonal and (arr.ndim != 2 or arr.shape[0] != arr.shape[1]):
        raise InvalidArgumentError("exclude_diagonal requires a square matrix")
    mask = _included_mask(arr.shape, exclude_diagonal) if arr.ndim == 2 else np.ones(arr.shape, bool)
    out = np.zeros_like(arr)
    values = arr[mask]
    if values.size:
        lo, hi = float(values.min()), float(values.max())
        if hi > lo:
            out[mask] = (values - lo) / (hi - lo)
    return out


def minmax_bounds(m: np.ndarray, exclude_diagonal: bool = False) -> Tuple[float, float]:
    """(min, max) over the entries minmax_normalize would use"""
    arr = np.asarray(m, dtype=float)
    mask = _included_mask(arr.shape, exclude_diagonal)
    values = arr[mask]
    if values.size == 0:
        return 0.0, 0.0
    return float(values.min()), float(values.max())


def normalize_with_bounds(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Normalize with fixed bounds and clip into [0, 1]"""
    arr = np.asarray(values, dtype=float)
    if hi <= lo:
        return np.zeros_like(arr)
    return np.clip((arr - lo) / (hi - lo), 0.0, 1.0)


def row_softmax(a: np.ndarray) -> np.ndarray:
    return softmax(np.asarray(a, dtype=float), axis=1)


def row_softmax_entropy(a: np.ndarray) -> float:
    """
    Mean row entropy of the row-wise softmax of a (natural log).

    Lies in [0, ln N] for an N×N input.
    """
    arr = _as_finite_matrix(a)
    probs = softmax(arr, axis=1)
    return float(entr(probs).sum() / arr.shape[0])


def row_softmax_entropy_grad(a: np.ndarray, probs: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Gradient of row_softmax_entropy with respect to every entry of a.

    For row i with softmax P and entropy H_i:
    dL/da_ik = -(1/N)·P_ik·(log P_ik + H_i).
    """
    arr = np.asarray(a, dtype=float)
    log_p = log_softmax(arr, axis=1)
    p = np.exp(log_p) if probs is None else probs
    h = -(p * log_p).sum(axis=1, keepdims=True)
    return -(p * (log_p + h)) / arr.shape[0]
