"""Dense 64-bit matrix helpers.

A ``DenseMatrix`` is a C-contiguous 2-D ``numpy.ndarray`` of float64.
"""
from typing import Optional

import numpy as np

from utils.errors import NonFiniteError, ShapeMismatchError

DenseMatrix = np.ndarray


def as_dense(x, name: str = "matrix") -> DenseMatrix:
    """Coerce to a finite float64 2-D array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got shape {arr.shape}")
    ensure_finite(arr, name)
    return arr


def as_vector(x, name: str = "vector") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeMismatchError(f"{name} must be 1-D, got shape {arr.shape}")
    ensure_finite(arr, name)
    return arr


def ensure_finite(arr: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return arr


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """Exact dense product in 64-bit arithmetic."""
    a = as_dense(a, "a")
    b = as_dense(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"cannot multiply {a.shape} by {b.shape}")
    return ensure_finite(a @ b, "product")


def frobenius_norm(m: DenseMatrix) -> float:
    return float(np.linalg.norm(m))


def relative_error(approx: DenseMatrix, reference: DenseMatrix) -> float:
    """‖approx − reference‖_F / ‖reference‖_F (0 when both vanish)."""
    if approx.shape != reference.shape:
        raise ShapeMismatchError(f"shape {approx.shape} vs {reference.shape}")
    denom = frobenius_norm(reference)
    num = frobenius_norm(approx - reference)
    if denom == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return num / denom


def operator_norm(m: DenseMatrix, iterations: int = 200, tol: float = 1e-12, seed: Optional[int] = 0) -> float:
    """Spectral norm by power iteration on mᵀm."""
    m = as_dense(m)
    if not m.any():
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(m.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iterations):
        w = m.T @ (m @ v)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
        new_sigma = float(np.linalg.norm(m @ v))
        if abs(new_sigma - sigma) <= tol * max(new_sigma, 1.0):
            return new_sigma
        sigma = new_sigma
    return sigma


def signs(m: np.ndarray) -> np.ndarray:
    """Entrywise sign with sign(0) = +1."""
    return np.where(np.asarray(m) >= 0.0, 1.0, -1.0)
