"""Thin SVD by one-sided (Hestenes) Jacobi rotations."""
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from config import settings
from utils.errors import ConvergenceError, ShapeMismatchError
from utils.logger import log

from .dense import DenseMatrix, as_dense


class ThinSVD(BaseModel):
    """m ≈ u · diag(s) · vt with s descending."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.s.shape[0])

    def reconstruct(self) -> DenseMatrix:
        return (self.u * self.s) @ self.vt


def null_norm(shape, frobenius: float) -> float:
    """Row norm at or below which a rotated row is treated as numerically zero."""
    n, p = shape
    return n * p * np.finfo(np.float64).eps * frobenius


def _jacobi_orthogonalize(rows: np.ndarray, max_sweeps: int) -> np.ndarray:
    """Rotate the rows of ``rows`` (n×p, n ≤ p) in place until mutually orthogonal.

    Returns the accumulated n×n rotation V with rows_out = V.T-applied rows_in,
    i.e. (rows_in.T @ V).T == rows_out.
    """
    n, p = rows.shape
    v = np.eye(n)
    tol = max(n, p) * np.finfo(np.float64).eps
    # Null rows count as converged; rotating them only stirs roundoff.
    floor = null_norm(rows.shape, float(np.linalg.norm(rows))) ** 2
    for sweep in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                ri = rows[i]
                rj = rows[j]
                gamma = float(ri @ rj)
                if gamma == 0.0:
                    continue
                alpha = float(ri @ ri)
                beta = float(rj @ rj)
                if min(alpha, beta) <= floor:
                    continue
                if abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = (1.0 if zeta >= 0.0 else -1.0) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                old_i = ri.copy()
                rows[i] = c * old_i - s * rj
                rows[j] = s * old_i + c * rj
                vi = v[:, i].copy()
                v[:, i] = c * vi - s * v[:, j]
                v[:, j] = s * vi + c * v[:, j]
        if not rotated:
            log.debug(f"Jacobi converged after {sweep + 1} sweeps (n={n}, p={p})")
            return v
    raise ConvergenceError(
        f"one-sided Jacobi did not converge within {max_sweeps} sweeps; matrix may be ill-conditioned"
    )


def _complete_orthonormal(basis: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Replace columns of ``basis`` where ``filled`` is False by an orthonormal completion."""
    p = basis.shape[0]
    candidates = iter(np.eye(p))
    for col in np.flatnonzero(~filled):
        for e in candidates:
            kept = basis[:, filled]
            w = e - kept @ (kept.T @ e)
            w -= kept @ (kept.T @ w)
            norm = np.linalg.norm(w)
            if norm > 1e-8:
                basis[:, col] = w / norm
                filled[col] = True
                break
    return basis


def thin_svd(m: DenseMatrix, k: int, max_sweeps: Optional[int] = None) -> ThinSVD:
    """Rank-k thin SVD; the truncation is the Eckart–Young optimum."""
    m = as_dense(m)
    n_rows, n_cols = m.shape
    if not 1 <= k <= min(n_rows, n_cols):
        raise ShapeMismatchError(f"k={k} must lie in [1, {min(n_rows, n_cols)}] for shape {m.shape}")
    max_sweeps = max_sweeps or settings.SVD_MAX_SWEEPS

    # Rotate the columns of the tall orientation, so the Gram side is the smaller dimension.
    transposed = n_rows < n_cols
    tall = m.T if transposed else m
    rows = np.array(tall.T, dtype=np.float64, copy=True)
    v = _jacobi_orthogonalize(rows, max_sweeps)

    norms = np.linalg.norm(rows, axis=1)
    order = np.argsort(-norms, kind="stable")[:k]
    s = norms[order]
    cutoff = max(
        max(tall.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0),
        null_norm(tall.shape, float(np.linalg.norm(tall))),
    )
    nonzero = s > cutoff
    s = np.where(nonzero, s, 0.0)

    left = np.zeros((tall.shape[0], k))
    left[:, nonzero] = (rows[order][nonzero] / s[nonzero, None]).T
    left = _complete_orthonormal(left, nonzero.copy())
    right = v[:, order]

    u, vt = (right, left.T) if transposed else (left, right.T)

    # Deterministic sign: largest-magnitude entry of each left vector is positive.
    pivots = np.argmax(np.abs(u), axis=0)
    flip = np.where(u[pivots, np.arange(k)] < 0.0, -1.0, 1.0)
    return ThinSVD(u=np.ascontiguousarray(u * flip), s=s, vt=np.ascontiguousarray(vt * flip[:, None]))
