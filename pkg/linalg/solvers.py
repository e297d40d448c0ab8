"""SPD and pseudoinverse solves used by the U-step and the β-update."""
import numpy as np

from utils.errors import NonPositivePivotError, ShapeMismatchError

from .dense import ensure_finite

PINV_RELATIVE_CUTOFF = 1e-12


def _check_square(g: np.ndarray, rhs: np.ndarray) -> None:
    if g.shape[-1] != g.shape[-2]:
        raise ShapeMismatchError(f"system matrix must be square, got {g.shape}")
    if rhs.shape[-1] != g.shape[-1]:
        raise ShapeMismatchError(f"rhs length {rhs.shape[-1]} does not match system size {g.shape[-1]}")


def solve_spd(g: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve g·x = rhs for symmetric positive definite g by Cholesky."""
    g = np.asarray(g, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if g.ndim != 2 or rhs.ndim != 1:
        raise ShapeMismatchError(f"expected matrix and vector, got {g.shape} and {rhs.shape}")
    return solve_spd_batched(g[None], rhs[None])[0]


def solve_spd_batched(g: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a stack of SPD systems g[b]·x[b] = rhs[b]; each system is independent."""
    g = np.asarray(g, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    _check_square(g, rhs)
    try:
        chol = np.linalg.cholesky(g)
    except np.linalg.LinAlgError as e:
        raise NonPositivePivotError(f"non-positive pivot in Cholesky factorization: {e}") from e
    y = np.linalg.solve(chol, rhs[..., None])
    x = np.linalg.solve(np.swapaxes(chol, -1, -2), y)[..., 0]
    return ensure_finite(x, "SPD solution")


def pinv_solve(g: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares solution G†·rhs for symmetric PSD g.

    Eigenvalues below 1e-12·λ_max count as zero.
    """
    g = np.asarray(g, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    _check_square(g, rhs)
    sym = 0.5 * (g + g.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    lam_max = float(eigvals.max(initial=0.0))
    if lam_max <= 0.0:
        return np.zeros_like(rhs)
    keep = eigvals > PINV_RELATIVE_CUTOFF * lam_max
    coeffs = (eigvecs[:, keep].T @ rhs) / eigvals[keep]
    return ensure_finite(eigvecs[:, keep] @ coeffs, "pseudoinverse solution")
