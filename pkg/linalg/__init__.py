from .dense import (
    DenseMatrix,
    as_dense,
    as_vector,
    ensure_finite,
    frobenius_norm,
    matmul,
    operator_norm,
    relative_error,
    signs,
)
from .solvers import pinv_solve, solve_spd, solve_spd_batched
from .svd import ThinSVD, thin_svd

__all__ = [
    "DenseMatrix",
    "as_dense",
    "as_vector",
    "ensure_finite",
    "frobenius_norm",
    "matmul",
    "operator_norm",
    "relative_error",
    "signs",
    "pinv_solve",
    "solve_spd",
    "solve_spd_batched",
    "ThinSVD",
    "thin_svd",
]
