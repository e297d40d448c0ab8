from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from linalg import as_dense
from utils.errors import ShapeMismatchError

from .adapter import ArrayModel, ScaleEnvelope, SignMatrix


class ADMMState(BaseModel):
    """Iterate of the scaled consensus ADMM.

    Binary copies ``m1``/``m2`` are kept as dense ±1 arrays for arithmetic;
    ``packed_carriers()`` gives their bit-packed form.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    u1: np.ndarray
    u2: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    envelopes: List[ScaleEnvelope]
    rho: float = Field(ge=0.0)
    sweep: int = 0
    objective_history: List[float] = Field(default_factory=list)
    freeze_sweep: Optional[int] = None
    # sweep count after which the binary copies last changed (0 = warm start)
    last_change: int = 0
    m_changed: bool = False
    m_change_norms: Tuple[float, float] = (0.0, 0.0)
    primal_residual_history: List[float] = Field(default_factory=list)
    dual_residual_history: List[float] = Field(default_factory=list)
    rho_history: List[float] = Field(default_factory=list)
    dual_identity_history: List[float] = Field(default_factory=list)
    margin_history: List[float] = Field(default_factory=list)
    best_objective: Optional[float] = None
    best_carriers: Optional[Tuple[np.ndarray, np.ndarray]] = None
    best_envelopes: Optional[List[ScaleEnvelope]] = None

    @property
    def n(self) -> int:
        return self.u1.shape[0]

    @property
    def rank(self) -> int:
        return self.u1.shape[1]

    @property
    def m(self) -> int:
        return self.u2.shape[1]

    @property
    def block_sizes(self) -> Tuple[int, int]:
        """(n₁, n₂) = (NR, RM)."""
        return (self.n * self.rank, self.rank * self.m)

    def rho_tilde(self, block: int) -> float:
        return self.rho / self.block_sizes[block - 1]

    def packed_carriers(self) -> Tuple[SignMatrix, SignMatrix]:
        return SignMatrix.from_dense(self.m1), SignMatrix.from_dense(self.m2)


class ToyTask(ArrayModel):
    """Regression task Y ≈ X·(W0 + ΔW) around a frozen base W0."""

    x: np.ndarray
    y: np.ndarray
    w0: np.ndarray

    @field_validator("x", "y", "w0", mode="before")
    @classmethod
    def _dense(cls, value, info):
        arr = np.array(as_dense(value, info.field_name), copy=True)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check_shapes(self):
        t, n = self.x.shape
        if self.y.shape[0] != t or self.w0.shape != (n, self.y.shape[1]):
            raise ShapeMismatchError(
                f"inconsistent task shapes X{self.x.shape}, Y{self.y.shape}, W0{self.w0.shape}"
            )
        return self

    @property
    def samples(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.y.shape[1]

    def delta_target(self) -> np.ndarray:
        """Least-squares estimate of the weight update explaining Y − X·W0."""
        solution, *_ = np.linalg.lstsq(self.x, self.y - self.x @ self.w0, rcond=None)
        return solution


class QATState(BaseModel):
    """Latent carriers, scales and AdamW moments of a QAT run."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    h1: np.ndarray
    h2: np.ndarray
    envelopes: List[ScaleEnvelope]
    moments: Dict[str, np.ndarray] = Field(default_factory=dict)
    step: int = 0
    kappa: float = Field(default=100.0, gt=0.0)
    loss_history: List[float] = Field(default_factory=list)

    @property
    def n(self) -> int:
        return self.h1.shape[0]

    @property
    def rank(self) -> int:
        return self.h1.shape[1]

    @property
    def m(self) -> int:
        return self.h2.shape[1]
