from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from linalg import as_dense, as_vector
from utils.errors import ShapeMismatchError

WORD_BITS = 64

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)


def popcount64(words: np.ndarray) -> np.ndarray:
    """Set-bit count of each uint64 word (SWAR)."""
    x = np.asarray(words, dtype=np.uint64)
    x = x - ((x >> np.uint64(1)) & _M1)
    x = (x & _M2) + ((x >> np.uint64(2)) & _M2)
    x = (x + (x >> np.uint64(4))) & _M4
    return (x * _H01) >> np.uint64(56)


def _frozen_copy(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


class ArrayModel(BaseModel):
    """Base model for immutable containers of numpy arrays."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# ========== LoRA ==========

class LoRAFactors(ArrayModel):
    """ΔW = A·Bᵀ with A: N×r₀, B: M×r₀."""

    a: np.ndarray
    b: np.ndarray

    @field_validator("a", "b", mode="before")
    @classmethod
    def _dense(cls, value, info):
        return _frozen_copy(as_dense(value, info.field_name))

    @model_validator(mode="after")
    def _check_rank(self):
        if self.a.shape[1] != self.b.shape[1] or self.a.shape[1] < 1:
            raise ShapeMismatchError(
                f"factor ranks differ or are empty: A is {self.a.shape}, B is {self.b.shape}"
            )
        return self

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @property
    def r0(self) -> int:
        return self.a.shape[1]

    def product(self) -> np.ndarray:
        return self.a @ self.b.T


# ========== Carriers ==========

def words_per_row(cols: int) -> int:
    return (cols + WORD_BITS - 1) // WORD_BITS


class SignMatrix(ArrayModel):
    """Bit-packed ±1 matrix.

    Row-major; bit b of word w in row i encodes column 64·w + b (bit 1 = +1,
    bit 0 = −1). Each row is padded to whole 64-bit words with zero bits.
    """

    rows: int = Field(ge=1)
    cols: int = Field(ge=1)
    words: np.ndarray

    @field_validator("words", mode="before")
    @classmethod
    def _words(cls, value):
        return _frozen_copy(np.ascontiguousarray(value, dtype=np.uint64))

    @model_validator(mode="after")
    def _check_layout(self):
        expected = (self.rows, words_per_row(self.cols))
        if self.words.shape != expected:
            raise ShapeMismatchError(f"packed words have shape {self.words.shape}, expected {expected}")
        pad = expected[1] * WORD_BITS - self.cols
        if pad and np.any(self.words[:, -1] >> np.uint64(WORD_BITS - pad)):
            raise ShapeMismatchError("padding bits beyond the last column must be zero")
        return self

    @classmethod
    def from_dense(cls, dense) -> "SignMatrix":
        """Pack the signs of ``dense`` (sign(0) = +1)."""
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 2:
            raise ShapeMismatchError(f"expected 2-D array, got {dense.shape}")
        return cls.from_mask(dense >= 0.0)

    @classmethod
    def from_mask(cls, positive: np.ndarray) -> "SignMatrix":
        rows, cols = positive.shape
        wpr = words_per_row(cols)
        padded = np.zeros((rows, wpr * WORD_BITS), dtype=bool)
        padded[:, :cols] = positive
        packed = np.packbits(padded, axis=1, bitorder="little")
        words = np.ascontiguousarray(packed).view("<u8").astype(np.uint64)
        return cls(rows=rows, cols=cols, words=words.reshape(rows, wpr))

    @property
    def words_per_row(self) -> int:
        return self.words.shape[1]

    @property
    def shape(self):
        return (self.rows, self.cols)

    def positive_mask(self) -> np.ndarray:
        """Boolean rows×cols mask of the +1 entries."""
        as_bytes = np.ascontiguousarray(self.words.astype("<u8")).view(np.uint8)
        bits = np.unpackbits(as_bytes.reshape(self.rows, -1), axis=1, bitorder="little")
        return bits[:, : self.cols].astype(bool)

    def row_mask(self, i: int) -> np.ndarray:
        row = np.ascontiguousarray(self.words[i].astype("<u8")).view(np.uint8)
        return np.unpackbits(row, bitorder="little", count=self.cols).astype(bool)

    def to_dense(self) -> np.ndarray:
        return np.where(self.positive_mask(), 1.0, -1.0)

    def transpose(self) -> "SignMatrix":
        return SignMatrix.from_mask(self.positive_mask().T)

    def row_popcounts(self) -> np.ndarray:
        """Number of +1 entries in each row; padding bits are zero."""
        return popcount64(self.words).sum(axis=1).astype(np.int64)

    @property
    def payload_bits(self) -> int:
        return self.rows * self.cols

    def same_bits(self, other: "SignMatrix") -> bool:
        return self.shape == other.shape and np.array_equal(self.words, other.words)


# ========== Scales ==========

class ScaleEnvelope(ArrayModel):
    """One (α, β, γ) scale triple of lengths N, R, M."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    @field_validator("alpha", "beta", "gamma", mode="before")
    @classmethod
    def _vector(cls, value, info):
        return _frozen_copy(as_vector(value, info.field_name))

    @classmethod
    def zeros(cls, n: int, r: int, m: int) -> "ScaleEnvelope":
        return cls(alpha=np.zeros(n), beta=np.zeros(r), gamma=np.zeros(m))

    @classmethod
    def ones(cls, n: int, r: int, m: int) -> "ScaleEnvelope":
        return cls(alpha=np.ones(n), beta=np.ones(r), gamma=np.ones(m))

    @property
    def dims(self):
        return (self.alpha.shape[0], self.beta.shape[0], self.gamma.shape[0])

    def term(self, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
        """diag(α)·c1·diag(β)·c2·diag(γ) for dense carriers c1, c2."""
        return ((self.alpha[:, None] * c1) * self.beta) @ (c2 * self.gamma)


# ========== LoRDBA adapter ==========

class LoRDBAAdapter(ArrayModel):
    """Carriers B₁ (N×R), B₂ (R×M) shared by ℓ scale envelopes, plus the reference LoRA rank r₀."""

    b1: SignMatrix
    b2: SignMatrix
    envelopes: List[ScaleEnvelope] = Field(min_length=1)
    r0_ref: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.b1.cols != self.b2.rows:
            raise ShapeMismatchError(f"carrier ranks differ: B1 is {self.b1.shape}, B2 is {self.b2.shape}")
        dims = (self.b1.rows, self.b1.cols, self.b2.cols)
        for i, env in enumerate(self.envelopes):
            if env.dims != dims:
                raise ShapeMismatchError(f"envelope {i} has lengths {env.dims}, expected (N, R, M) = {dims}")
        return self

    @classmethod
    def from_dense(cls, b1, b2, envelopes, r0_ref: int) -> "LoRDBAAdapter":
        return cls(
            b1=SignMatrix.from_dense(b1),
            b2=SignMatrix.from_dense(b2),
            envelopes=list(envelopes),
            r0_ref=r0_ref,
        )

    @property
    def n(self) -> int:
        return self.b1.rows

    @property
    def m(self) -> int:
        return self.b2.cols

    @property
    def rank(self) -> int:
        return self.b1.cols

    @property
    def ell(self) -> int:
        return len(self.envelopes)

    def with_envelopes(self, envelopes: List[ScaleEnvelope]) -> "LoRDBAAdapter":
        return LoRDBAAdapter(b1=self.b1, b2=self.b2, envelopes=list(envelopes), r0_ref=self.r0_ref)


# ========== Kernel layout ==========

class PackedAdapter(ArrayModel):
    """Adapter with both carriers packed along their reduction axis.

    ``b1_cols`` holds B₁ column-major (row k = column k of B₁, N bits) and
    ``b2_cols`` holds B₂ column-major (row j = column j of B₂, R bits), so every
    output column of the two sign-accumulation passes reads one contiguous bit row.
    ``popcounts`` tables count the +1 bits per packed row.
    """

    b1_cols: SignMatrix
    b2_cols: SignMatrix
    envelopes: List[ScaleEnvelope] = Field(min_length=1)
    r0_ref: int = Field(ge=1)
    popcounts1: np.ndarray
    popcounts2: np.ndarray

    @classmethod
    def from_adapter(cls, adapter: LoRDBAAdapter) -> "PackedAdapter":
        b1_cols = adapter.b1.transpose()
        b2_cols = adapter.b2.transpose()
        return cls(
            b1_cols=b1_cols,
            b2_cols=b2_cols,
            envelopes=list(adapter.envelopes),
            r0_ref=adapter.r0_ref,
            popcounts1=b1_cols.row_popcounts(),
            popcounts2=b2_cols.row_popcounts(),
        )

    def to_adapter(self) -> LoRDBAAdapter:
        return LoRDBAAdapter(
            b1=self.b1_cols.transpose(),
            b2=self.b2_cols.transpose(),
            envelopes=list(self.envelopes),
            r0_ref=self.r0_ref,
        )

    @property
    def n(self) -> int:
        return self.b1_cols.cols

    @property
    def rank(self) -> int:
        return self.b1_cols.rows

    @property
    def m(self) -> int:
        return self.b2_cols.rows

    @property
    def ell(self) -> int:
        return len(self.envelopes)
