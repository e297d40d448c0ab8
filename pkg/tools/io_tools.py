"""LBA1 adapter files, LRF1 factor files and dense matrix dumps.

All integers and floats are little-endian; every file ends with the CRC32 of
the bytes before it. Byte layouts are documented in docs/formats.md.
"""
import struct
import zlib
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from models import LoRAFactors, LoRDBAAdapter, ScaleEnvelope, SignMatrix, words_per_row
from utils import log
from utils.errors import (
    BadMagicError,
    CrcMismatchError,
    FormatError,
    LordbaError,
    NonFiniteError,
    ShapeInconsistencyError,
    TruncatedFileError,
    UnsupportedVersionError,
)

PathLike = Union[str, Path]

ADAPTER_MAGIC = b"LBA1"
FACTOR_MAGIC = b"LRF1"
FORMAT_VERSION = 1
ADAPTER_HEADER = struct.Struct("<4sHH5I")
FACTOR_HEADER = struct.Struct("<4sHH3I")
CRC = struct.Struct("<I")


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def file_crc32(path: PathLike) -> str:
    """Hex CRC32 of a whole file, as embedded in run reports."""
    return f"{crc32(Path(path).read_bytes()):08x}"


def _take(data: bytes, size: int) -> Tuple[bytes, bytes]:
    if len(data) < size:
        raise TruncatedFileError(f"needed {size} more bytes, found {len(data)}")
    return data[:size], data[size:]


def _check_crc(data: bytes) -> bytes:
    body, trailer = data[:-CRC.size], data[-CRC.size:]
    (stored,) = CRC.unpack(trailer)
    actual = crc32(body)
    if stored != actual:
        raise CrcMismatchError(f"CRC32 mismatch: stored {stored:08x}, computed {actual:08x}")
    return body


def _check_magic(data: bytes, magic: bytes) -> None:
    if len(data) < len(magic):
        raise TruncatedFileError(f"file too short for magic ({len(data)} bytes)")
    if data[: len(magic)] != magic:
        raise BadMagicError(f"bad magic {data[:len(magic)]!r}, expected {magic!r}")


def _check_envelope(data: bytes, magic: bytes, header: struct.Struct) -> bytes:
    """Magic, room for header and trailer, then the CRC over everything before it."""
    _check_magic(data, magic)
    if len(data) < header.size + CRC.size:
        raise TruncatedFileError(f"file has {len(data)} bytes, header and CRC need {header.size + CRC.size}")
    return _check_crc(data)


def _check_size(data: bytes, expected: int) -> None:
    if len(data) < expected:
        raise TruncatedFileError(f"file has {len(data)} bytes, header implies {expected}")
    if len(data) > expected:
        raise ShapeInconsistencyError(f"file has {len(data) - expected} trailing bytes beyond the declared shapes")


def _to_half(values: np.ndarray, what: str) -> bytes:
    half = np.asarray(values, dtype="<f2")
    if not np.all(np.isfinite(half)):
        raise NonFiniteError(f"{what} overflows binary16")
    return half.tobytes()


# ========== LBA1 ==========

def lba1_payload_bits(n: int, m: int, r: int, ell: int) -> int:
    """Logical carrier and scale bits, padding excluded."""
    return r * (n + m) + 16 * ell * (n + r + m)


def lba1_file_size(n: int, m: int, r: int, ell: int) -> int:
    carriers = 8 * r * (words_per_row(n) + words_per_row(m))
    scales = 2 * ell * (n + r + m)
    return ADAPTER_HEADER.size + carriers + scales + CRC.size


def encode_adapter(adapter: LoRDBAAdapter) -> bytes:
    header = ADAPTER_HEADER.pack(
        ADAPTER_MAGIC, FORMAT_VERSION, 0, adapter.n, adapter.m, adapter.rank, adapter.ell, adapter.r0_ref
    )
    parts = [
        header,
        adapter.b1.transpose().words.astype("<u8").tobytes(),
        adapter.b2.words.astype("<u8").tobytes(),
    ]
    for i, env in enumerate(adapter.envelopes):
        parts.append(_to_half(np.concatenate([env.alpha, env.beta, env.gamma]), f"envelope {i}"))
    body = b"".join(parts)
    return body + CRC.pack(crc32(body))


def decode_adapter(data: bytes) -> LoRDBAAdapter:
    """Validate magic, CRC, version, header fields, size and scale finiteness, in that order."""
    _check_envelope(data, ADAPTER_MAGIC, ADAPTER_HEADER)
    header, rest = _take(data, ADAPTER_HEADER.size)
    _, version, flags, n, m, r, ell, r0 = ADAPTER_HEADER.unpack(header)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"LBA1 version {version} is not supported")
    if min(n, m, r, ell, r0) < 1 or flags != 0:
        raise ShapeInconsistencyError(f"invalid header: N={n} M={m} R={r} l={ell} r0={r0} flags={flags}")
    _check_size(data, lba1_file_size(n, m, r, ell))

    raw, rest = _take(rest, 8 * r * words_per_row(n))
    b1_cols = np.frombuffer(raw, dtype="<u8").reshape(r, words_per_row(n))
    raw, rest = _take(rest, 8 * r * words_per_row(m))
    b2_words = np.frombuffer(raw, dtype="<u8").reshape(r, words_per_row(m))
    envelopes: List[ScaleEnvelope] = []
    for i in range(ell):
        raw, rest = _take(rest, 2 * (n + r + m))
        values = np.frombuffer(raw, dtype="<f2").astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise FormatError(f"envelope {i} holds non-finite scales")
        envelopes.append(ScaleEnvelope(alpha=values[:n], beta=values[n:n + r], gamma=values[n + r:]))
    try:
        b1 = SignMatrix(rows=r, cols=n, words=b1_cols).transpose()
        b2 = SignMatrix(rows=r, cols=m, words=b2_words)
        return LoRDBAAdapter(b1=b1, b2=b2, envelopes=envelopes, r0_ref=r0)
    except LordbaError as e:
        raise ShapeInconsistencyError(str(e)) from e


def save_adapter(path: PathLike, adapter: LoRDBAAdapter) -> int:
    """Write an LBA1 file; returns its size in bytes."""
    data = encode_adapter(adapter)
    Path(path).write_bytes(data)
    log.info(f"Wrote adapter {path} ({len(data)} bytes)")
    return len(data)


def load_adapter(path: PathLike) -> LoRDBAAdapter:
    return decode_adapter(Path(path).read_bytes())


def quantize_scales(adapter: LoRDBAAdapter) -> LoRDBAAdapter:
    """Scales narrowed to binary16 and widened back, as stored in LBA1."""
    envelopes = [
        ScaleEnvelope(
            **{
                axis: np.frombuffer(_to_half(getattr(env, axis), axis), dtype="<f2").astype(np.float64)
                for axis in ("alpha", "beta", "gamma")
            }
        )
        for env in adapter.envelopes
    ]
    return adapter.with_envelopes(envelopes)


# ========== LRF1 ==========

def encode_factors(factors: LoRAFactors) -> bytes:
    header = FACTOR_HEADER.pack(FACTOR_MAGIC, FORMAT_VERSION, 0, factors.n, factors.m, factors.r0)
    a = np.asarray(factors.a, dtype="<f4")
    b = np.asarray(factors.b, dtype="<f4")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NonFiniteError("factors overflow binary32")
    body = header + a.tobytes() + b.tobytes()
    return body + CRC.pack(crc32(body))


def decode_factors(data: bytes) -> LoRAFactors:
    _check_envelope(data, FACTOR_MAGIC, FACTOR_HEADER)
    header, rest = _take(data, FACTOR_HEADER.size)
    _, version, flags, n, m, r0 = FACTOR_HEADER.unpack(header)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"LRF1 version {version} is not supported")
    if min(n, m, r0) < 1 or flags != 0:
        raise ShapeInconsistencyError(f"invalid header: N={n} M={m} r0={r0} flags={flags}")
    _check_size(data, FACTOR_HEADER.size + 4 * r0 * (n + m) + CRC.size)
    raw, rest = _take(rest, 4 * n * r0)
    a = np.frombuffer(raw, dtype="<f4").reshape(n, r0).astype(np.float64)
    raw, rest = _take(rest, 4 * m * r0)
    b = np.frombuffer(raw, dtype="<f4").reshape(m, r0).astype(np.float64)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise FormatError("factor file holds non-finite entries")
    return LoRAFactors(a=a, b=b)


def save_factors(path: PathLike, factors: LoRAFactors) -> int:
    data = encode_factors(factors)
    Path(path).write_bytes(data)
    log.info(f"Wrote factors {path} ({len(data)} bytes)")
    return len(data)


def load_factors(path: PathLike) -> LoRAFactors:
    return decode_factors(Path(path).read_bytes())


# ========== Dense dumps ==========

def save_matrix(path: PathLike, matrix: np.ndarray) -> None:
    """float64 ``.npy`` dump."""
    with open(path, "wb") as fh:
        np.save(fh, np.asarray(matrix, dtype=np.float64), allow_pickle=False)
    log.info(f"Wrote matrix {path} {matrix.shape}")


def load_matrix(path: PathLike) -> np.ndarray:
    return np.load(path, allow_pickle=False)
