import struct

import numpy as np
import pytest

from models import LoRAFactors, ScaleEnvelope
from tools.adapter_tools import reconstruct
from tools.io_tools import (
    ADAPTER_HEADER,
    crc32,
    decode_adapter,
    decode_factors,
    encode_adapter,
    encode_factors,
    file_crc32,
    lba1_file_size,
    lba1_payload_bits,
    load_adapter,
    load_factors,
    load_matrix,
    quantize_scales,
    save_adapter,
    save_factors,
    save_matrix,
)
from utils.errors import (
    BadMagicError,
    CrcMismatchError,
    NonFiniteError,
    ShapeInconsistencyError,
    TruncatedFileError,
    UnsupportedVersionError,
)

from .conftest import make_adapter


def _with_crc(body: bytes) -> bytes:
    return body + struct.pack("<I", crc32(body))


def test_small_adapter_file_layout(small_adapter):
    data = encode_adapter(small_adapter)
    assert len(data) == 136 == lba1_file_size(8, 8, 4, 1)
    assert data[:4] == b"LBA1"
    assert ADAPTER_HEADER.unpack(data[:28])[1:] == (1, 0, 8, 8, 4, 1, 4)
    # one u64 word per carrier column of B1 and per row of B2, then 20 binary16 scales
    b1_words = np.frombuffer(data[28:60], dtype="<u8")
    np.testing.assert_array_equal(b1_words, small_adapter.b1.transpose().words[:, 0])
    assert struct.unpack("<I", data[-4:])[0] == crc32(data[:-4])


def test_adapter_round_trip_is_exact_after_scale_narrowing(tmp_path, rng):
    adapter = make_adapter(rng, 70, 9, 5, ell=2, r0_ref=3)
    path = tmp_path / "a.lba"
    assert save_adapter(path, adapter) == path.stat().st_size
    loaded = load_adapter(path)
    assert (loaded.n, loaded.m, loaded.rank, loaded.ell, loaded.r0_ref) == (70, 9, 5, 2, 3)
    np.testing.assert_array_equal(loaded.b1.to_dense(), adapter.b1.to_dense())
    np.testing.assert_array_equal(loaded.b2.to_dense(), adapter.b2.to_dense())
    np.testing.assert_array_equal(reconstruct(loaded), reconstruct(quantize_scales(adapter)))
    # a second pass through binary16 changes nothing
    assert encode_adapter(loaded) == path.read_bytes()


def test_payload_bits():
    assert lba1_payload_bits(4096, 4096, 16, 1) == 262400


def test_bad_magic(small_adapter):
    data = encode_adapter(small_adapter)
    with pytest.raises(BadMagicError):
        decode_adapter(b"LBA2" + data[4:])
    with pytest.raises(TruncatedFileError):
        decode_adapter(b"LB")


def test_truncated_and_trailing(small_adapter):
    data = encode_adapter(small_adapter)
    with pytest.raises(TruncatedFileError):
        decode_adapter(data[:20])
    # a cut or extended file no longer ends in its own CRC
    with pytest.raises(CrcMismatchError):
        decode_adapter(data[:-1])
    with pytest.raises(CrcMismatchError):
        decode_adapter(data + b"\x00")
    # with a matching CRC the header-implied size decides
    body = data[:-4]
    with pytest.raises(TruncatedFileError):
        decode_adapter(_with_crc(body[:-8]))
    with pytest.raises(ShapeInconsistencyError):
        decode_adapter(_with_crc(body + bytes(8)))


def test_crc_mismatch(small_adapter):
    data = bytearray(encode_adapter(small_adapter))
    data[40] ^= 0x01
    with pytest.raises(CrcMismatchError):
        decode_adapter(bytes(data))


@pytest.mark.parametrize("offset", range(4, 28))
def test_header_corruption_is_a_crc_error(small_adapter, offset):
    data = bytearray(encode_adapter(small_adapter))
    for bit in (0x01, 0x80):
        corrupted = bytearray(data)
        corrupted[offset] ^= bit
        with pytest.raises(CrcMismatchError):
            decode_adapter(bytes(corrupted))


def test_any_corrupted_byte_is_rejected(small_adapter):
    data = encode_adapter(small_adapter)
    for offset in range(len(data)):
        corrupted = bytearray(data)
        corrupted[offset] ^= 0x10
        expected = BadMagicError if offset < 4 else CrcMismatchError
        with pytest.raises(expected):
            decode_adapter(bytes(corrupted))


def test_unsupported_version(small_adapter):
    body = bytearray(encode_adapter(small_adapter)[:-4])
    body[4:6] = struct.pack("<H", 2)
    with pytest.raises(UnsupportedVersionError):
        decode_adapter(_with_crc(bytes(body)))


def test_zero_dimension_header_is_inconsistent(small_adapter):
    body = bytearray(encode_adapter(small_adapter)[:-4])
    # R = 0 under a valid CRC
    body[16:20] = struct.pack("<I", 0)
    with pytest.raises(ShapeInconsistencyError):
        decode_adapter(_with_crc(bytes(body)))


def test_scale_overflowing_binary16_is_rejected(rng):
    adapter = make_adapter(rng, 4, 4, 2)
    env = adapter.envelopes[0]
    huge = adapter.with_envelopes([ScaleEnvelope(alpha=env.alpha * 1e6, beta=env.beta, gamma=env.gamma)])
    with pytest.raises(NonFiniteError):
        encode_adapter(huge)


def test_factor_round_trip(tmp_path, rng):
    factors = LoRAFactors(a=rng.standard_normal((6, 2)), b=rng.standard_normal((5, 2)))
    path = tmp_path / "f.lrf"
    assert save_factors(path, factors) == 20 + 4 * 2 * 11 + 4
    loaded = load_factors(path)
    np.testing.assert_array_equal(loaded.a, factors.a.astype(np.float32).astype(np.float64))
    np.testing.assert_array_equal(loaded.b, factors.b.astype(np.float32).astype(np.float64))
    assert path.read_bytes()[:4] == b"LRF1"


def test_factor_file_errors(rng):
    data = encode_factors(LoRAFactors(a=rng.standard_normal((3, 1)), b=rng.standard_normal((3, 1))))
    with pytest.raises(BadMagicError):
        decode_factors(b"LBA1" + data[4:])
    with pytest.raises(TruncatedFileError):
        decode_factors(data[:10])
    with pytest.raises(CrcMismatchError):
        decode_factors(data[:-2])
    with pytest.raises(TruncatedFileError):
        decode_factors(_with_crc(data[:-8]))
    for offset in range(4, 20):
        corrupted = bytearray(data)
        corrupted[offset] ^= 0x04
        with pytest.raises(CrcMismatchError):
            decode_factors(bytes(corrupted))
    corrupted = bytearray(data)
    corrupted[24] ^= 0xFF
    with pytest.raises(CrcMismatchError):
        decode_factors(bytes(corrupted))


def test_file_crc32(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"123456789")
    assert file_crc32(path) == "cbf43926"


def test_matrix_dump(tmp_path, rng):
    matrix = rng.standard_normal((3, 4))
    path = tmp_path / "d.npy"
    save_matrix(path, matrix)
    np.testing.assert_array_equal(load_matrix(path), matrix)
