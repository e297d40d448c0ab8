import numpy as np
import pytest

from models import KernelReport, SignMatrix
from tools.adapter_tools import pad_envelopes, reconstruct
from tools.io_tools import lba1_file_size
from tools.kernel_tools import (
    adapter_forward,
    arithmetic_breakdown,
    bandwidth_ratio,
    bench,
    fp16_equivalent_bytes,
    pack_adapter,
    reports_to_csv,
    sign_matmul,
)
from utils.errors import DegenerateInputError, ShapeMismatchError

from .conftest import make_adapter


def test_sign_matmul_matches_dense_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        t, p, q = (int(v) for v in rng.integers(1, 140, size=3))
        x = rng.standard_normal((t % 9 + 1, p))
        b = rng.choice([-1.0, 1.0], size=(p, q))
        out = sign_matmul(x, SignMatrix.from_dense(b))
        assert np.max(np.abs(out - x @ b)) <= 1e-9


def test_sign_matmul_uses_both_masks():
    x = np.arange(6, dtype=float).reshape(2, 3)
    mostly_positive = np.array([[1.0, 1.0], [1.0, -1.0], [1.0, -1.0]])
    np.testing.assert_allclose(sign_matmul(x, SignMatrix.from_dense(mostly_positive)), x @ mostly_positive)


def test_sign_matmul_shape_check(rng):
    with pytest.raises(ShapeMismatchError):
        sign_matmul(rng.standard_normal((2, 3)), SignMatrix.from_dense(np.ones((4, 2))))


def test_adapter_forward_matches_dense_update():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n, m, r = (int(v) for v in rng.integers(1, 80, size=3))
        ell = int(rng.integers(1, 4))
        adapter = make_adapter(rng, n, m, r, ell=ell)
        x = rng.standard_normal((int(rng.integers(1, 9)), n))
        out = adapter_forward(x, pack_adapter(adapter))
        assert np.max(np.abs(out - x @ reconstruct(adapter))) <= 1e-9


def test_adapter_forward_is_linear_in_x():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n, m, r = (int(v) for v in rng.integers(1, 60, size=3))
        packed = pack_adapter(make_adapter(rng, n, m, r, ell=int(rng.integers(1, 3))))
        x1, x2 = rng.standard_normal((2, 4, n))
        a, b = rng.standard_normal(2)
        combined = adapter_forward(a * x1 + b * x2, packed)
        expected = a * adapter_forward(x1, packed) + b * adapter_forward(x2, packed)
        scale = np.max(np.abs(expected)) + 1.0
        assert np.max(np.abs(combined - expected)) <= 1e-10 * scale


def test_zero_envelope_leaves_output_bitwise_identical(rng):
    for ell in (1, 2):
        adapter = make_adapter(rng, 33, 21, 5, ell=ell)
        x = rng.standard_normal((6, 33))
        plain = adapter_forward(x, pack_adapter(adapter))
        padded = adapter_forward(x, pack_adapter(pad_envelopes(adapter)))
        np.testing.assert_array_equal(padded, plain)


def test_adapter_forward_is_independent_of_worker_count(rng):
    adapter = make_adapter(rng, 70, 50, 12, ell=2)
    packed = pack_adapter(adapter)
    x = rng.standard_normal((5, 70))
    np.testing.assert_array_equal(adapter_forward(x, packed, workers=1), adapter_forward(x, packed, workers=4))


def test_bandwidth_ratio_published_values():
    assert bandwidth_ratio(4096, 4096, 16) == pytest.approx(8.0, abs=0.05)
    assert bandwidth_ratio(4096, 4096, 64) == pytest.approx(12.8, abs=0.05)
    assert bandwidth_ratio(10**7, 10**7, 10**5) > 15.9
    with pytest.raises(ShapeMismatchError):
        bandwidth_ratio(0, 4, 4)


def test_storage_byte_counts():
    assert fp16_equivalent_bytes(4096, 4096, 16) == 262144
    assert lba1_file_size(8, 8, 4, 1) == 136


def test_arithmetic_breakdown():
    table = arithmetic_breakdown(4096, 4096, 16, 16)
    assert set(table) == {"lora_fp16", "lora_int4", "lordba"}
    assert table["lora_fp16"]["bytes"] == 4 * table["lora_int4"]["bytes"]
    assert table["lordba"]["bytes"] == pytest.approx(262400 / 8)
    assert table["lordba"]["intensity"] > table["lora_fp16"]["intensity"]


def test_bench_reports_and_csv():
    reports = bench([(2, 16, 4, 16, 1), (3, 70, 8, 40, 2)], trials=3, seed=0)
    assert [r.n for r in reports] == [16, 70]
    first = reports[0]
    assert first.bytes_adapter == lba1_file_size(16, 16, 4, 1)
    assert first.bytes_fp16_equiv == 256
    assert first.ratio == pytest.approx(256 / first.bytes_adapter)
    assert all(r.max_abs_dev <= 1e-9 for r in reports)
    lines = reports_to_csv(reports).strip().splitlines()
    assert lines[0].split(",") == list(KernelReport.CSV_COLUMNS)
    assert len(lines) == 3


def test_bench_needs_three_trials():
    with pytest.raises(DegenerateInputError):
        bench([(1, 8, 2, 8, 1)], trials=2)
