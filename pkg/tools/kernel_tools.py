"""Bit-packed sign-accumulation kernel for the unmerged adapter branch.

Each output column j of X·B (B ∈ {±1}) is a signed sum of X's columns. With the
row sum S and the positive-mask partial sum P_j, z_j = 2P_j − S; when B's column
holds more +1 than −1 bits the negative-mask sum Q_j is cheaper and
z_j = S − 2Q_j. Accumulation is float64 with a fixed order per output column,
so results do not depend on the worker count.
"""
import csv
import io
import time
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from linalg import as_dense
from models import KernelReport, LoRDBAAdapter, PackedAdapter, SignMatrix
from utils import chunk_slices, log, parallel_map
from utils.errors import DegenerateInputError, ShapeMismatchError

from .adapter_tools import reconstruct
from .io_tools import lba1_file_size
from .qat_tools import random_adapter

DEFAULT_SHAPES: Tuple[Tuple[int, int, int, int, int], ...] = (
    # (T, N, R, M, l)
    (8, 256, 16, 256, 1),
    (8, 1024, 16, 1024, 1),
    (8, 4096, 16, 4096, 1),
)


def pack_adapter(adapter: LoRDBAAdapter) -> PackedAdapter:
    return PackedAdapter.from_adapter(adapter)


def _accumulate(x: np.ndarray, cols: SignMatrix, popcounts: np.ndarray, workers: Optional[int]) -> np.ndarray:
    """Z[:, j] = Σ_{i: bit(j, i)=1} X[:, i] − Σ_{i: bit(j, i)=0} X[:, i]."""
    total = x.sum(axis=1)
    half = cols.cols / 2.0

    def run(block: slice) -> np.ndarray:
        out = np.empty((x.shape[0], block.stop - block.start))
        for k, j in enumerate(range(block.start, block.stop)):
            mask = cols.row_mask(j)
            if popcounts[j] > half:
                out[:, k] = total - 2.0 * x[:, ~mask].sum(axis=1)
            else:
                out[:, k] = 2.0 * x[:, mask].sum(axis=1) - total
        return out

    parts = parallel_map(run, chunk_slices(cols.rows, workers), workers)
    return np.concatenate(parts, axis=1)


def sign_matmul(x: np.ndarray, b: SignMatrix, workers: Optional[int] = None) -> np.ndarray:
    """X (T×p) times the ±1 matrix B (p×q) without multiplications on the carrier edge."""
    x = as_dense(x, "X")
    if x.shape[1] != b.rows:
        raise ShapeMismatchError(f"cannot multiply {x.shape} by sign matrix {b.shape}")
    cols = b.transpose()
    return _accumulate(x, cols, cols.row_popcounts(), workers)


def adapter_forward(x: np.ndarray, packed: PackedAdapter, workers: Optional[int] = None) -> np.ndarray:
    """Σᵢ ((((X·D_α⁽ⁱ⁾)·B₁)·D_β⁽ⁱ⁾)·B₂)·D_γ⁽ⁱ⁾.

    The ℓ scaled inputs are stacked row-wise so each carrier is traversed once.
    Envelopes with an all-zero scale vector add nothing and are skipped.
    """
    x = as_dense(x, "X")
    if x.shape[1] != packed.n:
        raise ShapeMismatchError(f"input has {x.shape[1]} features, adapter expects N={packed.n}")
    t = x.shape[0]
    envelopes = [env for env in packed.envelopes if env.alpha.any() and env.beta.any() and env.gamma.any()]
    out = np.zeros((t, packed.m))
    if not envelopes:
        return out
    stacked = np.concatenate([x * env.alpha for env in envelopes], axis=0)
    hidden = _accumulate(stacked, packed.b1_cols, packed.popcounts1, workers)
    hidden = np.concatenate(
        [hidden[i * t:(i + 1) * t] * env.beta for i, env in enumerate(envelopes)], axis=0
    )
    out_stacked = _accumulate(hidden, packed.b2_cols, packed.popcounts2, workers)
    for i, env in enumerate(envelopes):
        out += out_stacked[i * t:(i + 1) * t] * env.gamma
    return out


# ========== Storage and cost arithmetic ==========

def bandwidth_ratio(n: int, m: int, r0: int, ell: int = 1) -> float:
    """16r₀(N+M) / (r₀(N+M) + 16ℓ(N+r₀+M)) at R = r₀."""
    if min(n, m, r0, ell) < 1:
        raise ShapeMismatchError("bandwidth ratio needs N, M, r0, l >= 1")
    return 16.0 * r0 * (n + m) / (r0 * (n + m) + 16.0 * ell * (n + r0 + m))


def fp16_equivalent_bytes(n: int, m: int, r0: int) -> int:
    return 2 * r0 * (n + m)


def arithmetic_breakdown(n: int, m: int, r: int, r0: int, ell: int = 1) -> Dict[str, Dict[str, float]]:
    """Bytes loaded and ops per output row for fp16 LoRA, INT4 LoRA and LoRDBA."""
    rows = {
        "lora_fp16": (2.0 * r0 * (n + m), 2.0 * r0 * (n + m)),
        "lora_int4": (0.5 * r0 * (n + m), 2.0 * r0 * (n + m)),
        "lordba": (r * (n + m) / 8.0 + 2.0 * ell * (n + r + m), ell * (r * (n + m) + (n + r + m))),
    }
    return {
        name: {"bytes": bytes_, "ops": ops, "intensity": ops / bytes_}
        for name, (bytes_, ops) in rows.items()
    }


# ========== Benchmark ==========

def _median_ns(fn, trials: int) -> int:
    timings = []
    for _ in range(trials):
        start = time.perf_counter_ns()
        fn()
        timings.append(time.perf_counter_ns() - start)
    return int(np.median(timings))


def bench_shape(
    shape: Tuple[int, int, int, int, int],
    trials: int = 5,
    seed: int = 0,
    workers: Optional[int] = None,
) -> KernelReport:
    t, n, r, m, ell = shape
    adapter = random_adapter(n, m, r, ell=ell, seed=seed)
    packed = pack_adapter(adapter)
    x = np.random.default_rng(seed).standard_normal((t, n))
    dense_b1, dense_b2 = adapter.b1.to_dense(), adapter.b2.to_dense()

    def dense_branch() -> np.ndarray:
        out = np.zeros((t, m))
        for env in adapter.envelopes:
            out += ((((x * env.alpha) @ dense_b1) * env.beta) @ dense_b2) * env.gamma
        return out

    packed_out = adapter_forward(x, packed, workers)
    max_abs_dev = float(np.max(np.abs(packed_out - x @ reconstruct(adapter))))
    fp16_bytes = fp16_equivalent_bytes(n, m, r)
    adapter_bytes = lba1_file_size(n, m, r, ell)
    report = KernelReport(
        t=t, n=n, r=r, m=m, ell=ell, r0=r,
        bytes_adapter=adapter_bytes,
        bytes_fp16_equiv=fp16_bytes,
        ratio=fp16_bytes / adapter_bytes,
        bandwidth_ratio=bandwidth_ratio(n, m, r, ell),
        t_packed_ns=_median_ns(lambda: adapter_forward(x, packed, workers), trials),
        t_dense_ns=_median_ns(dense_branch, trials),
        max_abs_dev=max_abs_dev,
        arithmetic=arithmetic_breakdown(n, m, r, r, ell),
    )
    log.info(
        f"bench T={t} N={n} R={r} M={m} l={ell}: ratio={report.ratio:.3f} "
        f"packed={report.t_packed_ns}ns dense={report.t_dense_ns}ns dev={max_abs_dev:.2e}"
    )
    return report


def bench(
    shapes: Iterable[Tuple[int, int, int, int, int]] = DEFAULT_SHAPES,
    trials: int = 5,
    seed: int = 0,
    workers: Optional[int] = None,
) -> List[KernelReport]:
    if trials < 3:
        raise DegenerateInputError(f"bench needs at least 3 trials, got {trials}")
    return [bench_shape(tuple(shape), trials=trials, seed=seed, workers=workers) for shape in shapes]


def reports_to_csv(reports: Sequence[KernelReport]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(KernelReport.CSV_COLUMNS)
    for report in reports:
        writer.writerow(report.csv_row())
    return buffer.getvalue()
