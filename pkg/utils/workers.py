import concurrent.futures
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

import numpy as np

from config import settings

T = TypeVar("T")
R = TypeVar("R")


def resolve_workers(workers: Optional[int] = None) -> int:
    """Explicit worker count, else LORDBA_THREADS."""
    return max(1, int(workers if workers is not None else settings.LORDBA_THREADS))


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """Map ``fn`` over ``items`` and return results in input order."""
    items = list(items)
    n_workers = resolve_workers(workers)
    if n_workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=n_workers) as executor:
        return list(executor.map(fn, items))


def chunk_slices(n: int, workers: Optional[int] = None) -> Sequence[slice]:
    """Contiguous slices covering range(n), one per worker."""
    n_workers = min(resolve_workers(workers), max(n, 1))
    bounds = np.linspace(0, n, n_workers + 1).astype(int)
    return [slice(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
