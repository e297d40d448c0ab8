from .logger import log
from .workers import chunk_slices, parallel_map, resolve_workers

__all__ = ["log", "parallel_map", "chunk_slices", "resolve_workers"]
