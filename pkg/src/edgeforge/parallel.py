"""Process-pool helper for embarrassingly parallel stages.

Workers receive explicit seeds, so output is byte-identical whether a stage
runs serially or across processes; only wall time changes with --jobs.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def map_ordered(fn: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> list[R]:
    """Apply `fn` to each item, preserving input order in the result.

    jobs <= 1 runs in-process. `fn` and the items must be picklable when
    jobs > 1.
    """
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    chunk = max(1, len(items) // (jobs * 8))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunk))
