"""
Ordered thread-pool helper.
Results always come back in input order, so output never depends on the thread count.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def resolve_threads(threads: Optional[int]) -> int:
    """Map 0/None to the number of available cores."""
    if not threads or threads < 1:
        return os.cpu_count() or 1
    return threads


def chunked(items: Sequence[T], n_chunks: int) -> List[Sequence[T]]:
    """Split a sequence into at most n_chunks contiguous slices."""
    n_chunks = max(1, min(n_chunks, len(items)))
    size, extra = divmod(len(items), n_chunks)
    chunks = []
    start = 0
    for i in range(n_chunks):
        stop = start + size + (1 if i < extra else 0)
        chunks.append(items[start:stop])
        start = stop
    return chunks


def parallel_map(func: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """
    Apply func to every item, optionally on a thread pool.

    Args:
        func: Pure function of one item
        items: Work items
        threads: Worker count (1 runs inline, 0/None uses all cores)

    Returns:
        List of results in the order of items
    """
    items = list(items)
    workers = resolve_threads(threads)
    if workers == 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items))
