"""
Ordered thread-pool map shared by the estimators and the backtester.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def default_threads() -> int:
    return os.cpu_count() or 1


def map_ordered(func: Callable[[T], R], items: Iterable[T], threads: Optional[int] = 1) -> List[R]:
    """
    Apply func to every item, returning results in input order.
    threads=None uses every core; 1 runs inline.
    """
    items = list(items)
    workers = default_threads() if threads is None else max(1, int(threads))
    if workers == 1 or len(items) < 2:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items))
