"""Row-partitioned execution of per-pixel kernels on a thread pool.

Kernels are numba functions compiled with ``nogil=True`` that take a
``(row_start, row_stop)`` range as their last two arguments, so several of
them can run truly concurrently on disjoint row bands of the same frame.
"""

from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor

_lock = threading.Lock()
_pools: dict[int, ThreadPoolExecutor] = {}
_default_threads = 1


def physical_cores() -> int:
    try:
        import psutil

        n = psutil.cpu_count(logical=False)
    except ImportError:  # pragma: no cover
        n = None
    return n or os.cpu_count() or 1


def set_threads(n: int) -> None:
    """Set the default number of worker threads used by :func:`run_rows`."""
    global _default_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _default_threads = int(n)


def get_threads() -> int:
    return _default_threads


def _pool(n: int) -> ThreadPoolExecutor:
    with _lock:
        pool = _pools.get(n)
        if pool is None:
            pool = ThreadPoolExecutor(max_workers=n, thread_name_prefix=f"rows{n}")
            _pools[n] = pool
        return pool


def row_bands(height: int, n: int) -> list[tuple[int, int]]:
    n = max(1, min(n, height))
    edges = [round(i * height / n) for i in range(n + 1)]
    return [(edges[i], edges[i + 1]) for i in range(n) if edges[i + 1] > edges[i]]


def run_rows(kernel, args: tuple, height: int, threads: int | None = None) -> None:
    """Call ``kernel(*args, r0, r1)`` over row bands covering ``[0, height)``."""
    n = threads or _default_threads
    if n == 1 or height < 2:
        kernel(*args, 0, height)
        return
    futures = [_pool(n).submit(kernel, *args, r0, r1) for r0, r1 in row_bands(height, n)]
    for f in futures:
        f.result()


def map_threads(fn, items, threads: int | None = None) -> list:
    """Apply ``fn`` to each item on the shared pool, preserving order."""
    n = threads or _default_threads
    items = list(items)
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    return list(_pool(n).map(fn, items))
