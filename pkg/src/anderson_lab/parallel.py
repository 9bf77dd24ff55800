"""Ordered process-pool map and the thread-count convention shared by the harnesses."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

ENV_THREADS = "ANDERSON_THREADS"


def resolve_threads(threads=None):
    """``threads`` if given, else ``$ANDERSON_THREADS``, else the CPU count."""
    if threads is None:
        env = os.environ.get(ENV_THREADS)
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ValueError(f"{ENV_THREADS}={env!r} is not an integer") from None
    if threads is None:
        threads = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    threads = int(threads)
    if threads < 1:
        raise ValueError("thread count must be positive")
    return threads


def ordered_map(fn, items, threads=1, chunksize=1):
    """``[fn(x) for x in items]``, spread over worker processes when ``threads > 1``.

    Results come back in input order regardless of scheduling; ``fn`` must be
    picklable (a module-level function or ``functools.partial`` of one).
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
