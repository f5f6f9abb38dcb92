"""Small shared helpers."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    """Worker parallelism cap from the NSS_THREADS environment variable.

    Defaults to 1 (serial, maximally reproducible); BLAS-level threading is
    unaffected. Values below 1 are clamped to 1.
    """
    try:
        return max(1, int(os.environ.get("NSS_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Map preserving input order; threaded only when NSS_THREADS > 1.

    Results are collected by index, so the output is independent of
    scheduling.
    """
    items = list(items)
    n = worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
