"""Order-preserving fan-out over worker processes."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Optional

ENV_THREADS = "HISTOWAS_THREADS"


def worker_count(requested: Optional[int] = None) -> int:
    if requested is None:
        env = os.environ.get(ENV_THREADS)
        requested = int(env) if env else 1
    return max(1, int(requested))


def pmap(fn: Callable, items: Iterable, workers: Optional[int] = None) -> list:
    """``list(map(fn, items))`` possibly in parallel; result order always follows input order."""
    items = list(items)
    n = worker_count(workers)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(n, len(items))) as ex:
        return list(ex.map(fn, items))
