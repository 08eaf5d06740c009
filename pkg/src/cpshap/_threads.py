"""Worker-pool plumbing.

The ``CPSHAP_THREADS`` environment variable caps the number of worker
threads used anywhere in the package.  Every parallel section is written
so that results are bit-identical regardless of the worker count: work
items carry their index, outputs land in preallocated slots, and all
reductions happen in a fixed order afterwards.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_THREADS = "CPSHAP_THREADS"


def resolve_threads(explicit: int | None = None) -> int:
    """Number of worker threads to use, honoring ``CPSHAP_THREADS``."""
    if explicit is not None:
        return max(1, int(explicit))
    raw = os.environ.get(ENV_THREADS)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return min(4, os.cpu_count() or 1)


def map_indexed(fn: Callable[[T], R], items: Sequence[T], n_threads: int | None = None) -> list[R]:
    """Apply ``fn`` to every item, returning results in item order.

    Runs sequentially when one worker is resolved; otherwise fans out to a
    thread pool.  The output order never depends on scheduling.
    """
    workers = resolve_threads(n_threads)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_tasks(fn: Callable[[int], None], n_tasks: int, n_threads: int | None = None) -> None:
    """Run ``fn(i)`` for i in range(n_tasks); side effects land in caller slots."""
    workers = resolve_threads(n_threads)
    if workers <= 1 or n_tasks <= 1:
        for i in range(n_tasks):
            fn(i)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(fn, range(n_tasks)))
