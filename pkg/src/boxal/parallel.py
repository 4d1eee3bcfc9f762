"""Order-preserving thread map honoring the run's parallelism budget."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_THREADS = "CRB_THREADS"


def resolve_threads(flag_value: int | None = None) -> int:
    """Thread budget: explicit flag, else CRB_THREADS, else available cores."""
    if flag_value is not None:
        return max(1, flag_value)
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def thread_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """map() across a thread pool, preserving input order (deterministic)."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))
