"""Order-preserving process fan-out used by collection and evaluation."""
from __future__ import annotations

import multiprocessing as mp
import os
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


def _init_worker():
    # one BLAS thread per process keeps results independent of the pool size
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"


def ordered_map(fn: Callable[[T], R], jobs: Sequence[T], workers: int = 1) -> list[R]:
    """``[fn(j) for j in jobs]``, optionally spread over ``workers`` processes."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    ctx = mp.get_context("fork")
    with ctx.Pool(min(workers, len(jobs)), initializer=_init_worker) as pool:
        return pool.map(fn, jobs, chunksize=1)
