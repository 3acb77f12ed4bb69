"""Worker-thread setting shared by the numba kernels and the path aggregation."""

from __future__ import annotations

import os

import numba

# TBB is often too old in the wild and only produces a warning; prefer OpenMP.
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

ENV_VAR = "SWEEPSGM_THREADS"

_threads: int | None = None


def default_threads() -> int:
    env = os.environ.get(ENV_VAR)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(f"{ENV_VAR} must be an integer, got {env!r}") from None
        if value >= 1:
            return value
    return os.cpu_count() or 1


def get_threads() -> int:
    return _threads if _threads is not None else default_threads()


def set_threads(n: int | None) -> int:
    """Set the worker count (``None`` restores the default) and return it."""
    global _threads
    if n is not None and n < 1:
        raise ValueError("thread count must be at least 1")
    _threads = n
    numba.set_num_threads(min(get_threads(), numba.config.NUMBA_NUM_THREADS))
    return get_threads()
