"""Deterministic batch-parallel execution.

Work is cut into batches whose size does not depend on the worker count;
every batch draws from its own stream ``SeedSequence([seed, *key, batch])``
and results are reduced in batch order, so payloads are bit-identical for
any number of workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np

ENV_WORKERS = "KOLMO_WORKERS"


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        env = os.environ.get(ENV_WORKERS)
        if env:
            workers = int(env)
        else:
            workers = os.cpu_count() or 1
    return max(1, int(workers))


def batch_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *map(int, key)]))


def batch_sizes(total: int, size: int) -> list:
    if total < 1:
        raise ValueError("need at least one sample")
    full, rest = divmod(int(total), int(size))
    return [size] * full + ([rest] if rest else [])


def run_batches(func: Callable, tasks: Sequence, workers: int | None = None) -> list:
    """``[func(t) for t in tasks]`` evaluated on a thread pool, in task order."""
    n = resolve_workers(workers)
    if n == 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, tasks))


def ordered_concat(parts: Iterable[np.ndarray]) -> np.ndarray:
    parts = list(parts)
    return np.concatenate(parts) if parts else np.zeros(0)
