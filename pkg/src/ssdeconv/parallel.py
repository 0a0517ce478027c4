"""Seeded task fan-out shared by the Monte Carlo diagnostics and the harness."""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV = "DECONV_THREADS"


def resolve_threads(threads=None):
    """Explicit value, else ``$DECONV_THREADS``, else the CPU count."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else (os.cpu_count() or 1)
    threads = int(threads)
    if threads < 1:
        raise ValueError("threads must be at least 1")
    return threads


def cell_seed(master, *key):
    """Deterministic 64-bit seed for the task identified by ``key``."""
    seq = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def ordered_map(fn, items, threads=None):
    """``[fn(i) for i in items]`` on a thread pool, results in input order."""
    items = list(items)
    threads = min(resolve_threads(threads), max(1, len(items)))
    if threads == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
