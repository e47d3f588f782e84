"""Fixed-size chunked evaluation over independent points.

Chunk boundaries never depend on the worker count, so every element sees the
same arithmetic whether one thread or many are used.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK = 128

_threads = 1


def set_threads(n):
    global _threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = int(n)


def get_threads():
    return _threads


def chunk_slices(n, chunk=CHUNK):
    return [slice(i, min(i + chunk, n)) for i in range(0, n, chunk)]


def map_chunks(func, n, chunk=CHUNK):
    """Call ``func(slice)`` for each fixed chunk of ``range(n)``, in order."""
    slices = chunk_slices(n, chunk)
    if _threads == 1 or len(slices) == 1:
        return [func(s) for s in slices]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        return list(pool.map(func, slices))


def concat(parts, axis=0):
    return np.concatenate(parts, axis=axis)
