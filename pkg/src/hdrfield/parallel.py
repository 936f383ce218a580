"""Fixed-chunk thread pool.

Work is always cut into the same chunks regardless of the worker count,
and every chunk draws from its own random stream, so results are
bitwise identical for any ``threads`` value.
"""
import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "RADIANCE_THREADS"


def default_threads():
    try:
        return max(1, int(os.environ.get(ENV_THREADS, "1")))
    except ValueError:
        return 1


def chunk_slices(n, size):
    return [slice(a, min(a + size, n)) for a in range(0, n, size)]


def map_chunks(fn, n, size, threads=None):
    """``[fn(index, slice) for each chunk]`` evaluated on ``threads`` workers."""
    chunks = chunk_slices(n, size)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(chunks) <= 1:
        return [fn(k, sl) for k, sl in enumerate(chunks)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda args: fn(*args), enumerate(chunks)))
