import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "MIXTWICE_NUM_THREADS"


def n_threads():
    """Worker count from the environment; defaults to one."""
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def chunk_bounds(n, chunk_size):
    return [(start, min(start + chunk_size, n)) for start in range(0, n, chunk_size)]


def map_ordered(func, items, workers=None):
    """Apply ``func`` to ``items`` and return results in input order."""
    workers = n_threads() if workers is None else workers
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
