import os
from concurrent.futures import ThreadPoolExecutor


def n_workers() -> int:
    raw = os.environ.get("TRENDLAB_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValueError(f"TRENDLAB_THREADS must be an integer, got {raw!r}")
    return os.cpu_count() or 1


def ordered_map(fn, items):
    """Map ``fn`` over ``items`` on the worker pool, results in input order."""
    items = list(items)
    workers = min(n_workers(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
