"""Order-preserving parallel map over worker processes."""

import os
from concurrent.futures import ProcessPoolExecutor


def default_jobs():
    return os.cpu_count() or 1


def parallel_map(fn, items, jobs=1):
    """``[fn(x) for x in items]``, optionally spread over ``jobs`` processes.

    Results come back in input order, so the output never depends on
    scheduling. ``fn`` must be picklable (a module-level function).
    """
    items = list(items)
    jobs = max(1, min(int(jobs or 1), len(items)))
    if jobs == 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
