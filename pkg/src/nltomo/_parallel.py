"""Ordered task execution: results are reduced in input order regardless of jobs."""

from concurrent.futures import ThreadPoolExecutor


def map_ordered(fn, items, jobs: int = 1):
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
