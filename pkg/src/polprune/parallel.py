"""Order-preserving map over a process pool.

Work items carry their own seeds, so the result list is identical for any
number of jobs.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None:
        jobs = int(os.environ.get("POLPRUNE_JOBS", "1"))
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    return jobs


def pmap(fn, items, jobs: int = 1) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    chunksize = max(1, len(items) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
