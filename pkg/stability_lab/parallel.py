"""
stability_lab/parallel.py
Keyed fan-out over a process pool.

Results are collected by key and returned in key order, so the output does
not depend on the number of workers or on completion order.
"""

from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Any, Callable, Dict, Hashable, Iterable, List, Tuple

import structlog

logger = structlog.get_logger(__name__)


def run_keyed(func: Callable[..., Any], tasks: Iterable[Tuple[Hashable, tuple]],
              jobs: int = 1) -> List[Tuple[Hashable, Any]]:
    """Evaluate func(*args) for every (key, args) task; returns [(key, result)] sorted by key"""
    tasks = list(tasks)
    results: Dict[Hashable, Any] = {}
    if jobs <= 1 or len(tasks) <= 1:
        for key, args in tasks:
            results[key] = func(*args)
    else:
        workers = min(jobs, len(tasks))
        logger.debug("pool.start", workers=workers, tasks=len(tasks))
        with ProcessPoolExecutor(max_workers=workers) as executor:
            future_to_key = {executor.submit(func, *args): key for key, args in tasks}
            for future in as_completed(future_to_key):
                results[future_to_key[future]] = future.result()
    return sorted(results.items(), key=lambda item: item[0])


def replicate_blocks(M: int, jobs: int) -> List[range]:
    """Split range(M) into contiguous blocks, a few per worker"""
    if jobs <= 1:
        return [range(M)]
    n_blocks = min(M, 4 * jobs)
    edges = [round(k * M / n_blocks) for k in range(n_blocks + 1)]
    return [range(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]
