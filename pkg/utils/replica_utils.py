# utils/replica_utils.py
import asyncio
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Optional, TypeVar

from config import REPLICA_BATCH
from models.potential import SceneTables

logger = logging.getLogger(__name__)

R = TypeVar("R")
Task = Callable[[SceneTables, int, int], R]

# Per-process copy of the scene tables, installed once by the pool initializer.
_WORKER_TABLES: Optional[SceneTables] = None


def _install_tables(tables: SceneTables) -> None:
    global _WORKER_TABLES
    _WORKER_TABLES = tables


def _run_batch(task: Task, seed: int, replica_ids: List[int]) -> List[R]:
    if _WORKER_TABLES is None:
        raise RuntimeError("worker started without scene tables")
    return [task(_WORKER_TABLES, seed, rid) for rid in replica_ids]


def _batches(offset: int, n: int) -> List[List[int]]:
    ids = list(range(offset, offset + n))
    return [ids[i:i + REPLICA_BATCH] for i in range(0, n, REPLICA_BATCH)]


async def run_replicas_async(
    task: Task, tables: SceneTables, seed: int, n: int, threads: int = 1, offset: int = 0
) -> List[R]:
    """
    Runs replicas offset .. offset + n - 1 of `task` over a process pool.
    Results come back ordered by replica id, so they do not depend on `threads`.
    """
    if n <= 0:
        return []
    if threads <= 1:
        return [task(tables, seed, rid) for rid in range(offset, offset + n)]

    loop = asyncio.get_running_loop()
    results: List[R] = []
    with ProcessPoolExecutor(max_workers=threads, initializer=_install_tables, initargs=(tables,)) as pool:
        futures = [loop.run_in_executor(pool, _run_batch, task, seed, batch) for batch in _batches(offset, n)]
        for done, batch in enumerate(await asyncio.gather(*futures), start=1):
            results.extend(batch)
            logger.debug(f"Merged replica batch {done}/{len(futures)}")
    logger.info(f"Finished {n} replicas on {threads} workers")
    return results


def run_replicas(
    task: Task, tables: SceneTables, seed: int, n: int, threads: int = 1, offset: int = 0
) -> List[R]:
    """Synchronous entry point; safe to call from code that is not already inside an event loop."""
    try:
        asyncio.get_running_loop()
    except RuntimeError:
        return asyncio.run(run_replicas_async(task, tables, seed, n, threads, offset))
    if threads > 1:
        logger.warning("Already inside an event loop; running replicas inline")
    return [task(tables, seed, rid) for rid in range(offset, offset + n)]
