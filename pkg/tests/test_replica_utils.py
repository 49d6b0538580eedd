# tests/test_replica_utils.py
import asyncio

import pytest

from utils.replica_utils import _batches, run_replicas, run_replicas_async


def _echo(tables, seed, replica):
    return (seed, replica)


def test_batches_cover_the_range():
    batches = _batches(10, 600)
    assert [rid for b in batches for rid in b] == list(range(10, 610))
    assert max(len(b) for b in batches) <= 256


def test_inline_run_orders_by_replica(mini_tables):
    assert run_replicas(_echo, mini_tables, 3, 4, offset=2) == [(3, 2), (3, 3), (3, 4), (3, 5)]
    assert run_replicas(_echo, mini_tables, 3, 0) == []


def test_inside_a_loop_runs_inline(mini_tables):
    async def inner():
        return run_replicas(_echo, mini_tables, 1, 3, threads=4)

    assert asyncio.run(inner()) == [(1, 0), (1, 1), (1, 2)]


@pytest.mark.slow
def test_pool_results_match_inline(mini_tables):
    pooled = asyncio.run(run_replicas_async(_echo, mini_tables, 5, 300, threads=2))
    assert pooled == [(5, r) for r in range(300)]
