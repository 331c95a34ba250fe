"""Baseline scheduling and eviction strategies.

The reference serving stack runs first-come-first-served queues with
recency-based expert replacement: lru_evict drops the least recently
executed expert, fifo_evict drops the longest-resident one (touching a
resident expert does not refresh its arrival position), and round-robin
assignment spreads requests evenly across executors regardless of queue
state.
"""

from __future__ import annotations

from itertools import count
from typing import Iterable

from .expert_pool import ModelPool
from .types import MemoryStarvationError


class LruEvictor:
    """Evict least-recently-executed first.  Recency advances on every load
    and every batch execution."""

    def __init__(self) -> None:
        self._clock = count()
        self._last_use: dict[str, int] = {}

    def touch(self, expert_id: str) -> None:
        self._last_use[expert_id] = next(self._clock)

    def select(
        self, pool: ModelPool, needed_bytes: int, pending_targets: Iterable[str] = ()
    ) -> list[str]:
        return _evict_in_order(pool, needed_bytes, key=lambda eid: self._last_use.get(eid, -1))


class FifoEvictor:
    """Evict in residency-arrival order.  Only an absent-to-resident
    transition sets the position; re-executing a resident expert keeps it."""

    def __init__(self) -> None:
        self._clock = count()
        self._arrived: dict[str, int] = {}

    def on_resident(self, expert_id: str) -> None:
        self._arrived[expert_id] = next(self._clock)

    def select(
        self, pool: ModelPool, needed_bytes: int, pending_targets: Iterable[str] = ()
    ) -> list[str]:
        return _evict_in_order(pool, needed_bytes, key=lambda eid: self._arrived.get(eid, -1))


def _evict_in_order(pool: ModelPool, needed_bytes: int, key) -> list[str]:
    deficit = needed_bytes - pool.free_bytes
    if deficit <= 0:
        return []
    candidates = sorted(
        (eid for eid in pool.resident if eid not in pool.pinned), key=lambda eid: (key(eid), eid)
    )
    victims = []
    reclaimed = 0.0
    for eid in candidates:
        if reclaimed >= deficit:
            break
        victims.append(eid)
        reclaimed += pool.resident[eid]
    if reclaimed < deficit:
        raise MemoryStarvationError(
            f"pool {pool.executor_id}: evicting every unpinned expert frees "
            f"{reclaimed} bytes, still short of {deficit}"
        )
    return victims


class RoundRobinAssigner:
    """Cycle through executors in id order, one request each."""

    def __init__(self, num_executors: int):
        if num_executors < 1:
            raise ValueError("need at least one executor")
        self.num_executors = num_executors
        self._next = 0

    def next_executor(self) -> int:
        choice = self._next
        self._next = (self._next + 1) % self.num_executors
        return choice
