"""Expert residency management.

Each executor owns a ModelPool, a byte-budgeted set of resident experts.
Pools are initially filled by dealing experts in descending usage
probability round-robin across executors.  At runtime, space for an
incoming expert is freed by two-stage eviction:

* Stage 1 evicts dependency-blocked experts: resident downstream experts
  whose upstream producers are all absent from the pool and that no queued
  entry targets.  They cannot run soon, so they go first, in descending
  memory footprint, and only as many as the deficit requires.
* Stage 2, if stage 1 was insufficient, evicts the remaining unpinned
  experts in ascending usage probability (ties: larger footprint first,
  then expert id).

Pinned experts (owned by a running batch) are never evicted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .types import ExpertSpec, MemoryStarvationError, ModelRegistry


@dataclass
class ModelPool:
    """Resident experts of one executor, tracked in bytes."""

    executor_id: int
    expert_budget_bytes: float
    resident: dict[str, int] = field(default_factory=dict)  # expert_id -> bytes
    pinned: set[str] = field(default_factory=set)
    used_bytes: int = 0

    @property
    def free_bytes(self) -> float:
        return self.expert_budget_bytes - self.used_bytes

    def has(self, expert_id: str) -> bool:
        return expert_id in self.resident

    def add(self, expert_id: str, nbytes: int) -> None:
        if expert_id in self.resident:
            raise ValueError(f"expert {expert_id!r} already resident in pool {self.executor_id}")
        if nbytes > self.free_bytes:
            raise MemoryStarvationError(
                f"pool {self.executor_id}: {nbytes} bytes do not fit in {self.free_bytes} free"
            )
        self.resident[expert_id] = nbytes
        self.used_bytes += nbytes

    def remove(self, expert_id: str) -> int:
        if expert_id in self.pinned:
            raise ValueError(f"expert {expert_id!r} is pinned and cannot be removed")
        nbytes = self.resident.pop(expert_id)
        self.used_bytes -= nbytes
        return nbytes


def initialize_pools(
    experts_by_descending_prob: Sequence[ExpertSpec], pools: Sequence[ModelPool]
) -> list[list[str]]:
    """Deal experts round-robin across pools, most probable first.

    An expert that does not fit the pool whose turn it is tries the other
    pools in rotation order; dealing stops at the first expert no pool can
    hold.  Returns the placement per pool (also applied to the pools).
    """
    placements: list[list[str]] = [[] for _ in pools]
    if not pools:
        return placements
    pointer = 0
    for spec in experts_by_descending_prob:
        placed = None
        for offset in range(len(pools)):
            idx = (pointer + offset) % len(pools)
            if spec.param_bytes <= pools[idx].free_bytes:
                placed = idx
                break
        if placed is None:
            break
        pools[placed].add(spec.expert_id, spec.param_bytes)
        placements[placed].append(spec.expert_id)
        pointer = (placed + 1) % len(pools)
    return placements


class TwoStageEvictor:
    """Dependency-aware eviction over a registry's expert graph."""

    def __init__(self, registry: ModelRegistry):
        self.experts = registry.experts

    def select(
        self, pool: ModelPool, needed_bytes: int, pending_targets: Iterable[str] = ()
    ) -> list[str]:
        """Experts to evict, in order, to fit needed_bytes more.

        pending_targets are experts with queued work on this executor; a
        dependency-blocked expert only qualifies for stage 1 while nothing
        queued targets it.
        """
        deficit = needed_bytes - pool.free_bytes
        if deficit <= 0:
            return []
        pending = set(pending_targets)
        victims: list[str] = []
        reclaimed = 0.0

        stage_one = []
        for eid, nbytes in pool.resident.items():
            if eid in pool.pinned or eid in pending:
                continue
            spec = self.experts[eid]
            if not spec.upstream:
                continue
            if any(up in pool.resident for up in spec.upstream):
                continue
            stage_one.append((eid, nbytes))
        stage_one.sort(key=lambda item: (-item[1], item[0]))
        for eid, nbytes in stage_one:
            if reclaimed >= deficit:
                break
            victims.append(eid)
            reclaimed += nbytes
        if reclaimed >= deficit:
            return victims

        taken = set(victims)
        stage_two = [
            (eid, nbytes)
            for eid, nbytes in pool.resident.items()
            if eid not in pool.pinned and eid not in taken
        ]
        stage_two.sort(key=lambda item: (self.experts[item[0]].usage_prob, -item[1], item[0]))
        for eid, nbytes in stage_two:
            if reclaimed >= deficit:
                break
            victims.append(eid)
            reclaimed += nbytes
        if reclaimed < deficit:
            raise MemoryStarvationError(
                f"pool {pool.executor_id}: evicting every unpinned expert frees "
                f"{reclaimed} bytes, still short of {deficit}"
            )
        return victims
