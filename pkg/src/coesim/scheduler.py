"""Dependency-aware request scheduling.

Three pure decisions, each operating on immutable queue snapshots:

* predict how much latency a request adds to a queue.  The execution part is
  the per-item slope k when the queue already holds a same-expert entry (it
  joins that batch run), else k + b for a fresh batch.  The switching part is
  zero when the expert is already in the executor's pool or a same-expert
  entry is queued (the load is paid by the preceding entry), else the load
  latency from the expert's current tier.
* assign a request to the executor that minimizes the resulting makespan,
  the maximum over all queues of their total pending time with the candidate
  queue incremented by the predicted addition.  Ties prefer the smallest
  added latency, then the lowest executor id.
* arrange a queued request directly behind the last same-expert entry, so
  same-expert requests form contiguous runs that execute as batches; without
  a same-expert entry it appends.

split_batch turns a contiguous run into executable batches, capped by both
the profiled maximum batch and what fits in free inference memory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, TypeVar

from .profiler import PerfEntry
from .types import MemoryStarvationError

T = TypeVar("T")


@dataclass(frozen=True)
class QueueView:
    """Immutable snapshot of one executor queue for scheduling decisions."""

    executor_id: int
    proc: str
    total_pending_time_s: float
    entries: tuple[tuple[int, str], ...] = ()  # (request_id, expert_id)
    experts_in_pool: frozenset[str] = frozenset()
    expert_counts: Mapping[str, int] | None = None  # derived from entries when absent

    def holds_expert(self, expert_id: str) -> bool:
        if self.expert_counts is not None:
            return self.expert_counts.get(expert_id, 0) > 0
        return any(eid == expert_id for _, eid in self.entries)


def predict_parts(
    queue: QueueView, expert_id: str, perf: PerfEntry, load_latency_s: float
) -> tuple[float, float]:
    """(execution, switching) latency parts a request would add to queue."""
    queued = queue.holds_expert(expert_id)
    exec_part = perf.k_s if queued else perf.k_s + perf.b_s
    if queued or expert_id in queue.experts_in_pool:
        switch_part = 0.0
    else:
        switch_part = load_latency_s
    return exec_part, switch_part


def predict_added_latency(
    queue: QueueView, expert_id: str, perf: PerfEntry, load_latency_s: float
) -> float:
    """Total latency a request for expert_id would add to queue."""
    exec_part, switch_part = predict_parts(queue, expert_id, perf, load_latency_s)
    return exec_part + switch_part


def assign(
    expert_id: str,
    queues: Sequence[QueueView],
    perf_for: Callable[[QueueView], PerfEntry],
    load_latency_for: Callable[[QueueView], float],
) -> tuple[int, float]:
    """Pick the executor whose queue minimizes the resulting makespan.

    Returns (executor_id, predicted added latency on that executor).
    """
    if not queues:
        raise ValueError("assign needs at least one queue")
    totals = [q.total_pending_time_s for q in queues]
    best: tuple[float, float, int] | None = None
    best_added = 0.0
    for idx, queue in enumerate(queues):
        added = predict_added_latency(queue, expert_id, perf_for(queue), load_latency_for(queue))
        makespan = max(
            totals[idx] + added,
            max((t for j, t in enumerate(totals) if j != idx), default=0.0),
        )
        key = (makespan, added, queue.executor_id)
        if best is None or key < best:
            best = key
            best_added = added
    return best[2], best_added


def arrange_position(
    entries: Sequence[T], expert_id: str, key: Callable[[T], str] = lambda item: item
) -> int:
    """Insertion index directly behind the last same-expert entry, or the
    queue tail when no entry uses the expert."""
    for idx in range(len(entries) - 1, -1, -1):
        if key(entries[idx]) == expert_id:
            return idx + 1
    return len(entries)


def batch_cap(
    max_batch: int, free_inference_bytes: float, inference_memory: Callable[[int], float]
) -> int:
    """Largest executable batch under both the profiled and memory caps."""
    cap = 0
    while cap < max_batch and inference_memory(cap + 1) <= free_inference_bytes:
        cap += 1
    return cap


def split_batch(
    run: Sequence[T],
    max_batch: int,
    free_inference_bytes: float,
    inference_memory: Callable[[int], float],
) -> list[list[T]]:
    """Split a contiguous same-expert run into executable batches.

    Greedy: full batches at the cap, then the remainder.  A cap of zero means
    not even a single-item batch fits and is raised as memory starvation.
    """
    cap = batch_cap(max_batch, free_inference_bytes, inference_memory)
    if cap < 1:
        raise MemoryStarvationError(
            f"free inference memory {free_inference_bytes} cannot hold a single-item batch"
        )
    return [list(run[i : i + cap]) for i in range(0, len(run), cap)]
