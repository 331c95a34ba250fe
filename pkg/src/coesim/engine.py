"""Deterministic discrete-event simulation of expert serving.

Executors own a queue and a model pool.  An idle executor takes the
head-of-queue contiguous same-expert run, loads the expert if needed
(evicting per the active policy; loads serialize with execution), splits the
run into batches, and executes one batch at a time.  Completing a
classification batch emits follow-up requests for chained detection experts,
which re-enter through the same assign/arrange path as external arrivals.

Events are ordered by (time, insertion sequence), so identical configurations
replay identically: two runs with the same seed produce byte-identical
metrics and trace documents.

Policies:

* coserve: makespan-minimizing assignment, same-expert arranging, two-stage
  eviction.
* coserve_em_ra / coserve_em / coserve_none: the ablation ladder, dropping
  assignment, then arranging, then two-stage eviction (FIFO replacement,
  round-robin spread).
* samba_lru / samba_fifo: a single first-come-first-served GPU executor with
  LRU or FIFO expert replacement.
* samba_parallel: round-robin over the same executor layout as coserve, FCFS
  queues, LRU replacement.
"""

from __future__ import annotations

import heapq
import json
import time as _time
from dataclasses import dataclass, field, replace
from itertools import count

from . import profiler as profiler_mod
from . import routing, scheduler
from .baselines import FifoEvictor, LruEvictor, RoundRobinAssigner
from .costmodel import CostModel
from .expert_pool import ModelPool, TwoStageEvictor, initialize_pools
from .profiler import (
    ALLOC_WINDOW_SEARCH,
    PerfProfile,
    WindowSearchResult,
    build_perf_profile,
    decay_window_search,
    decide_allocation_mode,
)
from .seeding import subseed
from .types import (
    SCHEMA_VERSION,
    ConfigurationError,
    DeviceProfile,
    MemoryStarvationError,
    ModelRegistry,
    Request,
)


@dataclass(frozen=True)
class PolicySpec:
    assign: str  # "makespan" or "round_robin"
    arrange: bool
    evict: str  # "two_stage", "lru", or "fifo"
    single_gpu: bool  # collapse to one GPU executor by default
    host_mode: str  # ordering of the host-side expert cache


POLICIES: dict[str, PolicySpec] = {
    "coserve": PolicySpec("makespan", True, "two_stage", False, "prob"),
    "coserve_em_ra": PolicySpec("round_robin", True, "two_stage", False, "prob"),
    "coserve_em": PolicySpec("round_robin", False, "two_stage", False, "prob"),
    "coserve_none": PolicySpec("round_robin", False, "fifo", False, "fifo"),
    "samba_lru": PolicySpec("round_robin", False, "lru", True, "lru"),
    "samba_fifo": PolicySpec("round_robin", False, "fifo", True, "fifo"),
    "samba_parallel": PolicySpec("round_robin", False, "lru", False, "lru"),
}


@dataclass
class RunConfig:
    """Everything one simulation run depends on."""

    registry: ModelRegistry
    device: DeviceProfile
    policy: str
    stream: list[Request]
    seed: int = 0
    gpu_executors: int = 3
    cpu_executors: int = 1
    contention_factor: float = 1.15  # slope penalty per extra co-located executor
    cpu_mem_fraction: float = 0.4  # numa host share handed to CPU executors
    alloc_override: dict[str, int] | None = None  # processor -> resident expert count
    alloc_threshold: float = profiler_mod.DEFAULT_ALLOC_THRESHOLD
    plateau_threshold: float = profiler_mod.DEFAULT_PLATEAU_THRESHOLD
    initial_window: int = profiler_mod.DEFAULT_INITIAL_WINDOW
    error_margin: float = profiler_mod.DEFAULT_ERROR_MARGIN
    fit_points: int = profiler_mod.DEFAULT_FIT_POINTS
    search_enabled: bool = True
    search_sample_requests: int = 400
    window_choose: str = "random"
    samba_gpu_only: bool = True
    perf: PerfProfile | None = None
    trace: bool = False


@dataclass
class Metrics:
    """Aggregate outcome of one run.  Wall-clock fields stay out of the
    serialized document so metric files are byte-identical across runs."""

    policy: str
    seed: int
    completed_requests: int
    follow_ups: int
    makespan_s: float
    throughput_rps: float
    expert_switches: int
    evictions: int
    stale_predictions: int
    per_executor: list[dict]
    alloc: dict[str, dict]
    busy_s_total: float = 0.0
    sched_wall_s: float = 0.0
    sched_calls: int = 0

    def mean_service_time_s(self) -> float:
        """Simulated busy time per completed request."""
        if self.completed_requests == 0:
            return 0.0
        return self.busy_s_total / self.completed_requests

    def sched_wall_per_request_s(self) -> float:
        if self.sched_calls == 0:
            return 0.0
        return self.sched_wall_s / self.sched_calls

    def sched_overhead_ratio(self) -> float:
        """Wall-clock scheduling time per request relative to the simulated
        mean per-request service time."""
        service = self.mean_service_time_s()
        if service == 0.0:
            return 0.0
        return self.sched_wall_per_request_s() / service

    def to_doc(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "policy": self.policy,
            "seed": self.seed,
            "completed_requests": self.completed_requests,
            "follow_ups": self.follow_ups,
            "makespan_s": self.makespan_s,
            "throughput_rps": self.throughput_rps,
            "expert_switches": self.expert_switches,
            "evictions": self.evictions,
            "stale_predictions": self.stale_predictions,
            "busy_s_total": self.busy_s_total,
            "per_executor": self.per_executor,
            "alloc": {proc: self.alloc[proc] for proc in sorted(self.alloc)},
        }


def max_useful_expert_count(
    registry: ModelRegistry,
    device: DeviceProfile,
    proc: str,
    gpu_executors: int,
    cpu_executors: int,
    cpu_mem_fraction: float = 0.4,
) -> int:
    """Largest resident expert count the allocation search should sample.

    The expert budget is clamped so a one-item batch always fits, so every
    count past the clamp point yields an identical allocation; sampling
    beyond it cannot change the outcome.
    """
    per_exec, _ = partition_memory(device, gpu_executors, cpu_executors, cpu_mem_fraction)
    if proc not in per_exec:
        raise ConfigurationError(f"no {proc} executors in this layout")
    cost = CostModel(device)
    arches = sorted({spec.arch for spec in registry.experts.values()})
    min_inf = max(cost.inference_memory(a, proc, 1) for a in arches)
    cap_bytes = (per_exec[proc] - min_inf) * (gpu_executors if proc == "gpu" else cpu_executors)
    cum = 0
    for n, spec in enumerate(registry.experts_by_descending_prob(), start=1):
        cum += spec.param_bytes
        if cum >= cap_bytes:
            return n
    return len(registry.experts)


def partition_memory(
    device: DeviceProfile,
    gpu_count: int,
    cpu_count: int,
    cpu_mem_fraction: float = 0.4,
) -> tuple[dict[str, float], float]:
    """Split device memory into per-executor budgets.

    Returns (per-executor memory by processor, host cache budget).  On a numa
    device the GPU executors split device memory, CPU executors take
    cpu_mem_fraction of host memory, and the rest of host memory becomes a
    shared expert cache.  On a uma device every executor gets an equal share
    of the unified memory and there is no separate cache.
    """
    if gpu_count < 0 or cpu_count < 0 or gpu_count + cpu_count < 1:
        raise ConfigurationError(f"need at least one executor, got gpu={gpu_count} cpu={cpu_count}")
    per_exec: dict[str, float] = {}
    if device.architecture == "numa":
        if gpu_count:
            per_exec["gpu"] = device.tier("device").capacity_bytes / gpu_count
        host_cap = device.tier("host").capacity_bytes
        cpu_total = host_cap * cpu_mem_fraction if cpu_count else 0.0
        if cpu_count:
            per_exec["cpu"] = cpu_total / cpu_count
        host_cache_budget = host_cap - cpu_total
    else:
        share = device.tier("device").capacity_bytes / (gpu_count + cpu_count)
        if gpu_count:
            per_exec["gpu"] = share
        if cpu_count:
            per_exec["cpu"] = share
        host_cache_budget = 0.0
    return per_exec, host_cache_budget


@dataclass
class _Entry:
    request_id: int
    expert_id: str
    pred_exec_s: float
    pred_switch_s: float
    in_flight: bool = False
    stale: bool = False
    follow_up: bool = False


class _Queue:
    """Executor queue with per-entry latency predictions.

    Entries stay queued while their batch executes (flagged in_flight), so
    total_pending_s always equals the sum of per-entry predictions over
    everything not yet finished.
    """

    def __init__(self) -> None:
        self.entries: list[_Entry] = []
        self.counts: dict[str, int] = {}
        self.total_pending_s = 0.0

    def insert(self, pos: int, entry: _Entry) -> None:
        self.entries.insert(pos, entry)
        self.counts[entry.expert_id] = self.counts.get(entry.expert_id, 0) + 1
        self.total_pending_s += entry.pred_exec_s + entry.pred_switch_s

    def remove_prefix(self, n: int) -> list[_Entry]:
        batch = self.entries[:n]
        del self.entries[:n]
        for entry in batch:
            remaining = self.counts[entry.expert_id] - 1
            if remaining:
                self.counts[entry.expert_id] = remaining
            else:
                del self.counts[entry.expert_id]
            self.total_pending_s -= entry.pred_exec_s + entry.pred_switch_s
        if not self.entries:
            self.total_pending_s = 0.0  # shed float drift at every drain
        return batch

    def head_run(self) -> list[_Entry]:
        entries = self.entries
        start = 0
        while start < len(entries) and entries[start].in_flight:
            start += 1
        if start == len(entries):
            return []
        expert = entries[start].expert_id
        run = []
        for entry in entries[start:]:
            if entry.in_flight or entry.expert_id != expert:
                break
            run.append(entry)
        return run

    def pending_targets(self) -> set[str]:
        return {e.expert_id for e in self.entries if not e.in_flight}


class _HostCache:
    """Host-memory expert cache shared by a device's executors (numa only)."""

    def __init__(self, budget_bytes: float, mode: str, usage_prob: dict[str, float]):
        self.budget_bytes = budget_bytes
        self.mode = mode
        self.usage_prob = usage_prob
        self.resident: dict[str, int] = {}
        self.used_bytes = 0
        self._clock = count()
        self._stamp: dict[str, int] = {}

    def has(self, expert_id: str) -> bool:
        return expert_id in self.resident

    def note_read(self, expert_id: str) -> None:
        if self.mode == "lru" and expert_id in self.resident:
            self._stamp[expert_id] = next(self._clock)

    def insert(self, expert_id: str, nbytes: int) -> None:
        if expert_id in self.resident:
            self.note_read(expert_id)
            return
        if nbytes > self.budget_bytes:
            return
        while self.used_bytes + nbytes > self.budget_bytes:
            victim = self._victim()
            self.used_bytes -= self.resident.pop(victim)
            self._stamp.pop(victim, None)
        self.resident[expert_id] = nbytes
        self.used_bytes += nbytes
        self._stamp[expert_id] = next(self._clock)

    def _victim(self) -> str:
        if self.mode == "prob":
            return min(
                self.resident,
                key=lambda eid: (self.usage_prob.get(eid, 0.0), -self.resident[eid], eid),
            )
        # lru and fifo both evict the smallest stamp; they differ in whether
        # note_read refreshes it.
        return min(self.resident, key=lambda eid: (self._stamp.get(eid, -1), eid))


class _ExecutorState:
    def __init__(
        self,
        executor_id: int,
        proc: str,
        pool: ModelPool,
        inference_budget_bytes: float,
        k_scale: float,
        evictor,
    ):
        self.id = executor_id
        self.proc = proc
        self.pool = pool
        self.inference_budget_bytes = inference_budget_bytes
        self.k_scale = k_scale
        self.evictor = evictor
        self.queue = _Queue()
        self.busy = False
        self.busy_s = 0.0
        self.switches = 0
        self.current_expert: str | None = None


class Simulation:
    def __init__(self, config: RunConfig):
        if config.policy not in POLICIES:
            raise ConfigurationError(f"unknown policy {config.policy!r}, available: {sorted(POLICIES)}")
        if not config.stream:
            raise ConfigurationError("request stream is empty")
        if config.contention_factor < 1.0:
            raise ConfigurationError("contention_factor must be >= 1")
        self.config = config
        self.policy = POLICIES[config.policy]
        self.registry = config.registry
        self.device = config.device
        self.cost = CostModel(config.device)

        self.gpu_count, self.cpu_count = self._executor_counts()
        self.per_exec_mem, self.host_cache_budget = partition_memory(
            self.device, self.gpu_count, self.cpu_count, config.cpu_mem_fraction
        )
        self.perf = config.perf or build_perf_profile(
            self.registry, self.cost, self.per_exec_mem, config.plateau_threshold
        )
        self.window_results: dict[str, WindowSearchResult] = {}
        self.alloc = self._resolve_allocation()
        self.executors = self._build_executors()
        self._initialize_residency()

        self.routes = {c: routing.route(c, self.registry.rules) for c in self.registry.rules}
        # Fresh request copies so probe runs and repeated runs never see
        # half-consumed chains.
        self.requests = {
            r.request_id: replace(r, chain=list(r.chain), origin="external") for r in config.stream
        }

        self.assigner = (
            RoundRobinAssigner(len(self.executors)) if self.policy.assign == "round_robin" else None
        )
        self._heap: list = []
        self._seq = count()
        self.trace: list[dict] = []
        self.completed = 0
        self.follow_ups_generated = 0
        self.follow_ups_completed = 0
        self.evictions = 0
        self.stale_predictions = 0
        self.last_completion_s = 0.0
        self.sched_wall_s = 0.0
        self.sched_calls = 0

    # -- construction ---------------------------------------------------

    def _executor_counts(self) -> tuple[int, int]:
        gpu, cpu = self.config.gpu_executors, self.config.cpu_executors
        if self.policy.single_gpu and self.config.samba_gpu_only:
            gpu, cpu = 1, 0
        return gpu, cpu

    def _resolve_allocation(self) -> dict[str, dict]:
        """Split each processor's executor memory between resident experts
        and batch intermediates."""
        experts_desc = self.registry.experts_by_descending_prob()
        cum_bytes = [0]
        for spec in experts_desc:
            cum_bytes.append(cum_bytes[-1] + spec.param_bytes)
        max_expert = max(spec.param_bytes for spec in experts_desc)
        arches = sorted({spec.arch for spec in self.registry.experts.values()})
        n_exec = {"gpu": self.gpu_count, "cpu": self.cpu_count}
        overrides = dict(self.config.alloc_override or {})
        alloc: dict[str, dict] = {}
        for proc in sorted(self.per_exec_mem):
            mem = self.per_exec_mem[proc]
            min_inf = max(self.cost.inference_memory(a, proc, 1) for a in arches)
            if mem < max_expert + min_inf:
                raise MemoryStarvationError(
                    f"{proc} executor memory {mem:.0f} cannot hold the largest expert "
                    f"({max_expert} bytes) plus a single-item batch ({min_inf:.0f} bytes); "
                    f"reduce the executor count"
                )
            chosen = None
            if proc in overrides:
                chosen = max(1, min(int(overrides[proc]), len(experts_desc)))
                budget = cum_bytes[chosen] / n_exec[proc]
            else:
                modes = {
                    decide_allocation_mode(self.cost, self.perf, a, proc, mem, self.config.alloc_threshold)
                    for a in arches
                }
                if ALLOC_WINDOW_SEARCH in modes and self.config.search_enabled:
                    result = self._run_window_search(proc)
                    self.window_results[proc] = result
                    chosen = max(1, min(result.chosen, len(experts_desc)))
                    budget = cum_bytes[chosen] / n_exec[proc]
                else:
                    reserve = max(
                        self.cost.inference_memory(a, proc, self.perf.entry(a, proc).max_batch)
                        for a in arches
                    )
                    budget = mem - reserve
            # Floors: room for the largest expert, and for a one-item batch.
            budget = min(max(budget, max_expert), mem - min_inf)
            alloc[proc] = {
                "expert_budget_bytes": budget,
                "inference_budget_bytes": mem - budget,
                "experts_chosen": chosen,
            }
        return alloc

    def _run_window_search(self, proc: str) -> WindowSearchResult:
        config = self.config
        sample = config.stream[: min(config.search_sample_requests, len(config.stream))]
        overrides = dict(config.alloc_override or {})

        def sample_throughput(expert_count: int) -> float:
            probe = replace(
                config,
                stream=sample,
                seed=subseed(config.seed, "alloc-sample"),
                alloc_override={**overrides, proc: expert_count},
                search_enabled=False,
                perf=self.perf,
                trace=False,
            )
            metrics, _ = run(probe)
            return metrics.throughput_rps

        return decay_window_search(
            sample_throughput,
            max_count=max_useful_expert_count(
                self.registry,
                self.device,
                proc,
                self.gpu_count,
                self.cpu_count,
                self.config.cpu_mem_fraction,
            ),
            initial_window=config.initial_window,
            error_margin=config.error_margin,
            fit_points=config.fit_points,
            seed=subseed(config.seed, "alloc", proc),
            choose=config.window_choose,
        )

    def _build_executors(self) -> list[_ExecutorState]:
        executors = []
        layout = [("gpu", self.gpu_count), ("cpu", self.cpu_count)]
        for proc, n in layout:
            if n == 0:
                continue
            k_scale = self.config.contention_factor ** (n - 1)
            for _ in range(n):
                pool = ModelPool(
                    executor_id=len(executors),
                    expert_budget_bytes=self.alloc[proc]["expert_budget_bytes"],
                )
                executors.append(
                    _ExecutorState(
                        executor_id=len(executors),
                        proc=proc,
                        pool=pool,
                        inference_budget_bytes=self.alloc[proc]["inference_budget_bytes"],
                        k_scale=k_scale,
                        evictor=self._make_evictor(),
                    )
                )
        return executors

    def _make_evictor(self):
        if self.policy.evict == "two_stage":
            return TwoStageEvictor(self.registry)
        if self.policy.evict == "lru":
            return LruEvictor()
        return FifoEvictor()

    def _initialize_residency(self) -> None:
        experts_desc = self.registry.experts_by_descending_prob()
        pools = [ex.pool for ex in self.executors]
        placements = initialize_pools(experts_desc, pools)
        for ex, placed in zip(self.executors, placements):
            for eid in placed:
                if isinstance(ex.evictor, LruEvictor):
                    ex.evictor.touch(eid)
                elif isinstance(ex.evictor, FifoEvictor):
                    ex.evictor.on_resident(eid)
        self.host_cache = None
        if self.device.architecture == "numa" and self.host_cache_budget > 0:
            usage = {eid: spec.usage_prob for eid, spec in self.registry.experts.items()}
            cache = _HostCache(self.host_cache_budget, self.policy.host_mode, usage)
            resident_anywhere = {eid for pool in pools for eid in pool.resident}
            for spec in experts_desc:
                if spec.expert_id in resident_anywhere:
                    continue
                if cache.used_bytes + spec.param_bytes <= cache.budget_bytes:
                    cache.insert(spec.expert_id, spec.param_bytes)
            self.host_cache = cache

    # -- event plumbing -------------------------------------------------

    def _push(self, time_s: float, kind: str, data) -> None:
        heapq.heappush(self._heap, (time_s, next(self._seq), kind, data))

    def _record(self, time_s: float, executor, event: str, expert_id, request_id) -> None:
        if self.config.trace:
            self.trace.append(
                {
                    "time_s": time_s,
                    "executor": executor,
                    "event": event,
                    "expert_id": expert_id,
                    "request_id": request_id,
                }
            )

    # -- scheduling -----------------------------------------------------

    def _view(self, ex: _ExecutorState) -> scheduler.QueueView:
        return scheduler.QueueView(
            executor_id=ex.id,
            proc=ex.proc,
            total_pending_time_s=ex.queue.total_pending_s,
            entries=(),
            experts_in_pool=ex.pool.resident.keys(),
            expert_counts=ex.queue.counts,
        )

    def _source_tier(self, expert_id: str) -> str:
        if self.host_cache is not None and self.host_cache.has(expert_id):
            return "host"
        return "ssd"

    def _load_latency(self, expert_id: str) -> float:
        spec = self.registry.experts[expert_id]
        return self.cost.load_latency_from(self._source_tier(expert_id), spec.param_bytes)

    def _admit(self, t: float, req: Request, follow_up: bool) -> None:
        expert_id = req.chain[0]
        spec = self.registry.experts[expert_id]
        started = _time.perf_counter()
        if self.policy.assign == "makespan":
            views = [self._view(ex) for ex in self.executors]
            load_latency = self._load_latency(expert_id)
            ex_id, _ = scheduler.assign(
                expert_id,
                views,
                perf_for=lambda view: self.perf.entry(spec.arch, view.proc),
                load_latency_for=lambda view: load_latency,
            )
        else:
            ex_id = self.assigner.next_executor()
        ex = self.executors[ex_id]
        exec_part, switch_part = scheduler.predict_parts(
            self._view(ex),
            expert_id,
            self.perf.entry(spec.arch, ex.proc),
            self._load_latency(expert_id),
        )
        entry = _Entry(
            request_id=req.request_id,
            expert_id=expert_id,
            pred_exec_s=exec_part,
            pred_switch_s=switch_part,
            follow_up=follow_up,
        )
        if self.policy.arrange:
            pos = scheduler.arrange_position(ex.queue.entries, expert_id, key=lambda e: e.expert_id)
        else:
            pos = len(ex.queue.entries)
        ex.queue.insert(pos, entry)
        self.sched_wall_s += _time.perf_counter() - started
        self.sched_calls += 1
        self._record(t, ex.id, "assign", expert_id, req.request_id)
        if not ex.busy:
            self._push(t, "wake", ex.id)

    # -- executor mechanics ---------------------------------------------

    def _step(self, t: float, ex: _ExecutorState) -> None:
        if ex.busy:
            return
        run_entries = ex.queue.head_run()
        if not run_entries:
            return
        expert_id = run_entries[0].expert_id
        spec = self.registry.experts[expert_id]
        if not ex.pool.has(expert_id):
            self._start_load(t, ex, run_entries, spec)
        else:
            self._start_batch(t, ex, run_entries, spec)

    def _start_load(self, t: float, ex: _ExecutorState, run_entries, spec) -> None:
        pool = ex.pool
        if spec.param_bytes > pool.expert_budget_bytes:
            raise MemoryStarvationError(
                f"expert {spec.expert_id!r} ({spec.param_bytes} bytes) exceeds the "
                f"expert budget of executor {ex.id} ({pool.expert_budget_bytes:.0f} bytes)"
            )
        victims = ex.evictor.select(pool, spec.param_bytes, ex.queue.pending_targets())
        for victim in victims:
            nbytes = pool.remove(victim)
            self.evictions += 1
            self._record(t, ex.id, "evict", victim, None)
            if self.host_cache is not None and ex.proc == "gpu":
                self.host_cache.insert(victim, nbytes)
            self._invalidate_prediction(ex, victim)
        source = self._source_tier(spec.expert_id)
        latency = self.cost.load_latency_from(source, spec.param_bytes)
        pool.add(spec.expert_id, spec.param_bytes)
        if isinstance(ex.evictor, LruEvictor):
            ex.evictor.touch(spec.expert_id)
        elif isinstance(ex.evictor, FifoEvictor):
            ex.evictor.on_resident(spec.expert_id)
        if source == "host":
            self.host_cache.note_read(spec.expert_id)
        ex.switches += 1
        head = run_entries[0]
        if head.stale or head.pred_switch_s == 0.0:
            # The entry was admitted under a no-switch assumption that an
            # eviction later broke; the load is paid now instead of reordering.
            self.stale_predictions += 1
            head.stale = False
        ex.busy = True
        ex.busy_s += latency
        self._record(t, ex.id, "load", spec.expert_id, None)
        self._push(t + latency, "load_done", ex.id)

    def _invalidate_prediction(self, ex: _ExecutorState, expert_id: str) -> None:
        """An eviction broke the zero-switch assumption of queued entries;
        charge the first pending same-expert entry with the load."""
        if ex.queue.counts.get(expert_id, 0) == 0:
            return
        for entry in ex.queue.entries:
            if entry.expert_id == expert_id and not entry.in_flight:
                if entry.pred_switch_s == 0.0 and not entry.stale:
                    latency = self._load_latency(expert_id)
                    entry.pred_switch_s = latency
                    entry.stale = True
                    ex.queue.total_pending_s += latency
                break

    def _start_batch(self, t: float, ex: _ExecutorState, run_entries, spec) -> None:
        entry = self.perf.entry(spec.arch, ex.proc)
        cap = scheduler.batch_cap(
            entry.max_batch,
            ex.inference_budget_bytes,
            lambda n: self.cost.inference_memory(spec.arch, ex.proc, n),
        )
        if cap < 1:
            raise MemoryStarvationError(
                f"executor {ex.id} cannot fit a single-item {spec.arch} batch in "
                f"{ex.inference_budget_bytes:.0f} bytes of inference memory"
            )
        batch = run_entries[:cap]
        for item in batch:
            item.in_flight = True
        ex.pool.pinned.add(spec.expert_id)
        ex.current_expert = spec.expert_id
        if isinstance(ex.evictor, LruEvictor):
            ex.evictor.touch(spec.expert_id)
        duration = self.cost.exec_latency(spec.arch, ex.proc, len(batch), k_scale=ex.k_scale)
        ex.busy = True
        ex.busy_s += duration
        self._record(t, ex.id, "batch_start", spec.expert_id, None)
        self._push(t + duration, "batch_done", (ex.id, len(batch), spec.expert_id))

    # -- event handlers -------------------------------------------------

    def _on_arrival(self, t: float, req: Request) -> None:
        plan = self.routes[req.component_type]
        chain = [plan.experts[0]]
        if len(plan.experts) > 1 and req.detect_u < plan.branch_prob:
            chain.append(plan.experts[1])
        req.chain = chain
        self._record(t, None, "arrival", None, req.request_id)
        self._admit(t, req, follow_up=False)

    def _on_follow_up(self, t: float, request_id: int) -> None:
        req = self.requests[request_id]
        req.origin = "follow_up"
        self._record(t, None, "follow_up", req.chain[0], request_id)
        self._admit(t, req, follow_up=True)

    def _on_load_done(self, t: float, ex: _ExecutorState) -> None:
        ex.busy = False
        self._record(t, ex.id, "load_done", None, None)
        self._step(t, ex)

    def _on_batch_done(self, t: float, ex: _ExecutorState, n: int, expert_id: str) -> None:
        ex.busy = False
        ex.pool.pinned.discard(expert_id)
        ex.current_expert = None
        batch = ex.queue.remove_prefix(n)
        self._record(t, ex.id, "batch_done", expert_id, None)
        for item in batch:
            req = self.requests[item.request_id]
            req.chain.pop(0)
            if item.follow_up:
                self.follow_ups_completed += 1
            if req.chain:
                self.follow_ups_generated += 1
                self._push(t, "follow_up", item.request_id)
            else:
                self.completed += 1
                self.last_completion_s = t
                self._record(t, ex.id, "complete", expert_id, item.request_id)
        self._push(t, "wake", ex.id)

    # -- main loop ------------------------------------------------------

    def run(self) -> tuple[Metrics, list[dict]]:
        for req in self.requests.values():
            self._push(req.arrival_time_s, "arrival", req.request_id)
        while self._heap:
            t, _, kind, data = heapq.heappop(self._heap)
            if kind == "arrival":
                self._on_arrival(t, self.requests[data])
            elif kind == "follow_up":
                self._on_follow_up(t, data)
            elif kind == "wake":
                self._step(t, self.executors[data])
            elif kind == "load_done":
                self._on_load_done(t, self.executors[data])
            elif kind == "batch_done":
                ex_id, n, expert_id = data
                self._on_batch_done(t, self.executors[ex_id], n, expert_id)
            else:  # pragma: no cover - defensive
                raise RuntimeError(f"unknown event kind {kind!r}")
        self._check_conservation()
        return self._metrics(), self.trace

    def _check_conservation(self) -> None:
        if self.completed != len(self.requests):
            raise RuntimeError(
                f"conservation violated: {self.completed} of {len(self.requests)} requests completed"
            )
        if self.follow_ups_generated != self.follow_ups_completed:
            raise RuntimeError(
                f"conservation violated: {self.follow_ups_generated} follow-ups generated, "
                f"{self.follow_ups_completed} completed"
            )
        for ex in self.executors:
            if ex.queue.entries:
                raise RuntimeError(f"executor {ex.id} finished with {len(ex.queue.entries)} stranded entries")

    def _metrics(self) -> Metrics:
        makespan = self.last_completion_s
        per_executor = [
            {
                "executor": ex.id,
                "proc": ex.proc,
                "busy_s": ex.busy_s,
                "busy_fraction": ex.busy_s / makespan if makespan > 0 else 0.0,
                "switches": ex.switches,
            }
            for ex in self.executors
        ]
        return Metrics(
            policy=self.config.policy,
            seed=self.config.seed,
            completed_requests=self.completed,
            follow_ups=self.follow_ups_completed,
            makespan_s=makespan,
            throughput_rps=self.completed / makespan if makespan > 0 else 0.0,
            expert_switches=sum(ex.switches for ex in self.executors),
            evictions=self.evictions,
            stale_predictions=self.stale_predictions,
            per_executor=per_executor,
            alloc=self.alloc,
            busy_s_total=sum(ex.busy_s for ex in self.executors),
            sched_wall_s=self.sched_wall_s,
            sched_calls=self.sched_calls,
        )


def run(config: RunConfig) -> tuple[Metrics, list[dict]]:
    """Simulate one configuration to completion."""
    return Simulation(config).run()


def metrics_json(metrics: Metrics) -> str:
    return json.dumps(metrics.to_doc(), sort_keys=True, indent=2) + "\n"


def trace_jsonl(trace: list[dict]) -> str:
    lines = [json.dumps(rec, sort_keys=True, separators=(",", ":")) for rec in trace]
    return "\n".join(lines) + ("\n" if lines else "")
