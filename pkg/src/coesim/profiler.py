"""Offline profiling and memory-allocation search.

Profiling answers two questions per (architecture, processor) pair: what is
the largest batch size worth running, and what linear constants describe the
execution latency.  The maximum batch is the point where growing the batch
stops paying: the smallest n whose average per-item latency improves by less
than a threshold when moving to n + 1, bounded by what fits in memory.

The allocation search decides how much processor memory to dedicate to
resident experts versus batch intermediates.  When the worst-case batch
footprint is small relative to the budget we simply reserve it.  Otherwise a
sliding-window search samples throughput at growing expert counts: windows
start at [0, w0], each next window abuts the previous one and shrinks by a
decay factor of 1 - w0 / 100, a line is fitted through the first few samples,
and the search stops at the first sample that falls more than an error margin
below the fitted trend.  The final expert count is drawn from the last
window.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .costmodel import CostModel
from .seeding import subseed
from .types import (
    SCHEMA_VERSION,
    ConfigurationError,
    DeviceProfile,
    ModelRegistry,
    check_keys,
    check_schema_version,
)

ALLOC_MAX_BATCH_RESERVE = "max_batch_reserve"
ALLOC_WINDOW_SEARCH = "window_search"

DEFAULT_PLATEAU_THRESHOLD = 0.02
DEFAULT_ALLOC_THRESHOLD = 0.15
DEFAULT_INITIAL_WINDOW = 15
DEFAULT_ERROR_MARGIN = 0.05
DEFAULT_FIT_POINTS = 3


@dataclass(frozen=True)
class PerfEntry:
    """Profiled behavior of one architecture on one processor."""

    arch: str
    proc: str
    max_batch: int
    k_s: float
    b_s: float
    load_latency_by_tier: dict[str, float]
    memory_score: float  # footprint normalized so the largest expert is 1.0


@dataclass
class PerfProfile:
    """All profiled (architecture, processor) entries for one device."""

    device_name: str
    entries: dict[tuple[str, str], PerfEntry]

    def entry(self, arch: str, proc: str) -> PerfEntry:
        try:
            return self.entries[(arch, proc)]
        except KeyError:
            raise ConfigurationError(
                f"profile for device {self.device_name!r} has no entry for "
                f"arch {arch!r} on {proc!r}"
            ) from None

    def to_doc(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "device": self.device_name,
            "entries": [
                {
                    "arch": e.arch,
                    "proc": e.proc,
                    "max_batch": e.max_batch,
                    "k_s": e.k_s,
                    "b_s": e.b_s,
                    "load_latency_by_tier": {t: e.load_latency_by_tier[t] for t in sorted(e.load_latency_by_tier)},
                    "memory_score": e.memory_score,
                }
                for _, e in sorted(self.entries.items())
            ],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "PerfProfile":
        check_keys(doc, "perf_profile", {"schema_version", "device", "entries"})
        check_schema_version(doc, "perf_profile")
        entries = {}
        for e in doc["entries"]:
            check_keys(
                e,
                "perf_entry",
                {"arch", "proc", "max_batch", "k_s", "b_s", "load_latency_by_tier", "memory_score"},
            )
            entry = PerfEntry(
                arch=e["arch"],
                proc=e["proc"],
                max_batch=int(e["max_batch"]),
                k_s=float(e["k_s"]),
                b_s=float(e["b_s"]),
                load_latency_by_tier={t: float(v) for t, v in e["load_latency_by_tier"].items()},
                memory_score=float(e["memory_score"]),
            )
            entries[(entry.arch, entry.proc)] = entry
        return cls(device_name=doc["device"], entries=entries)


def profile_max_batch(
    cost: CostModel,
    arch: str,
    proc: str,
    mem_budget_bytes: float,
    plateau_threshold: float = DEFAULT_PLATEAU_THRESHOLD,
) -> int:
    """Smallest batch size past which average latency stops improving.

    Returns the smallest n where the relative improvement of the average
    per-item latency from n to n + 1 drops below plateau_threshold, bounded
    above by the batch that still fits in mem_budget_bytes of free memory.
    """
    feasible = cost.feasible_batch(arch, proc, mem_budget_bytes)
    if feasible < 1:
        raise ConfigurationError(
            f"memory budget {mem_budget_bytes} cannot hold a single-item batch for "
            f"arch {arch!r} on {proc!r}"
        )
    n = 1
    while n < feasible:
        avg_n = cost.exec_latency(arch, proc, n) / n
        avg_next = cost.exec_latency(arch, proc, n + 1) / (n + 1)
        if (avg_n - avg_next) / avg_n < plateau_threshold:
            return n
        n += 1
    return feasible


def fit_linear_latency(cost: CostModel, arch: str, proc: str, max_batch: int) -> tuple[float, float]:
    """Least-squares recovery of the latency slope and intercept.

    Samples exec_latency at n = 1..max_batch.  Saturated points bend the
    curve, so the fit is restricted to the prefix where successive
    differences still match the initial slope.
    """
    if max_batch < 2:
        raise ConfigurationError("need at least two sample points to fit latency constants")
    xs = list(range(1, max_batch + 1))
    ys = [cost.exec_latency(arch, proc, n) for n in xs]
    slope0 = ys[1] - ys[0]
    cut = len(xs)
    for i in range(2, len(xs)):
        step = ys[i] - ys[i - 1]
        if abs(step - slope0) > 1e-9 * max(abs(slope0), 1e-300):
            cut = i
            break
    xs, ys = xs[:cut], ys[:cut]
    n = len(xs)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    var = sum((x - mean_x) ** 2 for x in xs)
    cov = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    k = cov / var
    b = mean_y - k * mean_x
    return k, b


def build_perf_profile(
    registry: ModelRegistry,
    cost: CostModel,
    mem_by_proc: dict[str, float],
    plateau_threshold: float = DEFAULT_PLATEAU_THRESHOLD,
) -> PerfProfile:
    """Profile every registry architecture on every processor with a memory
    budget.  Deterministic: same inputs give a byte-identical document."""
    arch_bytes: dict[str, int] = {}
    for spec in registry.experts.values():
        arch_bytes[spec.arch] = max(arch_bytes.get(spec.arch, 0), spec.param_bytes)
    if not arch_bytes:
        raise ConfigurationError("registry has no experts to profile")
    largest = max(arch_bytes.values())
    entries: dict[tuple[str, str], PerfEntry] = {}
    for arch in sorted(arch_bytes):
        for proc in sorted(mem_by_proc):
            budget = mem_by_proc[proc]
            if budget <= 0:
                continue
            max_batch = profile_max_batch(cost, arch, proc, budget, plateau_threshold)
            if max_batch >= 2:
                k, b = fit_linear_latency(cost, arch, proc, max_batch)
            else:
                c = cost.constants(arch, proc)
                k, b = c.k_s, c.b_s
            loads = {
                tier.tier: cost.load_latency_from(tier.tier, arch_bytes[arch])
                for tier in cost.device.tiers
            }
            entries[(arch, proc)] = PerfEntry(
                arch=arch,
                proc=proc,
                max_batch=max_batch,
                k_s=k,
                b_s=b,
                load_latency_by_tier=loads,
                memory_score=arch_bytes[arch] / largest,
            )
    return PerfProfile(device_name=cost.device.name, entries=entries)


def decide_allocation_mode(
    cost: CostModel,
    perf: PerfProfile,
    arch: str,
    proc: str,
    budget_bytes: float,
    threshold: float = DEFAULT_ALLOC_THRESHOLD,
) -> str:
    """Reserve worst-case batch memory outright when it is cheap, otherwise
    search for the expert count.

    Returns max_batch_reserve when the inference memory of the profiled
    maximum batch is at most threshold (inclusive) of the processor memory
    budget, else window_search.
    """
    max_batch = perf.entry(arch, proc).max_batch
    footprint = cost.inference_memory(arch, proc, max_batch)
    if footprint <= threshold * budget_bytes:
        return ALLOC_MAX_BATCH_RESERVE
    return ALLOC_WINDOW_SEARCH


@dataclass
class WindowSearchResult:
    """Outcome of one decay-window search."""

    lower: int
    upper: int
    chosen: int
    throughput_samples: list[tuple[int, float]] = field(default_factory=list)
    stop_error: float | None = None  # relative deviation that triggered the stop
    warning: bool = False  # set when the search degenerated instead of stopping

    def to_doc(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "lower": self.lower,
            "upper": self.upper,
            "chosen": self.chosen,
            "throughput_samples": [[n, t] for n, t in self.throughput_samples],
            "stop_error": self.stop_error,
            "warning": self.warning,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "WindowSearchResult":
        check_keys(
            doc,
            "window_search",
            {"schema_version", "lower", "upper", "chosen", "throughput_samples", "stop_error", "warning"},
        )
        check_schema_version(doc, "window_search")
        return cls(
            lower=int(doc["lower"]),
            upper=int(doc["upper"]),
            chosen=int(doc["chosen"]),
            throughput_samples=[(int(n), float(t)) for n, t in doc["throughput_samples"]],
            stop_error=None if doc["stop_error"] is None else float(doc["stop_error"]),
            warning=bool(doc["warning"]),
        )


def decay_window_search(
    sample_throughput: Callable[[int], float],
    max_count: int,
    initial_window: int = DEFAULT_INITIAL_WINDOW,
    error_margin: float = DEFAULT_ERROR_MARGIN,
    fit_points: int = DEFAULT_FIT_POINTS,
    seed: int = 0,
    choose: str = "random",
) -> WindowSearchResult:
    """Slide decaying windows over expert counts until throughput falls off.

    Throughput is sampled at each window's upper bound.  After fit_points
    samples a line is fitted through them; the search stops at the first
    later sample whose throughput falls more than error_margin below the
    line's prediction, and that window is returned.  A monotonically rising
    curve terminates at max_count; a decay factor of zero or below degenerates
    immediately and sets the warning flag.
    """
    if max_count < 1:
        raise ConfigurationError("max_count must be at least 1")
    if initial_window < 1:
        raise ConfigurationError("initial_window must be at least 1")
    if fit_points < 2:
        raise ConfigurationError("fit_points must be at least 2")
    decay = 1.0 - initial_window / 100.0

    size = float(initial_window)
    lower = 0
    upper = min(initial_window, max_count)
    samples: list[tuple[int, float]] = []
    fit: tuple[float, float] | None = None
    stop_error = None
    warning = False
    while True:
        throughput = sample_throughput(upper)
        samples.append((upper, throughput))
        m = len(samples)
        if m == fit_points:
            fit = _fit_sample_indices(samples)
        if fit is not None and m > fit_points:
            k, b = fit
            predicted = k * m + b
            if predicted > 0:
                deviation = (predicted - throughput) / predicted
                if deviation > error_margin:
                    stop_error = deviation
                    break
            else:
                warning = True
                break
        if upper >= max_count:
            break
        if decay <= 0.0:
            warning = True
            break
        size *= decay
        lower = upper
        upper = min(upper + max(1, math.ceil(size)), max_count)

    if choose == "midpoint":
        chosen = max(1, (lower + upper + 1) // 2)
    elif choose == "random":
        rng = random.Random(subseed(seed, "window-choice"))
        chosen = rng.randint(max(1, lower), max(1, upper))
    else:
        raise ConfigurationError(f"unknown choose mode {choose!r}")
    return WindowSearchResult(
        lower=lower,
        upper=upper,
        chosen=chosen,
        throughput_samples=samples,
        stop_error=stop_error,
        warning=warning,
    )


def _fit_sample_indices(samples: Sequence[tuple[int, float]]) -> tuple[float, float]:
    # Fit over sample index (1-based), not expert count: the trend check
    # compares the i-th measured value against the line's value at i.
    xs = list(range(1, len(samples) + 1))
    ys = [t for _, t in samples]
    n = len(xs)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    var = sum((x - mean_x) ** 2 for x in xs)
    cov = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    k = cov / var
    return k, mean_y - k * mean_x


def search_memory_allocation(
    registry: ModelRegistry,
    device: DeviceProfile,
    proc: str,
    sample_workload,
    seed: int,
    policy: str = "coserve",
    gpu_executors: int = 3,
    cpu_executors: int = 1,
    initial_window: int = DEFAULT_INITIAL_WINDOW,
    error_margin: float = DEFAULT_ERROR_MARGIN,
    fit_points: int = DEFAULT_FIT_POINTS,
    choose: str = "random",
) -> WindowSearchResult:
    """Run the decay-window search with throughput sampled by the simulator.

    Each probe runs sample_workload with the candidate expert count pinned
    for proc; other processors fall back to the reserve allocation.
    """
    from . import engine  # imported lazily, engine depends on this module

    eff_gpu, eff_cpu = gpu_executors, cpu_executors
    if engine.POLICIES[policy].single_gpu:
        eff_gpu, eff_cpu = 1, 0

    def sample(expert_count: int) -> float:
        config = engine.RunConfig(
            registry=registry,
            device=device,
            policy=policy,
            stream=sample_workload,
            seed=subseed(seed, "alloc-sample"),
            gpu_executors=gpu_executors,
            cpu_executors=cpu_executors,
            alloc_override={proc: expert_count},
            search_enabled=False,
        )
        metrics, _ = engine.run(config)
        return metrics.throughput_rps

    return decay_window_search(
        sample,
        max_count=engine.max_useful_expert_count(registry, device, proc, eff_gpu, eff_cpu),
        initial_window=initial_window,
        error_margin=error_margin,
        fit_points=fit_points,
        seed=seed,
        choose=choose,
    )
