"""Command-line entry points.

Subcommands:

* gen-workload: write a registry and request stream to JSON files.
* profile: build the offline performance profile for a device.
* search-memory: run the decay-window allocation search against the simulator.
* simulate: run one policy on one workload and emit metrics (and a trace).
* compare: run several policies across seeds and tabulate the results.

Exit codes: 0 on success, 2 for configuration, schema, or file problems, 3
when a simulation itself fails (for example memory starvation).
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import engine, profiler, workload
from .costmodel import PRESET_NAMES, CostModel, load_device_preset
from .engine import POLICIES, RunConfig
from .types import (
    ConfigurationError,
    DeviceProfile,
    MemoryStarvationError,
    ModelRegistry,
    SchemaError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIM = 3

DEFAULT_POLICIES = ["coserve", "samba_parallel", "samba_lru", "samba_fifo"]
ABLATION_POLICIES = ["coserve", "coserve_em_ra", "coserve_em", "coserve_none", "samba_lru"]


def _read_json(path: str | Path) -> dict:
    path = Path(path)
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from exc


def _write_json(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _load_device(name_or_path: str) -> DeviceProfile:
    if name_or_path in PRESET_NAMES:
        return load_device_preset(name_or_path)
    if not Path(name_or_path).exists():
        raise ConfigurationError(
            f"unknown device preset or missing file {name_or_path!r}; "
            f"presets: {', '.join(PRESET_NAMES)}"
        )
    return DeviceProfile.from_doc(_read_json(name_or_path))


def _load_registry(args) -> ModelRegistry:
    """Resolve --task / --registry into a registry.  --registry accepts a
    board preset name or a JSON file path."""
    if getattr(args, "task", None):
        board, _ = workload.TASK_PRESETS[args.task]
        return workload.registry_preset(board, seed=args.seed)
    reg_arg = getattr(args, "registry", None)
    if not reg_arg:
        raise ConfigurationError("provide --task or --registry")
    if reg_arg in workload.BOARD_PRESETS:
        return workload.registry_preset(reg_arg, seed=args.seed)
    return ModelRegistry.from_doc(_read_json(reg_arg))


def _load_workload(args) -> tuple[ModelRegistry, list]:
    if getattr(args, "task", None):
        return workload.task_workload(args.task, seed=args.seed)
    registry = _load_registry(args)
    if not getattr(args, "stream", None):
        raise ConfigurationError("provide --stream alongside --registry, or use --task")
    stream = workload.stream_from_doc(_read_json(args.stream))
    return registry, stream


def _parse_alloc(text: str | None) -> dict[str, int] | None:
    """Parse an override like 'gpu=35' or 'gpu=35,cpu=10'."""
    if not text:
        return None
    out: dict[str, int] = {}
    for part in text.split(","):
        if "=" not in part:
            raise ConfigurationError(f"bad --alloc entry {part!r}, expected proc=count")
        proc, _, value = part.partition("=")
        proc = proc.strip()
        if proc not in ("gpu", "cpu"):
            raise ConfigurationError(f"bad --alloc processor {proc!r}, expected gpu or cpu")
        try:
            out[proc] = int(value)
        except ValueError:
            raise ConfigurationError(f"bad --alloc count {value!r} for {proc}") from None
    return out


def _add_workload_args(sub, with_task_default: str | None = None) -> None:
    sub.add_argument("--task", default=with_task_default, choices=sorted(workload.TASK_PRESETS))
    sub.add_argument("--registry", help="registry JSON file (alternative to --task)")
    sub.add_argument("--stream", help="request stream JSON file (alternative to --task)")


def _add_executor_args(sub) -> None:
    sub.add_argument("--gpu-executors", type=int, default=3)
    sub.add_argument("--cpu-executors", type=int, default=1)
    sub.add_argument("--cpu-mem-fraction", type=float, default=0.4)
    sub.add_argument("--contention-factor", type=float, default=1.15)


def cmd_gen_workload(args) -> int:
    if args.task:
        registry, stream = workload.task_workload(args.task, seed=args.seed, interarrival_s=args.interarrival)
    else:
        if not args.board:
            raise ConfigurationError("provide --task or --board")
        overrides = {}
        if args.components is not None:
            overrides["num_components"] = args.components
        registry = workload.registry_preset(args.board, seed=args.seed, **overrides)
        stream = workload.generate_stream(
            registry, args.requests, interarrival_s=args.interarrival, seed=args.seed
        )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    registry_path = out_dir / "registry.json"
    stream_path = out_dir / "stream.json"
    _write_json(registry_path, registry.to_doc())
    _write_json(stream_path, workload.stream_to_doc(stream))
    print(f"wrote {registry_path} ({len(registry.experts)} experts)")
    print(f"wrote {stream_path} ({len(stream)} requests)")
    return EXIT_OK


def cmd_profile(args) -> int:
    device = _load_device(args.device)
    registry = _load_registry(args)
    per_exec, _ = engine.partition_memory(
        device, args.gpu_executors, args.cpu_executors, args.cpu_mem_fraction
    )
    perf = profiler.build_perf_profile(
        registry, CostModel(device), per_exec, args.plateau_threshold
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "perf_profile.json"
    payload = json.dumps(perf.to_doc(), sort_keys=True, indent=2) + "\n"
    if path.exists() and path.read_text() == payload:
        print(f"{path} unchanged")
    else:
        path.write_text(payload)
        print(f"wrote {path} ({len(perf.entries)} entries)")
    return EXIT_OK


def cmd_search_memory(args) -> int:
    device = _load_device(args.device)
    registry, stream = _load_workload(args)
    sample = stream[: min(args.sample_requests, len(stream))]
    result = profiler.search_memory_allocation(
        registry,
        device,
        args.proc,
        sample,
        seed=args.seed,
        policy=args.policy,
        gpu_executors=args.gpu_executors,
        cpu_executors=args.cpu_executors,
        initial_window=args.initial_window,
        error_margin=args.error_margin,
        fit_points=args.fit_points,
        choose=args.choose,
    )
    _write_json(args.out, result.to_doc())
    note = " (warning: search degenerated)" if result.warning else ""
    print(
        f"window [{result.lower}, {result.upper}] chosen {result.chosen} "
        f"after {len(result.throughput_samples)} samples{note}; wrote {args.out}"
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    device = _load_device(args.device)
    registry, stream = _load_workload(args)
    perf = None
    if args.config_dir:
        perf_path = Path(args.config_dir) / "perf_profile.json"
        if not perf_path.exists():
            print(
                f"error: {perf_path} not found; run 'coesim profile' first",
                file=sys.stderr,
            )
            return EXIT_CONFIG
        perf = profiler.PerfProfile.from_doc(_read_json(perf_path))
    config = RunConfig(
        registry=registry,
        device=device,
        policy=args.policy,
        stream=stream,
        seed=args.seed,
        gpu_executors=args.gpu_executors,
        cpu_executors=args.cpu_executors,
        contention_factor=args.contention_factor,
        cpu_mem_fraction=args.cpu_mem_fraction,
        alloc_override=_parse_alloc(args.alloc),
        search_enabled=not args.no_search,
        search_sample_requests=args.sample_requests,
        perf=perf,
        trace=bool(args.trace),
    )
    metrics, trace = engine.run(config)
    doc_text = engine.metrics_json(metrics)
    if args.out:
        Path(args.out).write_text(doc_text)
        print(
            f"{metrics.policy}: {metrics.completed_requests} requests in "
            f"{metrics.makespan_s:.3f} s ({metrics.throughput_rps:.2f} req/s), "
            f"{metrics.expert_switches} switches, {metrics.evictions} evictions; wrote {args.out}"
        )
    else:
        sys.stdout.write(doc_text)
    if args.trace:
        Path(args.trace).write_text(engine.trace_jsonl(trace))
        print(f"wrote {args.trace} ({len(trace)} events)")
    return EXIT_OK


def _compare_runs(args, policies) -> dict[str, list]:
    device = _load_device(args.device)
    configs = []
    keys = []
    for i in range(args.seeds):
        seed = args.base_seed + i
        if args.registry and args.stream:
            registry = ModelRegistry.from_doc(_read_json(args.registry))
            stream = workload.stream_from_doc(_read_json(args.stream))
        else:
            registry, stream = workload.task_workload(args.task, seed=seed)
        for policy in policies:
            configs.append(
                RunConfig(
                    registry=registry,
                    device=device,
                    policy=policy,
                    stream=stream,
                    seed=seed,
                    gpu_executors=args.gpu_executors,
                    cpu_executors=args.cpu_executors,
                    contention_factor=args.contention_factor,
                    cpu_mem_fraction=args.cpu_mem_fraction,
                )
            )
            keys.append(policy)
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(engine.run, configs))
    else:
        results = [engine.run(c) for c in configs]
    by_policy: dict[str, list] = {p: [] for p in policies}
    for policy, (metrics, _) in zip(keys, results):
        by_policy[policy].append(metrics)
    return by_policy


def _aggregate(policy: str, runs: list) -> dict:
    thpts = [m.throughput_rps for m in runs]
    row = {
        "policy": policy,
        "executors": f"{runs[0].per_executor[-1]['executor'] + 1}x",
        "throughput_mean": statistics.fmean(thpts),
        "throughput_stdev": statistics.stdev(thpts) if len(thpts) > 1 else 0.0,
        "makespan_mean": statistics.fmean(m.makespan_s for m in runs),
        "switches_mean": statistics.fmean(m.expert_switches for m in runs),
        "evictions_mean": statistics.fmean(m.evictions for m in runs),
        "stale_mean": statistics.fmean(m.stale_predictions for m in runs),
        "sched_overhead_mean": statistics.fmean(m.sched_overhead_ratio() for m in runs),
        "runs": [
            {
                "seed": m.seed,
                "throughput_rps": m.throughput_rps,
                "makespan_s": m.makespan_s,
                "expert_switches": m.expert_switches,
                "evictions": m.evictions,
                "stale_predictions": m.stale_predictions,
            }
            for m in runs
        ],
    }
    return row


def cmd_compare(args) -> int:
    if args.ablation:
        policies = list(ABLATION_POLICIES)
    elif args.policies:
        policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    else:
        policies = list(DEFAULT_POLICIES)
    unknown = [p for p in policies if p not in POLICIES]
    if unknown:
        raise ConfigurationError(f"unknown policies: {unknown}, available: {sorted(POLICIES)}")
    by_policy = _compare_runs(args, policies)
    rows = [_aggregate(p, by_policy[p]) for p in policies]
    baseline = next((r for r in rows if r["policy"] == "samba_lru"), None)
    for row in rows:
        if baseline is None or row is baseline:
            row["throughput_x_vs_samba_lru"] = None
            row["switch_reduction_vs_samba_lru"] = None
            continue
        row["throughput_x_vs_samba_lru"] = (
            row["throughput_mean"] / baseline["throughput_mean"] if baseline["throughput_mean"] else None
        )
        row["switch_reduction_vs_samba_lru"] = (
            1.0 - row["switches_mean"] / baseline["switches_mean"] if baseline["switches_mean"] else None
        )

    header = (
        f"{'policy':<15} {'execs':>5} {'thpt':>9} {'stdev':>8} {'makespan':>9} "
        f"{'switches':>9} {'evict':>8} {'xLRU':>6} {'sw-red':>7} {'ovh':>9}"
    )
    print(header)
    print("-" * len(header))
    for row in rows:
        x = f"{row['throughput_x_vs_samba_lru']:.2f}" if row["throughput_x_vs_samba_lru"] else "-"
        red = (
            f"{100 * row['switch_reduction_vs_samba_lru']:.1f}%"
            if row["switch_reduction_vs_samba_lru"] is not None
            else "-"
        )
        print(
            f"{row['policy']:<15} {row['executors']:>5} {row['throughput_mean']:>9.2f} "
            f"{row['throughput_stdev']:>8.2f} {row['makespan_mean']:>9.3f} "
            f"{row['switches_mean']:>9.1f} {row['evictions_mean']:>8.1f} {x:>6} {red:>7} "
            f"{row['sched_overhead_mean']:>9.2e}"
        )

    if args.out_json:
        doc = {
            "schema_version": 1,
            "task": args.task,
            "device": args.device,
            "seeds": [args.base_seed + i for i in range(args.seeds)],
            "rows": rows,
        }
        _write_json(args.out_json, doc)
        print(f"wrote {args.out_json}")
    if args.out_csv:
        fields = [
            "policy",
            "executors",
            "throughput_mean",
            "throughput_stdev",
            "makespan_mean",
            "switches_mean",
            "evictions_mean",
            "stale_mean",
            "sched_overhead_mean",
            "throughput_x_vs_samba_lru",
            "switch_reduction_vs_samba_lru",
        ]
        with open(args.out_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {args.out_csv}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coesim",
        description="Dependency-aware expert serving simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-workload", help="write registry and stream JSON files")
    gen.add_argument("--task", choices=sorted(workload.TASK_PRESETS))
    gen.add_argument("--board", choices=sorted(workload.BOARD_PRESETS))
    gen.add_argument("--components", type=int, help="override the board's component count")
    gen.add_argument("--requests", type=int, default=2500)
    gen.add_argument("--interarrival", type=float, default=workload.DEFAULT_INTERARRIVAL_S)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out-dir", default=".")
    gen.set_defaults(func=cmd_gen_workload)

    prof = sub.add_parser("profile", help="build perf_profile.json for a device")
    prof.add_argument("--device", default="numa-3080ti")
    _add_workload_args(prof, with_task_default=None)
    prof.add_argument("--seed", type=int, default=0)
    prof.add_argument("--gpu-executors", type=int, default=3)
    prof.add_argument("--cpu-executors", type=int, default=1)
    prof.add_argument("--cpu-mem-fraction", type=float, default=0.4)
    prof.add_argument("--plateau-threshold", type=float, default=profiler.DEFAULT_PLATEAU_THRESHOLD)
    prof.add_argument("--out-dir", default=".")
    prof.set_defaults(func=cmd_profile)

    search = sub.add_parser("search-memory", help="decay-window allocation search")
    search.add_argument("--device", default="numa-3080ti")
    _add_workload_args(search, with_task_default=None)
    search.add_argument("--proc", choices=("gpu", "cpu"), default="gpu")
    search.add_argument("--policy", choices=sorted(POLICIES), default="coserve")
    search.add_argument("--seed", type=int, default=0)
    search.add_argument("--gpu-executors", type=int, default=3)
    search.add_argument("--cpu-executors", type=int, default=1)
    search.add_argument("--sample-requests", type=int, default=400)
    search.add_argument("--initial-window", type=int, default=profiler.DEFAULT_INITIAL_WINDOW)
    search.add_argument("--error-margin", type=float, default=profiler.DEFAULT_ERROR_MARGIN)
    search.add_argument("--fit-points", type=int, default=profiler.DEFAULT_FIT_POINTS)
    search.add_argument("--choose", choices=("random", "midpoint"), default="random")
    search.add_argument("--out", default="window_search.json")
    search.set_defaults(func=cmd_search_memory)

    sim = sub.add_parser("simulate", help="run one policy on one workload")
    sim.add_argument("--policy", choices=sorted(POLICIES), required=True)
    sim.add_argument("--device", default="numa-3080ti")
    _add_workload_args(sim, with_task_default=None)
    sim.add_argument("--seed", type=int, default=0)
    _add_executor_args(sim)
    sim.add_argument("--alloc", help="pin resident expert counts, e.g. gpu=35 or gpu=35,cpu=10")
    sim.add_argument("--no-search", action="store_true", help="disable the allocation search")
    sim.add_argument("--sample-requests", type=int, default=400)
    sim.add_argument("--config-dir", help="directory holding perf_profile.json")
    sim.add_argument("--out", help="metrics JSON path (stdout when omitted)")
    sim.add_argument("--trace", help="write a JSONL event trace to this path")
    sim.set_defaults(func=cmd_simulate)

    comp = sub.add_parser("compare", help="run several policies across seeds")
    comp.add_argument("--task", choices=sorted(workload.TASK_PRESETS), default="a1")
    comp.add_argument("--registry", help="registry JSON file (fixes the workload across seeds)")
    comp.add_argument("--stream", help="stream JSON file (fixes the workload across seeds)")
    comp.add_argument("--device", default="numa-3080ti")
    comp.add_argument("--seeds", type=int, default=5)
    comp.add_argument("--base-seed", type=int, default=0)
    comp.add_argument("--policies", help="comma-separated list; default " + ",".join(DEFAULT_POLICIES))
    comp.add_argument("--ablation", action="store_true", help="compare the coserve ablation ladder")
    _add_executor_args(comp)
    comp.add_argument("--workers", type=int, default=1)
    comp.add_argument("--out-csv")
    comp.add_argument("--out-json")
    comp.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MemoryStarvationError, RuntimeError) as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
