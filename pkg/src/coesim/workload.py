"""Synthetic workload generator.

Builds registries shaped like a multi-component inspection deployment: one
classification expert per component type, a smaller set of detection experts
shared by several components, and a Zipf-distributed request mix.  Request
streams arrive at a fixed interarrival time.  Two board presets and four task
presets match the registry sizes and request counts used by the benchmark
harness.
"""

from __future__ import annotations

import random

from . import routing
from .seeding import subseed
from .types import (
    SCHEMA_VERSION,
    ArchClass,
    ConfigurationError,
    ExpertSpec,
    ModelRegistry,
    Request,
    RoutingRule,
    check_keys,
    check_schema_version,
)

CLASSIFICATION_ARCH = "cls-r101"
DETECTION_ARCH = "det-y5"

DEFAULT_EXPERT_BYTES = 200_000_000
DEFAULT_INTERARRIVAL_S = 0.004

BOARD_PRESETS: dict[str, dict] = {
    "board-a": {"num_components": 352, "zipf_s": 0.6, "expert_bytes": 250_000_000},
    "board-b": {"num_components": 342, "zipf_s": 0.6, "expert_bytes": 250_000_000},
}

# task -> (board preset, request count)
TASK_PRESETS: dict[str, tuple[str, int]] = {
    "a1": ("board-a", 2500),
    "a2": ("board-a", 3500),
    "b1": ("board-b", 2500),
    "b2": ("board-b", 3500),
}


def generate_registry(
    num_components: int,
    num_detection_experts: int = 20,
    detection_coverage: float = 0.5,
    zipf_s: float = 1.0,
    expert_bytes: int = DEFAULT_EXPERT_BYTES,
    size_jitter: float = 0.0,
    seed: int = 0,
) -> ModelRegistry:
    """Build a registry of num_components classification experts plus shared
    detection experts.

    detection_coverage is the fraction of components whose rule chains into a
    detection expert; each covered component draws its detection expert
    uniformly and its branch probability from [0.5, 1.0].  Component
    frequencies follow a Zipf law with exponent zipf_s (0 gives a uniform
    mix).  size_jitter adds up to +/-25 percent of seeded variation to the
    expert parameter sizes when set to 0.25.
    """
    if num_components < 1:
        raise ConfigurationError("num_components must be at least 1")
    if not 0.0 <= detection_coverage <= 1.0:
        raise ConfigurationError("detection_coverage must lie in [0, 1]")
    if num_detection_experts < 0 or (detection_coverage > 0 and num_detection_experts == 0):
        raise ConfigurationError("need at least one detection expert for nonzero coverage")
    rng = random.Random(subseed(seed, "registry"))

    width = max(3, len(str(num_components - 1)))
    components = [f"c{idx:0{width}d}" for idx in range(num_components)]
    arch_classes = {
        CLASSIFICATION_ARCH: ArchClass(id=CLASSIFICATION_ARCH, kind="classification"),
        DETECTION_ARCH: ArchClass(id=DETECTION_ARCH, kind="detection"),
    }

    def draw_bytes() -> int:
        if size_jitter == 0.0:
            return expert_bytes
        return max(1, round(expert_bytes * (1.0 + size_jitter * rng.uniform(-1.0, 1.0))))

    num_covered = round(detection_coverage * num_components)
    covered = set(rng.sample(components, num_covered)) if num_covered else set()

    det_ids = [f"det-{idx:02d}" for idx in range(num_detection_experts)]
    rules: dict[str, RoutingRule] = {}
    det_upstreams: dict[str, set[str]] = {det: set() for det in det_ids}
    cls_of = {c: f"cls-{c}" for c in components}
    for component in components:
        if component in covered:
            det = rng.choice(det_ids)
            prob = rng.uniform(0.5, 1.0)
            det_upstreams[det].add(cls_of[component])
            rules[component] = RoutingRule(
                component_type=component,
                classification_expert_id=cls_of[component],
                detection_expert_id=det,
                detection_prob=prob,
            )
        else:
            rules[component] = RoutingRule(
                component_type=component,
                classification_expert_id=cls_of[component],
            )

    weights = [1.0 / (rank + 1) ** zipf_s for rank in range(num_components)]
    total_weight = sum(weights)
    component_mix = {c: w / total_weight for c, w in zip(components, weights)}

    usage = routing.compute_usage_probs(rules, component_mix)
    experts: dict[str, ExpertSpec] = {}
    for component in components:
        eid = cls_of[component]
        experts[eid] = ExpertSpec(
            expert_id=eid,
            arch=CLASSIFICATION_ARCH,
            param_bytes=draw_bytes(),
            usage_prob=usage.get(eid, 0.0),
        )
    for det in det_ids:
        if not det_upstreams[det] and det not in usage:
            # Detection experts never routed to are dropped rather than kept
            # as dead weight in the registry.
            continue
        experts[det] = ExpertSpec(
            expert_id=det,
            arch=DETECTION_ARCH,
            param_bytes=draw_bytes(),
            upstream=frozenset(det_upstreams[det]),
            usage_prob=usage.get(det, 0.0),
        )

    registry = ModelRegistry(
        arch_classes=arch_classes,
        experts=experts,
        rules=rules,
        component_mix=component_mix,
    )
    registry.validate()
    return registry


def registry_preset(board: str, seed: int = 0, **overrides) -> ModelRegistry:
    """Build one of the named board presets."""
    if board not in BOARD_PRESETS:
        raise ConfigurationError(f"unknown board preset {board!r}, available: {sorted(BOARD_PRESETS)}")
    params = dict(BOARD_PRESETS[board])
    params.update(overrides)
    return generate_registry(seed=seed, **params)


def generate_stream(
    registry: ModelRegistry,
    num_requests: int,
    interarrival_s: float = DEFAULT_INTERARRIVAL_S,
    seed: int = 0,
) -> list[Request]:
    """Draw a request stream from the registry's component mix.

    Arrivals are evenly spaced at interarrival_s; request i arrives at
    i * interarrival_s.  Each request also pre-draws the uniform sample that
    later resolves its detection branch, so the branch outcome is independent
    of the serving policy under test.
    """
    if num_requests < 1:
        raise ConfigurationError("num_requests must be at least 1")
    if interarrival_s <= 0:
        raise ConfigurationError("interarrival_s must be positive")
    rng = random.Random(subseed(seed, "stream"))
    components = sorted(registry.component_mix)
    weights = [registry.component_mix[c] for c in components]
    picks = rng.choices(components, weights=weights, k=num_requests)
    detect_us = [rng.random() for _ in range(num_requests)]
    return [
        Request(
            request_id=idx,
            component_type=picks[idx],
            arrival_time_s=idx * interarrival_s,
            detect_u=detect_us[idx],
        )
        for idx in range(num_requests)
    ]


def task_workload(
    task: str, seed: int = 0, interarrival_s: float = DEFAULT_INTERARRIVAL_S
) -> tuple[ModelRegistry, list[Request]]:
    """Registry plus stream for one of the named task presets."""
    if task not in TASK_PRESETS:
        raise ConfigurationError(f"unknown task {task!r}, available: {sorted(TASK_PRESETS)}")
    board, num_requests = TASK_PRESETS[task]
    registry = registry_preset(board, seed=seed)
    stream = generate_stream(registry, num_requests, interarrival_s=interarrival_s, seed=seed)
    return registry, stream


def stream_to_doc(stream: list[Request]) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "requests": [
            {
                "request_id": r.request_id,
                "component_type": r.component_type,
                "arrival_time_s": r.arrival_time_s,
                "detect_u": r.detect_u,
            }
            for r in stream
        ],
    }


def stream_from_doc(doc: dict) -> list[Request]:
    check_keys(doc, "stream", {"schema_version", "requests"})
    check_schema_version(doc, "stream")
    stream = []
    for r in doc["requests"]:
        check_keys(r, "request", {"request_id", "component_type", "arrival_time_s", "detect_u"})
        stream.append(
            Request(
                request_id=int(r["request_id"]),
                component_type=r["component_type"],
                arrival_time_s=float(r["arrival_time_s"]),
                detect_u=float(r["detect_u"]),
            )
        )
    return stream
