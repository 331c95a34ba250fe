"""Shared builders for the test suite: small registries, devices, streams."""

from __future__ import annotations

from coesim.types import (
    ArchClass,
    DeviceProfile,
    ExecConstants,
    ExpertSpec,
    MemoryTier,
    ModelRegistry,
    Request,
    RoutingRule,
)

CLS = "cls-r101"
DET = "det-y5"


def make_device(
    name="test-numa",
    architecture="numa",
    device_capacity=12_000_000_000,
    host_capacity=16_000_000_000,
    device_bw=250e9,
    host_bw=12e9,
    ssd_bw=530e6,
    host_overhead=0.005,
    ssd_overhead=0.01,
    cls_gpu=ExecConstants(k_s=0.004, b_s=0.01, n_sat=16, gamma=2.0,
                          intermediate_base_bytes=100_000_000,
                          intermediate_per_item_bytes=300_000_000),
    det_gpu=ExecConstants(k_s=0.009, b_s=0.016, n_sat=12, gamma=2.0,
                          intermediate_base_bytes=150_000_000,
                          intermediate_per_item_bytes=450_000_000),
    cls_cpu=ExecConstants(k_s=0.055, b_s=0.018, n_sat=5, gamma=1.6,
                          intermediate_base_bytes=50_000_000,
                          intermediate_per_item_bytes=120_000_000),
    det_cpu=ExecConstants(k_s=0.12, b_s=0.03, n_sat=4, gamma=1.6,
                          intermediate_base_bytes=80_000_000,
                          intermediate_per_item_bytes=180_000_000),
) -> DeviceProfile:
    """A numa device shaped like the bundled preset but fully parametric."""
    if architecture == "numa":
        tiers = (
            MemoryTier("device", device_capacity, device_bw, 0.0),
            MemoryTier("host", host_capacity, host_bw, host_overhead),
            MemoryTier("ssd", 0, ssd_bw, ssd_overhead),
        )
    else:
        tiers = (
            MemoryTier("device", device_capacity, host_bw, host_overhead),
            MemoryTier("ssd", 0, ssd_bw, ssd_overhead),
        )
    exec_constants = {
        (CLS, "gpu"): cls_gpu,
        (DET, "gpu"): det_gpu,
        (CLS, "cpu"): cls_cpu,
        (DET, "cpu"): det_cpu,
    }
    profile = DeviceProfile(
        name=name, architecture=architecture, tiers=tiers, exec_constants=exec_constants
    )
    profile.validate()
    return profile


def make_registry(
    num_components=4,
    expert_bytes=200_000_000,
    detection=(),
    detection_prob=1.0,
    mix=None,
) -> ModelRegistry:
    """Registry of one classification expert per component.

    detection lists (component, det_expert_id) pairs; every named detection
    expert is shared by the components that point at it.
    """
    components = [f"c{i}" for i in range(num_components)]
    if mix is None:
        mix = {c: 1.0 / num_components for c in components}
    det_map = dict(detection)
    det_upstreams: dict[str, set[str]] = {}
    rules = {}
    for c in components:
        cls_id = f"cls-{c}"
        if c in det_map:
            det_id = det_map[c]
            det_upstreams.setdefault(det_id, set()).add(cls_id)
            rules[c] = RoutingRule(
                component_type=c,
                classification_expert_id=cls_id,
                detection_expert_id=det_id,
                detection_prob=detection_prob,
            )
        else:
            rules[c] = RoutingRule(component_type=c, classification_expert_id=cls_id)
    from coesim.routing import compute_usage_probs

    usage = compute_usage_probs(rules, mix)
    experts = {}
    for c in components:
        cls_id = f"cls-{c}"
        experts[cls_id] = ExpertSpec(
            expert_id=cls_id, arch=CLS, param_bytes=expert_bytes,
            usage_prob=usage.get(cls_id, 0.0),
        )
    for det_id, ups in det_upstreams.items():
        experts[det_id] = ExpertSpec(
            expert_id=det_id, arch=DET, param_bytes=expert_bytes,
            upstream=frozenset(ups), usage_prob=usage.get(det_id, 0.0),
        )
    registry = ModelRegistry(
        arch_classes={
            CLS: ArchClass(id=CLS, kind="classification"),
            DET: ArchClass(id=DET, kind="detection"),
        },
        experts=experts,
        rules=rules,
        component_mix=mix,
    )
    registry.validate()
    return registry


def make_stream(components, interarrival_s=0.0, detect_u=1.0) -> list[Request]:
    """Requests over the given component sequence; detect_u defaults high so
    detection branches stay closed unless the test opens them."""
    return [
        Request(
            request_id=i,
            component_type=c,
            arrival_time_s=i * interarrival_s,
            detect_u=detect_u,
        )
        for i, c in enumerate(components)
    ]
