"""Shared domain types for the expert-serving simulator.

Everything here is a plain data carrier: expert registries, device
descriptions, routing rules, and in-flight requests.  Behavior lives in the
other modules; this one only validates structure and handles the strict JSON
document formats (every document carries a schema_version and unknown fields
are rejected).
"""

from __future__ import annotations

from dataclasses import dataclass, field

SCHEMA_VERSION = 1

PROCESSORS = ("gpu", "cpu")
TIER_NAMES = ("device", "host", "ssd")
ARCH_KINDS = ("classification", "detection")
DEVICE_ARCHITECTURES = ("numa", "uma")


class SchemaError(ValueError):
    """A document does not match the expected external format."""


class RegistryError(ValueError):
    """A model registry is structurally invalid."""


class ConfigurationError(ValueError):
    """A run was configured with inconsistent or unknown settings."""


class MemoryStarvationError(RuntimeError):
    """Memory budgets cannot accommodate even a minimal working set."""


def check_keys(doc: dict, name: str, required: set[str], optional: set[str] = frozenset()) -> None:
    """Reject documents with unknown or missing fields."""
    if not isinstance(doc, dict):
        raise SchemaError(f"{name}: expected an object, got {type(doc).__name__}")
    unknown = set(doc) - required - set(optional)
    if unknown:
        raise SchemaError(f"{name}: unknown fields {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise SchemaError(f"{name}: missing fields {sorted(missing)}")


def check_schema_version(doc: dict, name: str) -> None:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{name}: unsupported schema_version {version!r}, expected {SCHEMA_VERSION}")


@dataclass(frozen=True)
class ArchClass:
    """A model architecture shared by a group of experts."""

    id: str
    kind: str  # "classification" or "detection"

    def __post_init__(self) -> None:
        if self.kind not in ARCH_KINDS:
            raise RegistryError(f"arch {self.id!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class ExpertSpec:
    """One whole-model expert and its place in the dependency graph."""

    expert_id: str
    arch: str
    param_bytes: int
    upstream: frozenset[str] = frozenset()  # experts whose output feeds this one
    usage_prob: float = 0.0  # share of all expert invocations, see routing

    def __post_init__(self) -> None:
        if self.param_bytes <= 0:
            raise RegistryError(f"expert {self.expert_id!r}: param_bytes must be positive")
        if not 0.0 <= self.usage_prob <= 1.0:
            raise RegistryError(f"expert {self.expert_id!r}: usage_prob out of [0, 1]")


@dataclass(frozen=True)
class MemoryTier:
    """One level of the memory hierarchy as seen by the loader."""

    tier: str
    capacity_bytes: int  # 0 is allowed; the ssd tier is treated as unbounded
    read_bandwidth_bytes_per_s: float
    fixed_load_overhead_s: float = 0.0

    def __post_init__(self) -> None:
        if self.tier not in TIER_NAMES:
            raise ConfigurationError(f"unknown memory tier {self.tier!r}")
        if self.capacity_bytes < 0:
            raise ConfigurationError(f"tier {self.tier!r}: negative capacity")
        if self.read_bandwidth_bytes_per_s <= 0:
            raise ConfigurationError(f"tier {self.tier!r}: bandwidth must be positive")
        if self.fixed_load_overhead_s < 0:
            raise ConfigurationError(f"tier {self.tier!r}: negative load overhead")


@dataclass(frozen=True)
class ExecConstants:
    """Per (architecture, processor) cost constants.

    Batch latency grows linearly with slope k_s up to n_sat items, after
    which each extra item costs gamma * k_s (the average latency plateaus
    instead of improving forever).  Intermediate activations take
    intermediate_base_bytes plus intermediate_per_item_bytes per batch item.
    """

    k_s: float
    b_s: float
    n_sat: int = 1_000_000
    gamma: float = 1.0
    intermediate_base_bytes: int = 0
    intermediate_per_item_bytes: int = 0

    def __post_init__(self) -> None:
        if self.k_s <= 0:
            raise ConfigurationError("k_s must be positive")
        if self.b_s < 0:
            raise ConfigurationError("b_s must be non-negative")
        if self.n_sat < 1:
            raise ConfigurationError("n_sat must be at least 1")
        if self.gamma < 1.0:
            raise ConfigurationError("gamma must be >= 1")
        if self.intermediate_base_bytes < 0 or self.intermediate_per_item_bytes < 0:
            raise ConfigurationError("intermediate memory constants must be non-negative")


@dataclass(frozen=True)
class RoutingRule:
    """Routing for one component type: a classification expert plus an
    optional detection follow-up taken with detection_prob."""

    component_type: str
    classification_expert_id: str
    detection_expert_id: str | None = None
    detection_prob: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.detection_prob <= 1.0:
            raise RegistryError(f"rule {self.component_type!r}: detection_prob out of [0, 1]")
        if self.detection_expert_id is None and self.detection_prob != 0.0:
            raise RegistryError(f"rule {self.component_type!r}: detection_prob without a detection expert")


@dataclass
class Request:
    """One inference request flowing through the system.

    chain is the remaining expert pipeline; chain[0] is the next expert to
    run.  detect_u is a pre-drawn uniform sample used to resolve the
    detection branch, so the outcome is a property of the request and does
    not depend on the serving policy.
    """

    request_id: int
    component_type: str
    arrival_time_s: float
    chain: list[str] = field(default_factory=list)
    origin: str = "external"  # "external" or "follow_up"
    detect_u: float = 1.0


def _arch_from_doc(doc: dict) -> ArchClass:
    check_keys(doc, "arch_class", {"id", "kind"})
    return ArchClass(id=doc["id"], kind=doc["kind"])


def _expert_from_doc(doc: dict) -> ExpertSpec:
    check_keys(doc, "expert", {"expert_id", "arch", "param_bytes", "upstream", "usage_prob"})
    return ExpertSpec(
        expert_id=doc["expert_id"],
        arch=doc["arch"],
        param_bytes=int(doc["param_bytes"]),
        upstream=frozenset(doc["upstream"]),
        usage_prob=float(doc["usage_prob"]),
    )


def _rule_from_doc(doc: dict) -> RoutingRule:
    check_keys(
        doc,
        "rule",
        {"component_type", "classification_expert_id"},
        {"detection_expert_id", "detection_prob"},
    )
    return RoutingRule(
        component_type=doc["component_type"],
        classification_expert_id=doc["classification_expert_id"],
        detection_expert_id=doc.get("detection_expert_id"),
        detection_prob=float(doc.get("detection_prob", 0.0)),
    )


@dataclass
class ModelRegistry:
    """All experts of a deployment, their routing rules, and the request mix."""

    arch_classes: dict[str, ArchClass]
    experts: dict[str, ExpertSpec]
    rules: dict[str, RoutingRule]
    component_mix: dict[str, float]

    def validate(self) -> None:
        """Check referential integrity, probability ranges, and acyclicity."""
        for spec in self.experts.values():
            if spec.arch not in self.arch_classes:
                raise RegistryError(f"expert {spec.expert_id!r}: unknown arch {spec.arch!r}")
            for up in spec.upstream:
                if up not in self.experts:
                    raise RegistryError(f"expert {spec.expert_id!r}: unknown upstream {up!r}")
        self._check_acyclic()
        for rule in self.rules.values():
            if rule.classification_expert_id not in self.experts:
                raise RegistryError(
                    f"rule {rule.component_type!r}: unknown expert {rule.classification_expert_id!r}"
                )
            if rule.detection_expert_id is not None:
                det = self.experts.get(rule.detection_expert_id)
                if det is None:
                    raise RegistryError(
                        f"rule {rule.component_type!r}: unknown expert {rule.detection_expert_id!r}"
                    )
                if rule.classification_expert_id not in det.upstream:
                    raise RegistryError(
                        f"rule {rule.component_type!r}: detection expert "
                        f"{det.expert_id!r} lacks the upstream edge from "
                        f"{rule.classification_expert_id!r}"
                    )
        total_mix = 0.0
        for component, freq in self.component_mix.items():
            if component not in self.rules:
                raise RegistryError(f"component {component!r} in mix has no routing rule")
            if freq < 0.0:
                raise RegistryError(f"component {component!r}: negative frequency")
            total_mix += freq
        # Every external request picks exactly one preliminary expert, so the
        # per-request selection frequencies must form a distribution.
        if self.component_mix and abs(total_mix - 1.0) > 1e-9:
            raise RegistryError(f"component mix sums to {total_mix!r}, expected 1.0")
        total_usage = sum(spec.usage_prob for spec in self.experts.values())
        if total_usage > 0.0 and abs(total_usage - 1.0) > 1e-9:
            raise RegistryError(f"expert usage probabilities sum to {total_usage!r}, expected 1.0")

    def _check_acyclic(self) -> None:
        # Kahn's algorithm over upstream -> expert edges.
        indegree = {eid: len(spec.upstream) for eid, spec in self.experts.items()}
        downstream: dict[str, list[str]] = {eid: [] for eid in self.experts}
        for eid, spec in self.experts.items():
            for up in spec.upstream:
                downstream[up].append(eid)
        ready = [eid for eid, deg in indegree.items() if deg == 0]
        seen = 0
        while ready:
            eid = ready.pop()
            seen += 1
            for nxt in downstream[eid]:
                indegree[nxt] -= 1
                if indegree[nxt] == 0:
                    ready.append(nxt)
        if seen != len(self.experts):
            cyclic = sorted(eid for eid, deg in indegree.items() if deg > 0)
            raise RegistryError(f"dependency graph has a cycle involving {cyclic[:5]}")

    def experts_by_descending_prob(self) -> list[ExpertSpec]:
        return sorted(self.experts.values(), key=lambda s: (-s.usage_prob, s.expert_id))

    def to_doc(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "arch_classes": [
                {"id": a.id, "kind": a.kind} for a in sorted(self.arch_classes.values(), key=lambda a: a.id)
            ],
            "experts": [
                {
                    "expert_id": s.expert_id,
                    "arch": s.arch,
                    "param_bytes": s.param_bytes,
                    "upstream": sorted(s.upstream),
                    "usage_prob": s.usage_prob,
                }
                for s in sorted(self.experts.values(), key=lambda s: s.expert_id)
            ],
            "rules": [
                {
                    "component_type": r.component_type,
                    "classification_expert_id": r.classification_expert_id,
                    "detection_expert_id": r.detection_expert_id,
                    "detection_prob": r.detection_prob,
                }
                for r in sorted(self.rules.values(), key=lambda r: r.component_type)
            ],
            "component_mix": {c: self.component_mix[c] for c in sorted(self.component_mix)},
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ModelRegistry":
        check_keys(
            doc,
            "registry",
            {"schema_version", "arch_classes", "experts", "rules", "component_mix"},
        )
        check_schema_version(doc, "registry")
        arches = {}
        for a in doc["arch_classes"]:
            arch = _arch_from_doc(a)
            if arch.id in arches:
                raise SchemaError(f"registry: duplicate arch id {arch.id!r}")
            arches[arch.id] = arch
        experts = {}
        for e in doc["experts"]:
            spec = _expert_from_doc(e)
            if spec.expert_id in experts:
                raise SchemaError(f"registry: duplicate expert id {spec.expert_id!r}")
            experts[spec.expert_id] = spec
        rules = {}
        for r in doc["rules"]:
            rule = _rule_from_doc(r)
            if rule.component_type in rules:
                raise SchemaError(f"registry: duplicate rule for {rule.component_type!r}")
            rules[rule.component_type] = rule
        registry = cls(
            arch_classes=arches,
            experts=experts,
            rules=rules,
            component_mix={c: float(f) for c, f in doc["component_mix"].items()},
        )
        registry.validate()
        return registry


@dataclass
class DeviceProfile:
    """A serving device: its memory tiers and per-architecture cost constants.

    architecture "numa" has separate device, host, and ssd tiers; "uma" has a
    single unified device tier plus ssd.  Immutable by convention once built.
    """

    name: str
    architecture: str
    tiers: tuple[MemoryTier, ...]
    exec_constants: dict[tuple[str, str], ExecConstants]  # (arch id, processor)

    def validate(self) -> None:
        if self.architecture not in DEVICE_ARCHITECTURES:
            raise ConfigurationError(f"device {self.name!r}: unknown architecture {self.architecture!r}")
        names = [t.tier for t in self.tiers]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"device {self.name!r}: duplicate tiers")
        expected = {"device", "host", "ssd"} if self.architecture == "numa" else {"device", "ssd"}
        if set(names) != expected:
            raise ConfigurationError(
                f"device {self.name!r}: {self.architecture} requires tiers {sorted(expected)}, got {sorted(names)}"
            )
        for (arch, proc), _ in self.exec_constants.items():
            if proc not in PROCESSORS:
                raise ConfigurationError(f"device {self.name!r}: unknown processor {proc!r} for arch {arch!r}")

    def tier(self, name: str) -> MemoryTier:
        for t in self.tiers:
            if t.tier == name:
                return t
        raise ConfigurationError(f"device {self.name!r}: no tier {name!r}")

    def has_tier(self, name: str) -> bool:
        return any(t.tier == name for t in self.tiers)

    def to_doc(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "architecture": self.architecture,
            "tiers": [
                {
                    "tier": t.tier,
                    "capacity_bytes": t.capacity_bytes,
                    "read_bandwidth_bytes_per_s": t.read_bandwidth_bytes_per_s,
                    "fixed_load_overhead_s": t.fixed_load_overhead_s,
                }
                for t in self.tiers
            ],
            "exec_constants": [
                {
                    "arch": arch,
                    "proc": proc,
                    "k_s": c.k_s,
                    "b_s": c.b_s,
                    "n_sat": c.n_sat,
                    "gamma": c.gamma,
                    "intermediate_base_bytes": c.intermediate_base_bytes,
                    "intermediate_per_item_bytes": c.intermediate_per_item_bytes,
                }
                for (arch, proc), c in sorted(self.exec_constants.items())
            ],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "DeviceProfile":
        check_keys(doc, "device", {"schema_version", "name", "architecture", "tiers", "exec_constants"})
        check_schema_version(doc, "device")
        tiers = []
        for t in doc["tiers"]:
            check_keys(
                t,
                "tier",
                {"tier", "capacity_bytes", "read_bandwidth_bytes_per_s"},
                {"fixed_load_overhead_s"},
            )
            tiers.append(
                MemoryTier(
                    tier=t["tier"],
                    capacity_bytes=int(t["capacity_bytes"]),
                    read_bandwidth_bytes_per_s=float(t["read_bandwidth_bytes_per_s"]),
                    fixed_load_overhead_s=float(t.get("fixed_load_overhead_s", 0.0)),
                )
            )
        constants = {}
        for c in doc["exec_constants"]:
            check_keys(
                c,
                "exec_constants",
                {"arch", "proc", "k_s", "b_s"},
                {"n_sat", "gamma", "intermediate_base_bytes", "intermediate_per_item_bytes"},
            )
            key = (c["arch"], c["proc"])
            if key in constants:
                raise SchemaError(f"device: duplicate exec_constants for {key}")
            constants[key] = ExecConstants(
                k_s=float(c["k_s"]),
                b_s=float(c["b_s"]),
                n_sat=int(c.get("n_sat", 1_000_000)),
                gamma=float(c.get("gamma", 1.0)),
                intermediate_base_bytes=int(c.get("intermediate_base_bytes", 0)),
                intermediate_per_item_bytes=int(c.get("intermediate_per_item_bytes", 0)),
            )
        profile = cls(
            name=doc["name"],
            architecture=doc["architecture"],
            tiers=tuple(tiers),
            exec_constants=constants,
        )
        profile.validate()
        return profile
