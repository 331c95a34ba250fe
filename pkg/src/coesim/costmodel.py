"""Parametric device cost model.

Three closed-form quantities drive the whole simulator:

* execution latency of a batch of n requests: k * n + b while n <= n_sat,
  with each item beyond n_sat costing gamma * k instead of k, so average
  per-item latency stops improving past the saturation point;
* load latency of moving an expert out of a memory tier:
  bytes / read_bandwidth + fixed overhead;
* inference memory of a batch: base + n * per_item bytes (0 for an empty
  batch).

Device presets ship as data files; numa-3080ti models a discrete-GPU
workstation with a slow ssd, uma-m2 a unified-memory laptop with a fast ssd
whose device tier doubles as the in-memory handoff path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .types import ConfigurationError, DeviceProfile, ExecConstants

PRESET_NAMES = ("numa-3080ti", "uma-m2")


@dataclass(frozen=True)
class LoadPath:
    """A planned expert transfer: bytes read from source_tier into the pool
    of an executor on the destination processor."""

    source_tier: str
    destination: str
    nbytes: int


class CostModel:
    """Closed-form latency and memory queries for one device."""

    def __init__(self, device: DeviceProfile):
        device.validate()
        self.device = device

    def constants(self, arch: str, proc: str) -> ExecConstants:
        try:
            return self.device.exec_constants[(arch, proc)]
        except KeyError:
            raise ConfigurationError(
                f"device {self.device.name!r} has no execution constants for "
                f"arch {arch!r} on {proc!r}"
            ) from None

    def exec_latency(self, arch: str, proc: str, n: int, k_scale: float = 1.0) -> float:
        """Batch execution latency in seconds; k_scale adjusts the slope for
        contention between co-located executors."""
        if n < 1:
            raise ValueError(f"batch size must be >= 1, got {n}")
        c = self.constants(arch, proc)
        k = c.k_s * k_scale
        if n <= c.n_sat:
            return k * n + c.b_s
        return k * c.n_sat + c.b_s + c.gamma * k * (n - c.n_sat)

    def load_latency(self, path: LoadPath) -> float:
        return self.load_latency_from(path.source_tier, path.nbytes)

    def load_latency_from(self, tier_name: str, nbytes: int) -> float:
        if nbytes <= 0:
            raise ValueError(f"load size must be positive, got {nbytes}")
        tier = self.device.tier(tier_name)
        return nbytes / tier.read_bandwidth_bytes_per_s + tier.fixed_load_overhead_s

    def inference_memory(self, arch: str, proc: str, n: int) -> int:
        """Bytes of intermediate activations held while a batch of n runs."""
        if n < 0:
            raise ValueError(f"batch size must be >= 0, got {n}")
        if n == 0:
            return 0
        c = self.constants(arch, proc)
        return c.intermediate_base_bytes + n * c.intermediate_per_item_bytes

    def feasible_batch(self, arch: str, proc: str, free_bytes: float, hard_cap: int = 4096) -> int:
        """Largest batch whose intermediate memory fits in free_bytes."""
        c = self.constants(arch, proc)
        if free_bytes < c.intermediate_base_bytes + c.intermediate_per_item_bytes:
            return 0
        if c.intermediate_per_item_bytes == 0:
            return hard_cap
        n = int((free_bytes - c.intermediate_base_bytes) // c.intermediate_per_item_bytes)
        return min(n, hard_cap)


def load_device_preset(name: str) -> DeviceProfile:
    """Load one of the shipped device presets by name."""
    if name not in PRESET_NAMES:
        raise ConfigurationError(f"unknown device preset {name!r}, available: {list(PRESET_NAMES)}")
    text = resources.files("coesim.data").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return DeviceProfile.from_doc(json.loads(text))
