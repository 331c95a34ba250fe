"""Dependency-aware expert serving simulator.

A discrete-event model of Collaboration-of-Experts serving: request routing
through classification and detection experts, executor pools with bounded
expert memory, latency prediction, two-stage eviction, offline profiling,
and a decay-window search for the expert/inference memory split, with
recency- and arrival-based baselines for comparison.
"""

from .costmodel import CostModel, LoadPath, load_device_preset
from .engine import POLICIES, Metrics, RunConfig, run
from .profiler import PerfProfile, WindowSearchResult, decay_window_search
from .routing import RoutePlan, compute_usage_probs, route
from .types import (
    ArchClass,
    ConfigurationError,
    DeviceProfile,
    ExecConstants,
    ExpertSpec,
    MemoryStarvationError,
    MemoryTier,
    ModelRegistry,
    Request,
    RoutingRule,
    SchemaError,
)
from .workload import generate_registry, generate_stream, task_workload

__version__ = "0.1.0"

__all__ = [
    "ArchClass",
    "ConfigurationError",
    "CostModel",
    "DeviceProfile",
    "ExecConstants",
    "ExpertSpec",
    "LoadPath",
    "MemoryStarvationError",
    "MemoryTier",
    "Metrics",
    "ModelRegistry",
    "PerfProfile",
    "POLICIES",
    "Request",
    "RoutePlan",
    "RoutingRule",
    "RunConfig",
    "SchemaError",
    "WindowSearchResult",
    "compute_usage_probs",
    "decay_window_search",
    "generate_registry",
    "generate_stream",
    "load_device_preset",
    "route",
    "run",
    "task_workload",
    "__version__",
]
