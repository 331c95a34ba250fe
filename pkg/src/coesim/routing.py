"""Rule-based routing between experts.

A component type maps to one classification expert; some rules chain into a
shared detection expert with a fixed branch probability.  Usage probabilities
are defined over expert invocations: the per-request selection frequencies
are normalized by the expected number of invocations one external request
generates, so the probabilities of all experts sum to one.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Mapping

from .seeding import subseed
from .types import ConfigurationError, RoutingRule


@dataclass(frozen=True)
class RoutePlan:
    """Expert chain template for one component type.

    experts always starts with the classification expert; when a detection
    expert is attached it is taken with probability branch_prob, resolved by
    the engine per request.
    """

    experts: tuple[str, ...]
    branch_prob: float


def route(component_type: str, rules: Mapping[str, RoutingRule]) -> RoutePlan:
    """Resolve the chain template for a component type."""
    rule = rules.get(component_type)
    if rule is None:
        raise ConfigurationError(f"no routing rule for component {component_type!r}")
    if rule.detection_expert_id is None:
        return RoutePlan(experts=(rule.classification_expert_id,), branch_prob=0.0)
    return RoutePlan(
        experts=(rule.classification_expert_id, rule.detection_expert_id),
        branch_prob=rule.detection_prob,
    )


def compute_usage_probs(
    rules: Mapping[str, RoutingRule],
    component_mix: Mapping[str, float],
    mode: str = "exact",
    num_samples: int = 100_000,
    seed: int = 0,
) -> dict[str, float]:
    """Per-expert invocation probabilities for a given request mix.

    mode "exact" evaluates the closed form; mode "sampled" estimates the same
    quantity by Monte-Carlo simulation of the routing decisions.
    """
    total_mix = sum(component_mix.values())
    if abs(total_mix - 1.0) > 1e-9:
        raise ConfigurationError(f"component mix sums to {total_mix!r}, expected 1.0")
    for component in component_mix:
        if component not in rules:
            raise ConfigurationError(f"no routing rule for component {component!r}")
    if mode == "exact":
        return _exact_usage_probs(rules, component_mix)
    if mode == "sampled":
        return _sampled_usage_probs(rules, component_mix, num_samples, seed)
    raise ConfigurationError(f"unknown usage probability mode {mode!r}")


def _exact_usage_probs(
    rules: Mapping[str, RoutingRule], component_mix: Mapping[str, float]
) -> dict[str, float]:
    invocations: dict[str, float] = {}
    expected_per_request = 0.0
    for component, freq in component_mix.items():
        rule = rules[component]
        invocations[rule.classification_expert_id] = (
            invocations.get(rule.classification_expert_id, 0.0) + freq
        )
        expected_per_request += freq
        if rule.detection_expert_id is not None:
            weight = freq * rule.detection_prob
            invocations[rule.detection_expert_id] = (
                invocations.get(rule.detection_expert_id, 0.0) + weight
            )
            expected_per_request += weight
    return {eid: w / expected_per_request for eid, w in invocations.items()}


def _sampled_usage_probs(
    rules: Mapping[str, RoutingRule],
    component_mix: Mapping[str, float],
    num_samples: int,
    seed: int,
) -> dict[str, float]:
    rng = random.Random(subseed(seed, "usage-probs"))
    components = sorted(component_mix)
    weights = [component_mix[c] for c in components]
    counts: dict[str, int] = {}
    total = 0
    for component in rng.choices(components, weights=weights, k=num_samples):
        rule = rules[component]
        counts[rule.classification_expert_id] = counts.get(rule.classification_expert_id, 0) + 1
        total += 1
        if rule.detection_expert_id is not None and rng.random() < rule.detection_prob:
            counts[rule.detection_expert_id] = counts.get(rule.detection_expert_id, 0) + 1
            total += 1
    return {eid: n / total for eid, n in counts.items()}
