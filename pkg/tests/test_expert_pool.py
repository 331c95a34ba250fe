"""Pool accounting, round-robin dealing, and two-stage eviction."""

import random

import pytest

from coesim.expert_pool import ModelPool, TwoStageEvictor, initialize_pools
from coesim.types import ArchClass, ExpertSpec, MemoryStarvationError, ModelRegistry


def make_graph(*experts):
    """Registry from (expert_id, usage_prob, param_bytes, upstream) tuples.

    Experts with upstream edges get the detection arch, the rest the
    classification arch.  Probabilities must sum to 1.
    """
    arch_classes = {
        "cls-r101": ArchClass("cls-r101", "classification"),
        "det-y5": ArchClass("det-y5", "detection"),
    }
    specs = {}
    for eid, prob, nbytes, upstream in experts:
        arch = "det-y5" if upstream else "cls-r101"
        specs[eid] = ExpertSpec(eid, arch, nbytes, frozenset(upstream), prob)
    registry = ModelRegistry(arch_classes, specs, {}, {})
    registry.validate()
    return registry


def filled_pool(budget, resident, pinned=()):
    pool = ModelPool(executor_id=0, expert_budget_bytes=budget)
    for eid, nbytes in resident.items():
        pool.add(eid, nbytes)
    pool.pinned |= set(pinned)
    return pool


class TestModelPool:
    def test_accounting(self):
        pool = ModelPool(executor_id=0, expert_budget_bytes=500)
        pool.add("a", 200)
        pool.add("b", 100)
        assert pool.used_bytes == 300
        assert pool.free_bytes == 200
        assert pool.has("a") and not pool.has("c")
        assert pool.remove("a") == 200
        assert pool.free_bytes == 400

    def test_duplicate_add_rejected(self):
        pool = filled_pool(500, {"a": 100})
        with pytest.raises(ValueError, match="already resident"):
            pool.add("a", 100)

    def test_add_over_budget_rejected(self):
        pool = filled_pool(500, {"a": 400})
        with pytest.raises(MemoryStarvationError):
            pool.add("b", 200)

    def test_remove_pinned_rejected(self):
        pool = filled_pool(500, {"a": 100}, pinned=["a"])
        with pytest.raises(ValueError, match="pinned"):
            pool.remove("a")

    def test_remove_absent_raises(self):
        pool = filled_pool(500, {})
        with pytest.raises(KeyError):
            pool.remove("ghost")


class TestInitializePools:
    def specs(self, *sized):
        registry = make_graph(*sized)
        return registry.experts_by_descending_prob()

    def test_round_robin_dealing(self):
        specs = self.specs(
            ("e0", 0.4, 100, ()), ("e1", 0.3, 100, ()),
            ("e2", 0.2, 100, ()), ("e3", 0.1, 100, ()),
        )
        pools = [ModelPool(0, 200), ModelPool(1, 200)]
        placements = initialize_pools(specs, pools)
        assert placements == [["e0", "e2"], ["e1", "e3"]]
        assert pools[0].has("e0") and pools[0].has("e2")
        assert pools[1].used_bytes == 200

    def test_single_pool_takes_top_k(self):
        specs = self.specs(
            ("e0", 0.4, 100, ()), ("e1", 0.25, 100, ()), ("e2", 0.15, 100, ()),
            ("e3", 0.12, 100, ()), ("e4", 0.08, 100, ()),
        )
        pools = [ModelPool(0, 320)]
        assert initialize_pools(specs, pools) == [["e0", "e1", "e2"]]

    def test_full_pool_is_skipped_in_rotation(self):
        specs = self.specs(("a", 0.5, 100, ()), ("b", 0.3, 200, ()), ("c", 0.2, 50, ()))
        pools = [ModelPool(0, 100), ModelPool(1, 250)]
        placements = initialize_pools(specs, pools)
        # c finds pool 0 full on its turn and rotates into pool 1's leftover.
        assert placements == [["a"], ["b", "c"]]

    def test_dealing_stops_at_first_unplaceable_expert(self):
        specs = self.specs(("a", 0.5, 100, ()), ("b", 0.3, 150, ()), ("c", 0.2, 50, ()))
        pools = [ModelPool(0, 100), ModelPool(1, 100)]
        placements = initialize_pools(specs, pools)
        # b fits nowhere, so dealing ends even though c would still fit.
        assert placements == [["a"], []]
        assert not pools[1].resident

    def test_no_pools(self):
        assert initialize_pools([], []) == []


class TestTwoStageEvictor:
    def test_blocked_expert_goes_first(self):
        registry = make_graph(
            ("c0", 0.3, 100, ()), ("c1", 0.3, 100, ()),
            ("d0", 0.2, 300, ("c0",)), ("d1", 0.2, 300, ("c1",)),
        )
        pool = filled_pool(900, {"c1": 100, "d0": 300, "d1": 300})
        # d0's producer is absent, d1's is resident: only d0 is blocked.
        victims = TwoStageEvictor(registry).select(pool, needed_bytes=400)
        assert victims == ["d0"]

    def test_stage_one_prefers_larger_footprint(self):
        registry = make_graph(
            ("c0", 0.25, 100, ()), ("c1", 0.25, 100, ()),
            ("d0", 0.25, 300, ("c0",)), ("d1", 0.25, 200, ("c1",)),
        )
        evictor = TwoStageEvictor(registry)
        assert evictor.select(filled_pool(600, {"d0": 300, "d1": 200}), 350) == ["d0"]
        assert evictor.select(filled_pool(600, {"d0": 300, "d1": 200}), 600) == ["d0", "d1"]

    def test_pending_target_shields_blocked_expert(self):
        registry = make_graph(
            ("c0", 0.1, 100, ()), ("c1", 0.1, 100, ()),
            ("d0", 0.4, 300, ("c0",)), ("d1", 0.4, 300, ("c1",)),
        )
        evictor = TwoStageEvictor(registry)
        assert evictor.select(filled_pool(500, {"d0": 300, "c1": 100}), 200) == ["d0"]
        victims = evictor.select(
            filled_pool(500, {"d0": 300, "c1": 100}), 200, pending_targets=["d0"]
        )
        assert victims == ["c1"]

    def test_stage_two_ascending_usage_prob(self):
        registry = make_graph(("x", 0.3, 100, ()), ("y", 0.1, 100, ()), ("z", 0.6, 100, ()))
        evictor = TwoStageEvictor(registry)
        pool = filled_pool(300, {"x": 100, "y": 100, "z": 100})
        assert evictor.select(pool, 100) == ["y"]
        assert evictor.select(pool, 200) == ["y", "x"]

    def test_stage_two_prob_tie_takes_larger_footprint(self):
        registry = make_graph(("p", 0.2, 100, ()), ("q", 0.2, 300, ()), ("r", 0.6, 100, ()))
        pool = filled_pool(500, {"p": 100, "q": 300, "r": 100})
        assert TwoStageEvictor(registry).select(pool, 100) == ["q"]

    def test_no_deficit_no_victims(self):
        registry = make_graph(("x", 1.0, 100, ()))
        pool = filled_pool(600, {"x": 100})
        assert TwoStageEvictor(registry).select(pool, 400) == []

    def test_pinned_experts_survive(self):
        registry = make_graph(("x", 0.3, 100, ()), ("y", 0.1, 100, ()), ("z", 0.6, 100, ()))
        pool = filled_pool(300, {"x": 100, "y": 100, "z": 100}, pinned=["y"])
        assert TwoStageEvictor(registry).select(pool, 100) == ["x"]

    def test_starvation_when_unpinned_bytes_cannot_cover(self):
        registry = make_graph(("x", 0.4, 100, ()), ("y", 0.6, 100, ()))
        pool = filled_pool(300, {"x": 100, "y": 100}, pinned=["y"])
        with pytest.raises(MemoryStarvationError):
            TwoStageEvictor(registry).select(pool, 350)

    def test_partial_stage_one_spills_into_stage_two(self):
        registry = make_graph(
            ("c0", 0.05, 100, ()), ("c1", 0.15, 100, ()),
            ("d0", 0.3, 300, ("c0",)), ("d1", 0.5, 300, ("c1",)),
        )
        pool = filled_pool(800, {"c1": 100, "d0": 300, "d1": 300})
        victims = TwoStageEvictor(registry).select(pool, 600)
        # Stage 1 reclaims d0 (300), short of the 500 deficit; stage 2 then
        # walks ascending probability without re-evicting d0.
        assert victims == ["d0", "c1", "d1"]

    def test_minimal_suffix_property(self):
        """The victim list always covers the deficit, and never by more than
        one surplus expert: dropping the last victim falls short again."""
        rng = random.Random(77)
        for _ in range(200):
            n = rng.randint(2, 8)
            raw = [rng.uniform(0.05, 1.0) for _ in range(n)]
            total = sum(raw)
            rows = []
            for i in range(n):
                upstream = ("u",) if i % 3 == 0 else ()
                rows.append((f"e{i}", raw[i] / total * 0.9, rng.randrange(50, 400), upstream))
            rows.append(("u", 0.1, 100, ()))
            registry = make_graph(*rows)
            resident = {
                eid: registry.experts[eid].param_bytes
                for eid in rng.sample([r[0] for r in rows], rng.randint(1, n))
            }
            budget = sum(resident.values()) + rng.randrange(0, 200)
            pool = filled_pool(budget, resident)
            needed = rng.randrange(0, int(sum(resident.values())) + 100)
            deficit = needed - pool.free_bytes
            try:
                victims = TwoStageEvictor(registry).select(pool, needed)
            except MemoryStarvationError:
                assert sum(resident.values()) < deficit
                continue
            assert len(set(victims)) == len(victims)
            assert all(eid in resident for eid in victims)
            reclaimed = sum(resident[eid] for eid in victims)
            if deficit <= 0:
                assert victims == []
            else:
                assert reclaimed >= deficit
                assert reclaimed - resident[victims[-1]] < deficit
