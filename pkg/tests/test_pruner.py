"""Pruning quotas, determinism, floors, and sampler fidelity against Eq.-style analytics."""

import numpy as np
import pytest
from scipy import stats

from greenprune.archspec import ArchError, apply_mask, infer_shapes, parse_arch
from greenprune.energy import network_energy, selection_probs
from greenprune.pruner import (
    PruningConfig,
    prune_at_init,
    plan_to_mask,
    removal_quota,
    summarize,
)
from greenprune.reference import res_tiny, vgg_tiny

TWO_CONV = """\
input 3x32x32
conv in=3 out=16 k=3 stride=1 pad=1
relu
maxpool k=2 stride=2
conv in=16 out=2 k=3 stride=1 pad=1
"""


@pytest.fixture(scope="module")
def vgg():
    return infer_shapes(vgg_tiny())


class TestQuota:
    def test_definition(self, vgg):
        # vgg-tiny has 144 prunable filters
        assert removal_quota(vgg, 144 * 0.2 / 144) == 29  # ceil(0.2*144)

    def test_fraction_examples(self):
        arch = infer_shapes(
            parse_arch("input 3x8x8\nconv in=3 out=100 k=3 pad=1\n")
        )
        assert removal_quota(arch, 0.2) == 20
        assert removal_quota(arch, 0.8) == 80

    def test_ceiling(self):
        arch = infer_shapes(parse_arch("input 3x8x8\nconv in=3 out=7 k=3 pad=1\n"))
        assert removal_quota(arch, 0.5) == 4

    def test_no_prunable_layers_rejected(self):
        arch = infer_shapes(parse_arch("input 3x8x8\nrelu\nflatten\nlinear in=192 out=3\n"))
        with pytest.raises(ArchError, match="prunable"):
            removal_quota(arch, 0.5)


class TestConfig:
    def test_epsilon_bounds(self):
        with pytest.raises(ValueError):
            PruningConfig(epsilon=0.0)
        with pytest.raises(ValueError):
            PruningConfig(epsilon=1.0)

    def test_min_filters_floor(self):
        with pytest.raises(ValueError):
            PruningConfig(epsilon=0.5, min_filters=0)


class TestPruneAtInit:
    def test_tiny_epsilon_removes_exactly_one(self):
        arch = infer_shapes(parse_arch("input 3x8x8\nconv in=3 out=10 k=3 pad=1\n"))
        pruned, plan = prune_at_init(arch, PruningConfig(epsilon=1e-6, seed=0))
        assert plan.quota == 1
        assert len(plan.removals) == 1
        assert pruned.layers[0].c_out == 9

    def test_same_seed_same_plan(self, vgg):
        cfg = PruningConfig(epsilon=0.4, seed=123)
        p1, plan1 = prune_at_init(vgg, cfg)
        p2, plan2 = prune_at_init(vgg, cfg)
        assert plan1 == plan2
        assert p1 == p2

    def test_different_seed_differs(self, vgg):
        _, plan1 = prune_at_init(vgg, PruningConfig(epsilon=0.4, seed=1))
        _, plan2 = prune_at_init(vgg, PruningConfig(epsilon=0.4, seed=2))
        assert plan1 != plan2

    def test_quota_met_exactly(self, vgg):
        for eps in (0.2, 0.8):
            pruned, plan = prune_at_init(vgg, PruningConfig(epsilon=eps, seed=5))
            assert len(plan.removals) == plan.quota == int(np.ceil(eps * 144))
            assert sum(plan.per_layer_histogram.values()) == plan.quota

    def test_min_filters_respected_at_high_epsilon(self, vgg):
        # 144 prunable filters, floor 2 leaves 136 removable: 0.9 -> quota 130
        pruned, _ = prune_at_init(vgg, PruningConfig(epsilon=0.9, seed=3, min_filters=2))
        for layer in pruned.layers:
            if layer.kind == "conv":
                assert layer.c_out >= 2

    def test_unachievable_quota_rejected(self, vgg):
        with pytest.raises(ArchError, match="quota"):
            prune_at_init(vgg, PruningConfig(epsilon=0.99, seed=0, min_filters=30))

    def test_energy_strictly_decreases_along_sequence(self, vgg):
        _, plan = prune_at_init(vgg, PruningConfig(epsilon=0.3, seed=11))
        removed: dict[int, set[int]] = {}
        previous = network_energy(vgg).network_total
        for _, layer_id, filter_index in plan.removals:
            removed.setdefault(layer_id, set()).add(filter_index)
            from greenprune.archspec import PruneMask

            current = network_energy(
                apply_mask(vgg, PruneMask({k: frozenset(v) for k, v in removed.items()}))
            ).network_total
            assert current < previous
            previous = current

    def test_plan_mask_reproduces_pruned_arch(self, vgg):
        pruned, plan = prune_at_init(vgg, PruningConfig(epsilon=0.5, seed=21))
        assert apply_mask(vgg, plan_to_mask(plan)) == pruned

    def test_residual_arch_only_prunes_free_convs(self):
        arch = infer_shapes(res_tiny())
        pruned, plan = prune_at_init(arch, PruningConfig(epsilon=0.6, seed=2))
        assert set(plan.per_layer_histogram) <= {0, 9}
        assert pruned.layers[3].c_out == 32
        assert pruned.layers[5].c_out == 32

    def test_filter_indices_unique_per_layer(self, vgg):
        _, plan = prune_at_init(vgg, PruningConfig(epsilon=0.7, seed=9))
        seen: dict[int, set[int]] = {}
        for _, layer_id, filter_index in plan.removals:
            assert filter_index not in seen.setdefault(layer_id, set())
            seen[layer_id].add(filter_index)


class TestSamplerFidelity:
    def test_first_pick_matches_selection_probs(self):
        """First-iteration picks over many seeds follow the energy distribution.

        The two-conv arch gives the first layer roughly 6x the second layer's
        energy; the analytic reference comes from selection_probs directly.
        """
        arch = infer_shapes(parse_arch(TWO_CONV))
        probs = selection_probs(arch)
        assert probs[0] > 0.8  # heavy first layer dominated by its flops
        n = 4000
        counts = {0: 0, 3: 0}
        for seed in range(n):
            _, plan = prune_at_init(arch, PruningConfig(epsilon=1e-6, seed=seed))
            counts[plan.removals[0][1]] += 1
        expected = [probs[0] * n, probs[3] * n]
        chi2 = stats.chisquare([counts[0], counts[3]], expected)
        assert chi2.pvalue > 0.01


class TestSummarize:
    def test_empty_plan(self, vgg):
        from greenprune.pruner import PruningPlan

        assert summarize(PruningPlan((), 0, {}), vgg) == []

    def test_percentage_row(self, vgg):
        from greenprune.pruner import PruningPlan

        plan = PruningPlan(
            tuple((i, 3, i) for i in range(4)), 4, {3: 4}
        )
        rows = summarize(plan, vgg)
        assert rows == [
            {"layer_id": 3, "original_filters": 32, "removed": 4, "removed_pct": 12.5}
        ]

    def test_histogram_sums_to_quota(self, vgg):
        _, plan = prune_at_init(vgg, PruningConfig(epsilon=0.35, seed=4))
        rows = summarize(plan, vgg)
        assert sum(r["removed"] for r in rows) == plan.quota
