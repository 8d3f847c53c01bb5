"""Stochastic filter pruning at initialization.

Filters are removed one per iteration until the compression quota is met. In
each iteration the layer to prune is sampled with probability proportional to
its current energy (recomputed on the partially pruned network), and the
filter within that layer is chosen uniformly at random. Layers at the
min-filter floor leave the eligible set instead of aborting the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .archspec import (
    ArchError,
    NetworkArch,
    PruneMask,
    apply_mask,
    infer_shapes,
    total_prunable_filters,
    _consumers,
)
from .energy import EnergyConstants, selection_probs


@dataclass(frozen=True)
class PruningConfig:
    epsilon: float
    min_filters: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if self.min_filters < 1:
            raise ValueError(f"min_filters must be >= 1, got {self.min_filters}")


@dataclass(frozen=True)
class PruningPlan:
    """Ordered removal record: (iteration, layer id, original filter index)."""

    removals: tuple[tuple[int, int, int], ...]
    quota: int
    per_layer_histogram: dict[int, int]


def removal_quota(arch: NetworkArch, epsilon: float) -> int:
    """ceil(epsilon * total prunable filters)."""
    total = total_prunable_filters(arch)
    if total == 0:
        raise ArchError("architecture has no prunable filters")
    # Nudge below the product so binary float excess (e.g. 0.2 * 100 ->
    # 20.000000000000004) does not round one filter up.
    return max(1, math.ceil(epsilon * total - 1e-9))


def prune_at_init(
    arch: NetworkArch,
    config: PruningConfig,
    rng: np.random.Generator | None = None,
    constants: EnergyConstants | None = None,
) -> tuple[NetworkArch, PruningPlan]:
    """Prune ``arch`` down by the epsilon quota; deterministic given the seed.

    Returns the pruned architecture (shapes inferred) and the removal plan.
    Raises :class:`ArchError` when the quota cannot be met under the
    min-filters floors.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    constants = constants or EnergyConstants()
    arch = infer_shapes(arch)

    quota = removal_quota(arch, config.epsilon)
    prunable_ids = [layer.id for layer in arch.layers if layer.prunable]
    capacity = sum(max(0, arch.layers[i].c_out - config.min_filters) for i in prunable_ids)
    if quota > capacity:
        raise ArchError(
            f"quota {quota} exceeds the {capacity} filters removable above the "
            f"min_filters={config.min_filters} floor"
        )

    consumers = {i: _consumers(arch, i, arch) for i in prunable_ids}
    layers = list(arch.layers)
    removed: dict[int, set[int]] = {i: set() for i in prunable_ids}
    original_c_out = {i: arch.layers[i].c_out for i in prunable_ids}
    removals: list[tuple[int, int, int]] = []

    for iteration in range(quota):
        eligible = {i for i in prunable_ids if layers[i].c_out > config.min_filters}
        if not eligible:  # pragma: no cover - excluded by the capacity check
            raise ArchError("no prunable layer above the min_filters floor")
        current = replace(arch, layers=tuple(layers))
        probs = selection_probs(current, constants, eligible)
        ids = sorted(probs)
        layer_id = int(rng.choice(ids, p=[probs[i] for i in ids]))

        remaining = sorted(set(range(original_c_out[layer_id])) - removed[layer_id])
        filter_index = int(remaining[rng.integers(len(remaining))])
        removed[layer_id].add(filter_index)
        removals.append((iteration, layer_id, filter_index))

        layers[layer_id] = replace(layers[layer_id], c_out=layers[layer_id].c_out - 1)
        for consumer_id, multiplier in consumers[layer_id]:
            consumer = layers[consumer_id]
            layers[consumer_id] = replace(consumer, c_in=consumer.c_in - multiplier)

    mask = PruneMask({i: frozenset(v) for i, v in removed.items() if v})
    pruned = apply_mask(arch, mask, config.min_filters)
    histogram = {i: len(removed[i]) for i in sorted(removed) if removed[i]}
    plan = PruningPlan(removals=tuple(removals), quota=quota, per_layer_histogram=histogram)
    return pruned, plan


def plan_to_mask(plan: PruningPlan) -> PruneMask:
    """Collapse a removal plan into the equivalent filter mask."""
    by_layer: dict[int, set[int]] = {}
    for _, layer_id, filter_index in plan.removals:
        by_layer.setdefault(layer_id, set()).add(filter_index)
    return PruneMask({i: frozenset(v) for i, v in by_layer.items()})


def summarize(plan: PruningPlan, arch: NetworkArch) -> list[dict]:
    """Per-layer removal table: layer id, original and removed filter counts,
    and the removed percentage. ``arch`` must be the unpruned architecture."""
    rows = []
    for layer_id in sorted(plan.per_layer_histogram):
        n_removed = plan.per_layer_histogram[layer_id]
        original = arch.layers[layer_id].c_out
        rows.append(
            {
                "layer_id": layer_id,
                "original_filters": original,
                "removed": n_removed,
                "removed_pct": 100.0 * n_removed / original,
            }
        )
    return rows
