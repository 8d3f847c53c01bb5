"""Energy-driven filter pruning at initialization with uncertainty-routed hybrid inference."""

from .archspec import (
    ArchError,
    ArchParseError,
    LayerSpec,
    NetworkArch,
    PruneMask,
    apply_mask,
    infer_shapes,
    load_arch,
    param_count,
    parse_arch,
    serialize_arch,
    validate,
)
from .energy import EnergyConstants, EnergyReport, LayerEnergy, network_energy, selection_probs
from .pruner import PruningConfig, PruningPlan, prune_at_init, removal_quota, summarize

__version__ = "0.1.0"
