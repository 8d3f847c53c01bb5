"""Analytical per-layer energy model and the energy-proportional layer selection distribution.

Compute cost is counted as one FLOP per multiply-accumulate of a conv or
linear layer; memory cost charges parameters three times over (weights,
gradients, momentum) and activations twice (values and their errors), four
bytes per value. Each is scaled by a per-unit energy constant.
"""

from __future__ import annotations

from dataclasses import dataclass

from .archspec import ArchError, LayerSpec, NetworkArch, param_count

#: Bytes per megabyte in the memory-access term. The per-MB energy constant is
#: interpreted against 2**20 bytes.
BYTES_PER_MB = 2**20


@dataclass(frozen=True)
class EnergyConstants:
    """Energy model constants: joules per FLOP, joules per MB of DRAM access,
    and bytes per stored value."""

    a_per_flop: float = 2.3e-12
    b_per_mb: float = 640e-12
    bytes_per_value: int = 4

    def __post_init__(self) -> None:
        if self.a_per_flop <= 0 or self.b_per_mb <= 0 or self.bytes_per_value <= 0:
            raise ValueError("energy constants must be strictly positive")


@dataclass(frozen=True)
class LayerEnergy:
    layer_id: int
    flops: int
    e_flops: float
    mem_bytes: int
    e_access: float
    e_total: float


@dataclass(frozen=True)
class EnergyReport:
    per_layer: tuple[LayerEnergy, ...]
    network_total: float

    def by_id(self, layer_id: int) -> LayerEnergy:
        return self.per_layer[layer_id]


def layer_flops(layer: LayerSpec) -> int:
    """FLOP count: conv = c_in * k^2 * c_out * s_out, linear = c_in * c_out, else 0."""
    if layer.kind == "conv":
        if layer.s_out is None:
            raise ArchError(f"layer {layer.id}: shapes not inferred")
        return layer.c_in * layer.kernel_omega**2 * layer.c_out * layer.s_out
    if layer.kind == "linear":
        return layer.c_in * layer.c_out
    return 0


def flops_energy(flops: int, constants: EnergyConstants) -> float:
    return flops * constants.a_per_flop


def layer_mem_bytes(layer: LayerSpec, constants: EnergyConstants | None = None) -> int:
    """Memory footprint in bytes: (params * 3 + s_out * c_out * 2) * bytes_per_value.

    Non-parametric layers contribute 0; their activations are charged at the
    producing conv/linear layer.
    """
    constants = constants or EnergyConstants()
    if layer.kind not in ("conv", "linear"):
        return 0
    if layer.s_out is None:
        raise ArchError(f"layer {layer.id}: shapes not inferred")
    values = param_count(layer) * 3 + layer.s_out * layer.c_out * 2
    return values * constants.bytes_per_value


def access_energy(mem_bytes: int, constants: EnergyConstants) -> float:
    return (mem_bytes / BYTES_PER_MB) * constants.b_per_mb


def layer_energy(layer: LayerSpec, constants: EnergyConstants) -> LayerEnergy:
    flops = layer_flops(layer)
    e_f = flops_energy(flops, constants)
    mem = layer_mem_bytes(layer, constants)
    e_a = access_energy(mem, constants)
    return LayerEnergy(
        layer_id=layer.id, flops=flops, e_flops=e_f, mem_bytes=mem, e_access=e_a,
        e_total=e_f + e_a,
    )


def network_energy(arch: NetworkArch, constants: EnergyConstants | None = None) -> EnergyReport:
    """Per-layer energies and their sum for a validated, shape-inferred architecture."""
    constants = constants or EnergyConstants()
    per_layer = tuple(layer_energy(layer, constants) for layer in arch.layers)
    return EnergyReport(per_layer=per_layer, network_total=sum(e.e_total for e in per_layer))


def selection_probs(
    arch: NetworkArch,
    constants: EnergyConstants | None = None,
    eligible: set[int] | None = None,
) -> dict[int, float]:
    """Probability of selecting each eligible layer, proportional to its energy.

    ``eligible`` defaults to the prunable layers. Every eligible layer must
    have strictly positive energy.
    """
    constants = constants or EnergyConstants()
    if eligible is None:
        eligible = {layer.id for layer in arch.layers if layer.prunable}
    if not eligible:
        raise ValueError("empty eligible set")
    energies = {}
    for layer_id in sorted(eligible):
        if not (0 <= layer_id < len(arch.layers)):
            raise ArchError(f"eligible layer {layer_id} does not exist")
        e = layer_energy(arch.layers[layer_id], constants).e_total
        if e <= 0:
            raise ValueError(f"layer {layer_id} has non-positive energy {e}")
        energies[layer_id] = e
    total = sum(energies.values())
    return {layer_id: e / total for layer_id, e in energies.items()}
