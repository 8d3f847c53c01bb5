"""Network architecture descriptions: parsing, validation, shape inference, filter masks.

An architecture is an ordered stack of layers (conv / linear / relu / maxpool /
avgpool / flatten / residual-add) plus optional skip edges feeding residual-add
junctions. Layers are immutable; every operation returns a new value.

Text file format (one layer per line, ``#`` starts a comment)::

    input 3x32x32
    conv in=3 out=16 k=3 stride=1 pad=1 prunable=true
    relu
    maxpool k=2 stride=2
    flatten
    linear in=64 out=64
    skip from=0 to=5

A JSON mirror of the same schema is accepted for ``.json`` files, see
:func:`arch_to_json` / :func:`load_arch`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

LAYER_KINDS = ("conv", "linear", "relu", "maxpool", "avgpool", "flatten", "residual-add")

# Layers that neither own parameters nor change the channel count.
_CHANNEL_PRESERVING = ("relu", "maxpool", "avgpool", "residual-add")


class ArchError(ValueError):
    """Invalid architecture description, or an invalid operation on one."""


class ArchParseError(ArchError):
    """Syntax or schema error while reading an architecture document."""


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network.

    ``c_in``/``c_out`` are declared for conv and linear layers and inferred for
    the channel-preserving kinds. ``kernel_omega`` is the spatial kernel side
    for conv layers and the window side for pooling layers. ``s_out`` (number
    of output spatial positions, H_out * W_out) and ``out_hw`` are populated by
    :func:`infer_shapes` and are ``None`` on freshly parsed layers.
    """

    id: int
    kind: str
    c_in: int | None = None
    c_out: int | None = None
    kernel_omega: int | None = None
    stride: int = 1
    padding: int = 0
    prunable: bool = False
    s_out: int | None = None
    out_hw: tuple[int, int] | None = None


@dataclass(frozen=True)
class NetworkArch:
    """Ordered layer stack plus residual skip edges and the input shape."""

    layers: tuple[LayerSpec, ...]
    skip_edges: tuple[tuple[int, int], ...] = ()
    input_shape: tuple[int, int, int] | None = None


@dataclass(frozen=True)
class PruneMask:
    """Per-layer sets of filter indices (into the original c_out) to remove."""

    removed: dict[int, frozenset[int]]

    def total_removed(self) -> int:
        return sum(len(v) for v in self.removed.values())


def parse_arch(text: str) -> NetworkArch:
    """Parse the text architecture format into a :class:`NetworkArch`.

    Shapes (``s_out``, ``out_hw``) are left unset until :func:`infer_shapes`.
    Raises :class:`ArchParseError` with a line number on malformed input.
    """
    layers: list[LayerSpec] = []
    skips: list[tuple[int, int]] = []
    input_shape: tuple[int, int, int] | None = None
    explicit_prunable: dict[int, bool] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head, kv_tokens = tokens[0], tokens[1:]

        if head == "input":
            if len(kv_tokens) != 1:
                raise ArchParseError(f"line {lineno}: expected 'input CxHxW'")
            input_shape = _parse_input_shape(kv_tokens[0], lineno)
            continue
        if head == "skip":
            kv = _parse_kv(kv_tokens, lineno)
            src = _require_int(kv, "from", lineno)
            dst = _require_int(kv, "to", lineno)
            skips.append((src, dst))
            continue
        if head not in LAYER_KINDS:
            raise ArchParseError(f"line {lineno}: unknown layer kind '{head}'")

        kv = _parse_kv(kv_tokens, lineno)
        layer_id = len(layers)
        if head == "conv":
            spec = LayerSpec(
                id=layer_id,
                kind="conv",
                c_in=_require_int(kv, "in", lineno),
                c_out=_require_int(kv, "out", lineno),
                kernel_omega=_require_int(kv, "k", lineno),
                stride=_opt_int(kv, "stride", 1, lineno),
                padding=_opt_int(kv, "pad", 0, lineno),
            )
            if "prunable" in kv:
                explicit_prunable[layer_id] = _parse_bool(kv.pop("prunable"), lineno)
        elif head == "linear":
            spec = LayerSpec(
                id=layer_id,
                kind="linear",
                c_in=_require_int(kv, "in", lineno),
                c_out=_require_int(kv, "out", lineno),
            )
            if "prunable" in kv and _parse_bool(kv.pop("prunable"), lineno):
                raise ArchParseError(f"line {lineno}: linear layers are never prunable")
            kv.pop("prunable", None)
        elif head in ("maxpool", "avgpool"):
            k = _require_int(kv, "k", lineno)
            spec = LayerSpec(
                id=layer_id,
                kind=head,
                kernel_omega=k,
                stride=_opt_int(kv, "stride", k, lineno),
            )
        else:  # relu / flatten / residual-add
            spec = LayerSpec(id=layer_id, kind=head)
        if kv:
            raise ArchParseError(f"line {lineno}: unexpected key '{next(iter(kv))}' for {head}")
        _check_declared_fields(spec, lineno)
        layers.append(spec)

    if not layers:
        raise ArchParseError("no layers")

    layers = _resolve_prunable(layers, skips, explicit_prunable)
    arch = NetworkArch(layers=tuple(layers), skip_edges=tuple(skips), input_shape=input_shape)
    validate(arch)
    return arch


def parse_arch_json(text: str) -> NetworkArch:
    """Parse the JSON mirror of the architecture schema."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ArchParseError(f"invalid JSON: {e}") from None
    if not isinstance(doc, dict) or "layers" not in doc:
        raise ArchParseError("JSON document must be an object with a 'layers' list")
    lines = []
    if doc.get("input") is not None:
        c, h, w = doc["input"]
        lines.append(f"input {c}x{h}x{w}")
    for entry in doc["layers"]:
        kind = entry.get("kind")
        if kind is None:
            raise ArchParseError("layer entry missing 'kind'")
        parts = [str(kind)]
        for key in ("in", "out", "k", "stride", "pad", "prunable"):
            if key in entry:
                value = entry[key]
                if isinstance(value, bool):
                    value = "true" if value else "false"
                parts.append(f"{key}={value}")
        lines.append(" ".join(parts))
    for edge in doc.get("skips", []):
        lines.append(f"skip from={edge['from']} to={edge['to']}")
    return parse_arch("\n".join(lines))


def load_arch(path: str) -> NetworkArch:
    """Read an architecture file, dispatching on the ``.json`` extension."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    if str(path).endswith(".json"):
        return parse_arch_json(text)
    return parse_arch(text)


def serialize_arch(arch: NetworkArch) -> str:
    """Render the declared fields back to the text format.

    Inferred fields (``s_out``, ``out_hw``, inferred channel counts of
    channel-preserving layers) are not emitted, so parse(serialize(a)) equals
    the freshly parsed form of ``a``.
    """
    lines = []
    if arch.input_shape is not None:
        c, h, w = arch.input_shape
        lines.append(f"input {c}x{h}x{w}")
    for layer in arch.layers:
        if layer.kind == "conv":
            lines.append(
                f"conv in={layer.c_in} out={layer.c_out} k={layer.kernel_omega} "
                f"stride={layer.stride} pad={layer.padding} "
                f"prunable={'true' if layer.prunable else 'false'}"
            )
        elif layer.kind == "linear":
            lines.append(f"linear in={layer.c_in} out={layer.c_out}")
        elif layer.kind in ("maxpool", "avgpool"):
            lines.append(f"{layer.kind} k={layer.kernel_omega} stride={layer.stride}")
        else:
            lines.append(layer.kind)
    for src, dst in arch.skip_edges:
        lines.append(f"skip from={src} to={dst}")
    return "\n".join(lines) + "\n"


def arch_to_json(arch: NetworkArch) -> dict:
    """JSON-serializable mirror of the declared architecture fields."""
    doc: dict = {"layers": []}
    if arch.input_shape is not None:
        doc["input"] = list(arch.input_shape)
    for layer in arch.layers:
        if layer.kind == "conv":
            doc["layers"].append(
                {
                    "kind": "conv",
                    "in": layer.c_in,
                    "out": layer.c_out,
                    "k": layer.kernel_omega,
                    "stride": layer.stride,
                    "pad": layer.padding,
                    "prunable": layer.prunable,
                }
            )
        elif layer.kind == "linear":
            doc["layers"].append({"kind": "linear", "in": layer.c_in, "out": layer.c_out})
        elif layer.kind in ("maxpool", "avgpool"):
            doc["layers"].append({"kind": layer.kind, "k": layer.kernel_omega, "stride": layer.stride})
        else:
            doc["layers"].append({"kind": layer.kind})
    if arch.skip_edges:
        doc["skips"] = [{"from": s, "to": d} for s, d in arch.skip_edges]
    return doc


def validate(arch: NetworkArch) -> None:
    """Check structural invariants; raises :class:`ArchError` on violation.

    Channel consistency is checked as far as it is statically known; the
    consistency of linear layers behind a flatten needs spatial sizes and is
    re-checked by :func:`infer_shapes`.
    """
    if not arch.layers:
        raise ArchError("no layers")
    for i, layer in enumerate(arch.layers):
        if layer.id != i:
            raise ArchError(f"layer ids must be consecutive ordinals, got {layer.id} at {i}")
        _check_declared_fields(layer, None)

    sinks: dict[int, int] = {}
    for src, dst in arch.skip_edges:
        if not (0 <= src < len(arch.layers)) or not (0 <= dst < len(arch.layers)):
            raise ArchError(f"skip edge ({src}, {dst}) references a nonexistent layer")
        if arch.layers[dst].kind != "residual-add":
            raise ArchError(f"skip edge target {dst} is not a residual-add layer")
        if src >= dst:
            raise ArchError(f"skip edge ({src}, {dst}) must point forward")
        if dst in sinks:
            raise ArchError(f"residual-add layer {dst} has more than one skip edge")
        sinks[dst] = src
    for layer in arch.layers:
        if layer.kind == "residual-add" and layer.id not in sinks:
            raise ArchError(f"residual-add layer {layer.id} has no skip edge")

    # Static channel walk.
    channels: list[int | None] = []  # output channel count per layer, None when unknown
    cur = arch.input_shape[0] if arch.input_shape is not None else None
    for layer in arch.layers:
        if layer.kind in ("conv", "linear"):
            if layer.kind == "conv" and cur is not None and layer.c_in != cur:
                raise ArchError(
                    f"layer {layer.id}: c_in={layer.c_in} does not match "
                    f"predecessor channel count {cur}"
                )
            if layer.kind == "linear" and cur is not None and layer.c_in != cur:
                raise ArchError(
                    f"layer {layer.id}: linear c_in={layer.c_in} does not match "
                    f"predecessor feature count {cur}"
                )
            cur = layer.c_out
        elif layer.kind == "flatten":
            cur = None  # c * h * w, known only once shapes are inferred
        elif layer.kind == "residual-add":
            src = sinks[layer.id]
            src_c = channels[src]
            if src_c is not None and cur is not None and src_c != cur:
                raise ArchError(
                    f"residual-add layer {layer.id}: skip source has {src_c} channels "
                    f"but the main path has {cur}"
                )
        channels.append(cur)

    junction_feeders = _junction_feeding_convs(arch.layers, dict(sinks))
    for layer in arch.layers:
        if layer.prunable and layer.kind != "conv":
            raise ArchError(f"layer {layer.id}: only conv layers may be prunable")
        if layer.prunable and layer.id in junction_feeders:
            raise ArchError(
                f"layer {layer.id}: conv feeding a residual-add junction cannot be prunable"
            )


def infer_shapes(arch: NetworkArch) -> NetworkArch:
    """Populate ``s_out``/``out_hw`` (and pass-through channel counts) by forward propagation.

    Conv: H_out = floor((H + 2*pad - k) / stride) + 1, same for W; pooling the
    same with pad 0; linear layers require a flattened (1x1) input and have
    s_out = 1. Idempotent. Raises on non-positive intermediate sizes and on
    channel mismatches.
    """
    if arch.input_shape is None:
        raise ArchError("input shape not set; add an 'input CxHxW' line")
    validate(arch)
    sinks = {dst: src for src, dst in arch.skip_edges}
    c, h, w = arch.input_shape
    if c < 1 or h < 1 or w < 1:
        raise ArchError(f"invalid input shape {arch.input_shape}")

    out_layers: list[LayerSpec] = []
    out_dims: list[tuple[int, int, int]] = []  # (c, h, w) at each layer output
    for layer in arch.layers:
        if layer.kind == "conv":
            if layer.c_in != c:
                raise ArchError(f"layer {layer.id}: c_in={layer.c_in}, expected {c}")
            nh = (h + 2 * layer.padding - layer.kernel_omega) // layer.stride + 1
            nw = (w + 2 * layer.padding - layer.kernel_omega) // layer.stride + 1
            if nh < 1 or nw < 1:
                raise ArchError(f"layer {layer.id}: non-positive spatial output {nh}x{nw}")
            c, h, w = layer.c_out, nh, nw
            new = replace(layer, s_out=h * w, out_hw=(h, w))
        elif layer.kind in ("maxpool", "avgpool"):
            nh = (h - layer.kernel_omega) // layer.stride + 1
            nw = (w - layer.kernel_omega) // layer.stride + 1
            if nh < 1 or nw < 1:
                raise ArchError(f"layer {layer.id}: non-positive spatial output {nh}x{nw}")
            h, w = nh, nw
            new = replace(layer, c_in=c, c_out=c, s_out=h * w, out_hw=(h, w))
        elif layer.kind == "relu":
            new = replace(layer, c_in=c, c_out=c, s_out=h * w, out_hw=(h, w))
        elif layer.kind == "flatten":
            new = replace(layer, c_in=c, c_out=c * h * w, s_out=1, out_hw=(1, 1))
            c, h, w = c * h * w, 1, 1
        elif layer.kind == "linear":
            if (h, w) != (1, 1):
                raise ArchError(
                    f"layer {layer.id}: linear requires a flattened input, got {h}x{w} spatial"
                )
            if layer.c_in != c:
                raise ArchError(f"layer {layer.id}: linear c_in={layer.c_in}, expected {c}")
            c = layer.c_out
            new = replace(layer, s_out=1, out_hw=(1, 1))
        elif layer.kind == "residual-add":
            src_c, src_h, src_w = out_dims[sinks[layer.id]]
            if (src_c, src_h, src_w) != (c, h, w):
                raise ArchError(
                    f"residual-add layer {layer.id}: skip source shape "
                    f"{(src_c, src_h, src_w)} != main path shape {(c, h, w)}"
                )
            new = replace(layer, c_in=c, c_out=c, s_out=h * w, out_hw=(h, w))
        else:  # pragma: no cover - parse restricts kinds
            raise ArchError(f"unknown layer kind '{layer.kind}'")
        out_layers.append(new)
        out_dims.append((c, h, w))
    return replace(arch, layers=tuple(out_layers))


def param_count(layer: LayerSpec) -> int:
    """Parameter count: conv = c_in*k^2*c_out + c_out, linear = c_in*c_out + c_out, else 0."""
    if layer.kind == "conv":
        return layer.c_in * layer.kernel_omega**2 * layer.c_out + layer.c_out
    if layer.kind == "linear":
        return layer.c_in * layer.c_out + layer.c_out
    return 0


def total_params(arch: NetworkArch) -> int:
    return sum(param_count(layer) for layer in arch.layers)


def prunable_layers(arch: NetworkArch) -> list[LayerSpec]:
    return [layer for layer in arch.layers if layer.prunable]


def total_prunable_filters(arch: NetworkArch) -> int:
    return sum(layer.c_out for layer in prunable_layers(arch))


def apply_mask(arch: NetworkArch, mask: PruneMask, min_filters: int = 1) -> NetworkArch:
    """Remove the masked filters, shrinking the consuming layer's input accordingly.

    Channel updates propagate through channel-preserving layers; across a
    flatten the consuming linear layer loses (removed count) * (spatial
    positions at the flatten input) inputs. Shapes are re-inferred on the
    result. An empty mask returns ``arch`` unchanged.
    """
    if not mask.removed or all(len(v) == 0 for v in mask.removed.values()):
        return arch
    by_id = {layer.id: layer for layer in arch.layers}
    for layer_id, removed in mask.removed.items():
        if layer_id not in by_id:
            raise ArchError(f"mask references nonexistent layer {layer_id}")
        layer = by_id[layer_id]
        if layer.kind != "conv" or not layer.prunable:
            raise ArchError(f"layer {layer_id} is not prunable")
        if any(not (0 <= i < layer.c_out) for i in removed):
            raise ArchError(f"mask references a nonexistent filter of layer {layer_id}")
        if layer.c_out - len(removed) < min_filters:
            raise ArchError(
                f"layer {layer_id}: removing {len(removed)} of {layer.c_out} filters "
                f"would violate the min_filters={min_filters} floor"
            )

    # Spatial sizes are needed to cross flatten boundaries and do not change
    # under filter removal, so infer them on the original architecture.
    inferred = infer_shapes(arch) if arch.input_shape is not None else None

    new_layers = list(arch.layers)
    for layer_id, removed in sorted(mask.removed.items()):
        n = len(removed)
        if n == 0:
            continue
        layer = new_layers[layer_id]
        new_layers[layer_id] = replace(layer, c_out=layer.c_out - n)
        for consumer_id, multiplier in _consumers(arch, layer_id, inferred):
            consumer = new_layers[consumer_id]
            new_layers[consumer_id] = replace(consumer, c_in=consumer.c_in - n * multiplier)

    result = replace(arch, layers=tuple(_strip_inferred(l) for l in new_layers))
    validate(result)
    if result.input_shape is not None:
        result = infer_shapes(result)
    return result


def _consumers(
    arch: NetworkArch, layer_id: int, inferred: NetworkArch | None
) -> list[tuple[int, int]]:
    """(consumer id, channel multiplier) pairs affected by pruning ``layer_id``.

    The multiplier is 1 for a direct conv/linear consumer and the spatial
    position count at the flatten input for a linear consumer behind a flatten.
    """
    multiplier = 1
    i = layer_id + 1
    while i < len(arch.layers):
        kind = arch.layers[i].kind
        if kind in ("conv", "linear"):
            return [(i, multiplier)]
        if kind == "flatten":
            if inferred is None:
                raise ArchError(
                    "pruning across a flatten requires a set input shape to resolve spatial size"
                )
            prev = inferred.layers[i - 1] if i > 0 else None
            if prev is None or prev.out_hw is None:
                raise ArchError("shapes not inferred before flatten")
            multiplier *= prev.out_hw[0] * prev.out_hw[1]
        elif kind == "residual-add":
            # Guarded against by the prunable rules.
            raise ArchError(f"layer {layer_id} feeds residual-add layer {i} and cannot be pruned")
        i += 1
    return []


def _strip_inferred(layer: LayerSpec) -> LayerSpec:
    """Reset inferred fields so the layer matches its freshly parsed form."""
    if layer.kind in ("conv", "linear"):
        return replace(layer, s_out=None, out_hw=None)
    if layer.kind in ("maxpool", "avgpool"):
        return replace(layer, c_in=None, c_out=None, s_out=None, out_hw=None)
    return replace(layer, c_in=None, c_out=None, s_out=None, out_hw=None)


def strip_inferred(arch: NetworkArch) -> NetworkArch:
    """Return ``arch`` with all inferred fields reset (the freshly parsed form)."""
    return replace(arch, layers=tuple(_strip_inferred(l) for l in arch.layers))


def _junction_feeding_convs(
    layers: tuple[LayerSpec, ...] | list[LayerSpec], sinks: dict[int, int]
) -> set[int]:
    """Ids of conv layers whose output reaches a residual-add junction directly
    or through channel-preserving layers only."""
    feeders: set[int] = set()
    for dst, src in sinks.items():
        for start in (dst - 1, src):
            i = start
            while i >= 0 and layers[i].kind in _CHANNEL_PRESERVING:
                i -= 1
            if i >= 0 and layers[i].kind == "conv":
                feeders.add(layers[i].id)
    return feeders


def _resolve_prunable(
    layers: list[LayerSpec], skips: list[tuple[int, int]], explicit: dict[int, bool]
) -> list[LayerSpec]:
    """Apply prunable defaults: conv layers are prunable unless they feed a junction.

    Explicit ``prunable=true`` on a junction feeder is left in place so that
    validate() reports the contradiction.
    """
    sinks = {dst: src for src, dst in skips}
    feeders = _junction_feeding_convs(layers, sinks)
    out = []
    for layer in layers:
        if layer.kind != "conv":
            out.append(layer)
            continue
        if layer.id in explicit:
            flag = explicit[layer.id]
        else:
            flag = layer.id not in feeders
        out.append(replace(layer, prunable=flag))
    return out


def _parse_input_shape(token: str, lineno: int) -> tuple[int, int, int]:
    parts = token.lower().split("x")
    if len(parts) != 3:
        raise ArchParseError(f"line {lineno}: expected input shape CxHxW, got '{token}'")
    try:
        c, h, w = (int(p) for p in parts)
    except ValueError:
        raise ArchParseError(f"line {lineno}: non-integer input shape '{token}'") from None
    if min(c, h, w) < 1:
        raise ArchParseError(f"line {lineno}: input dimensions must be positive")
    return (c, h, w)


def _parse_kv(tokens: list[str], lineno: int) -> dict[str, str]:
    kv: dict[str, str] = {}
    for tok in tokens:
        if "=" not in tok:
            raise ArchParseError(f"line {lineno}: expected key=value, got '{tok}'")
        key, value = tok.split("=", 1)
        if key in kv:
            raise ArchParseError(f"line {lineno}: duplicate key '{key}'")
        kv[key] = value
    return kv


def _require_int(kv: dict[str, str], key: str, lineno: int) -> int:
    if key not in kv:
        raise ArchParseError(f"line {lineno}: missing required field '{key}'")
    return _to_int(kv.pop(key), key, lineno)


def _opt_int(kv: dict[str, str], key: str, default: int, lineno: int) -> int:
    if key not in kv:
        return default
    return _to_int(kv.pop(key), key, lineno)


def _to_int(value: str, key: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ArchParseError(f"line {lineno}: field '{key}' must be an integer") from None


def _parse_bool(value: str, lineno: int) -> bool:
    if value.lower() in ("true", "1", "yes"):
        return True
    if value.lower() in ("false", "0", "no"):
        return False
    raise ArchParseError(f"line {lineno}: expected a boolean, got '{value}'")


def _check_declared_fields(layer: LayerSpec, lineno: int | None) -> None:
    where = f"line {lineno}" if lineno is not None else f"layer {layer.id}"
    err = ArchParseError if lineno is not None else ArchError
    if layer.kind in ("conv", "linear"):
        if layer.c_in is None or layer.c_in < 1 or layer.c_out is None or layer.c_out < 1:
            raise err(f"{where}: channel counts must be >= 1")
    if layer.kind == "conv":
        if layer.kernel_omega is None or layer.kernel_omega < 1:
            raise err(f"{where}: kernel size must be >= 1")
        if layer.stride < 1 or layer.padding < 0:
            raise err(f"{where}: stride must be >= 1 and pad >= 0")
    if layer.kind in ("maxpool", "avgpool"):
        if layer.kernel_omega is None or layer.kernel_omega < 1 or layer.stride < 1:
            raise err(f"{where}: pool window and stride must be >= 1")
