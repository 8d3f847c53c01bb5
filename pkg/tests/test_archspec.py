"""Architecture parsing, shape inference, parameter counts, and mask application."""

import pytest

from greenprune.archspec import (
    ArchError,
    ArchParseError,
    NetworkArch,
    PruneMask,
    apply_mask,
    infer_shapes,
    param_count,
    parse_arch,
    parse_arch_json,
    serialize_arch,
    strip_inferred,
    total_params,
    validate,
)
from greenprune.reference import res_tiny, vgg_tiny

THREE_LAYER = """\
input 3x4x4
conv in=3 out=16 k=3 stride=1 pad=1
relu
flatten
linear in=256 out=3
"""


def param_count_oracle(layer):
    """Count parameters one by one: every weight cell, then every bias."""
    n = 0
    if layer.kind == "conv":
        for _ in range(layer.c_out):
            for _ in range(layer.c_in):
                for _ in range(layer.kernel_omega):
                    for _ in range(layer.kernel_omega):
                        n += 1
        for _ in range(layer.c_out):
            n += 1
    elif layer.kind == "linear":
        for _ in range(layer.c_out):
            for _ in range(layer.c_in):
                n += 1
        for _ in range(layer.c_out):
            n += 1
    return n


class TestParse:
    def test_three_layer_roundtrip_of_declared_fields(self):
        arch = parse_arch(THREE_LAYER)
        assert [l.kind for l in arch.layers] == ["conv", "relu", "flatten", "linear"]
        conv = arch.layers[0]
        assert (conv.c_in, conv.c_out, conv.kernel_omega) == (3, 16, 3)
        assert conv.s_out is None
        assert arch.layers[3].c_in == 256

    def test_empty_document_rejected(self):
        with pytest.raises(ArchParseError, match="no layers"):
            parse_arch("# just a comment\n")

    def test_zero_kernel_rejected(self):
        with pytest.raises(ArchParseError):
            parse_arch("conv in=3 out=16 k=0")

    def test_unknown_kind_reports_line(self):
        with pytest.raises(ArchParseError, match="line 2"):
            parse_arch("relu\nsoftmax\n")

    def test_missing_field_reports_line(self):
        with pytest.raises(ArchParseError, match="missing required field 'out'"):
            parse_arch("conv in=3 k=3")

    def test_comments_and_blank_lines_ignored(self):
        arch = parse_arch("# header\n\nrelu  # trailing\n")
        assert len(arch.layers) == 1

    def test_conv_defaults(self):
        arch = parse_arch("conv in=3 out=8 k=3")
        conv = arch.layers[0]
        assert (conv.stride, conv.padding, conv.prunable) == (1, 0, True)

    def test_pool_stride_defaults_to_window(self):
        arch = parse_arch("maxpool k=2")
        assert arch.layers[0].stride == 2

    def test_linear_prunable_rejected(self):
        with pytest.raises(ArchParseError, match="never prunable"):
            parse_arch("linear in=4 out=2 prunable=true")

    def test_json_mirror_matches_text(self):
        arch = vgg_tiny()
        import json

        from greenprune.archspec import arch_to_json

        assert parse_arch_json(json.dumps(arch_to_json(arch))) == arch

    def test_serialize_parse_identity(self):
        for arch in (vgg_tiny(), res_tiny(), parse_arch(THREE_LAYER)):
            assert parse_arch(serialize_arch(arch)) == arch

    def test_serialize_ignores_inferred_fields(self):
        arch = vgg_tiny()
        assert serialize_arch(infer_shapes(arch)) == serialize_arch(arch)


class TestResidualRules:
    def test_junction_feeders_default_non_prunable(self):
        arch = res_tiny()
        prunable = {l.id for l in arch.layers if l.prunable}
        assert prunable == {0, 9}

    def test_explicit_prunable_on_feeder_rejected(self):
        text = RES_WITH_EXPLICIT = """\
input 3x8x8
conv in=3 out=4 k=3 pad=1
relu
conv in=4 out=4 k=3 pad=1 prunable=true
residual-add
skip from=0 to=3
"""
        with pytest.raises(ArchError, match="residual-add junction"):
            parse_arch(text)

    def test_residual_without_skip_rejected(self):
        with pytest.raises(ArchError, match="no skip edge"):
            parse_arch("conv in=3 out=4 k=3\nresidual-add\n")

    def test_skip_channel_mismatch_rejected(self):
        text = """\
input 3x8x8
conv in=3 out=4 k=3 pad=1
conv in=4 out=8 k=3 pad=1
residual-add
skip from=0 to=2
"""
        with pytest.raises(ArchError, match="channels"):
            parse_arch(text)


class TestInferShapes:
    def test_padded_conv_preserves_size(self):
        arch = parse_arch("input 3x32x32\nconv in=3 out=16 k=3 stride=1 pad=1\n")
        assert infer_shapes(arch).layers[0].s_out == 1024

    def test_maxpool_halves_each_side(self):
        arch = parse_arch("input 3x32x32\nconv in=3 out=4 k=3 pad=1\nmaxpool k=2 stride=2\n")
        assert infer_shapes(arch).layers[1].s_out == 256

    def test_degenerate_output_rejected(self):
        arch = parse_arch("input 3x4x4\nconv in=3 out=4 k=5 stride=1 pad=0\n")
        with pytest.raises(ArchError, match="non-positive"):
            infer_shapes(arch)

    def test_idempotent(self):
        once = infer_shapes(vgg_tiny())
        assert infer_shapes(once) == once

    def test_linear_requires_flat_input(self):
        arch = parse_arch("input 3x8x8\nconv in=3 out=4 k=3 pad=1\nlinear in=4 out=2\n")
        with pytest.raises(ArchError, match="flatten"):
            infer_shapes(arch)

    def test_missing_input_shape_rejected(self):
        with pytest.raises(ArchError, match="input shape"):
            infer_shapes(parse_arch("relu\n"))

    def test_channel_mismatch_rejected_at_parse(self):
        with pytest.raises(ArchError, match="does not match"):
            parse_arch("input 3x8x8\nconv in=4 out=4 k=3\n")


class TestParamCount:
    def test_conv_example_against_enumeration(self):
        layer = parse_arch("conv in=3 out=16 k=3").layers[0]
        assert param_count(layer) == 448
        assert param_count(layer) == param_count_oracle(layer)

    def test_linear_example_against_enumeration(self):
        layer = parse_arch("linear in=10 out=3").layers[0]
        assert param_count(layer) == 33
        assert param_count(layer) == param_count_oracle(layer)

    def test_non_parametric_layers(self):
        for text in ("relu", "maxpool k=2", "avgpool k=2", "flatten"):
            assert param_count(parse_arch(text).layers[0]) == 0

    def test_reference_archs_match_enumeration(self):
        for arch in (vgg_tiny(), res_tiny()):
            for layer in infer_shapes(arch).layers:
                assert param_count(layer) == param_count_oracle(layer)


class TestApplyMask:
    def test_consumer_cin_shrinks_with_producer(self):
        text = """\
input 3x8x8
conv in=3 out=16 k=3 pad=1
relu
conv in=16 out=8 k=3 pad=1
"""
        arch = infer_shapes(parse_arch(text))
        pruned = apply_mask(arch, PruneMask({0: frozenset({0, 3, 7, 11})}))
        assert pruned.layers[0].c_out == 12
        assert pruned.layers[2].c_in == 12

    def test_empty_mask_is_identity(self):
        arch = infer_shapes(vgg_tiny())
        assert apply_mask(arch, PruneMask({})) is arch

    def test_masking_non_prunable_layer_rejected(self):
        arch = infer_shapes(res_tiny())
        with pytest.raises(ArchError, match="not prunable"):
            apply_mask(arch, PruneMask({3: frozenset({0})}))

    def test_mask_crosses_flatten_into_linear(self):
        arch = infer_shapes(vgg_tiny())
        pruned = apply_mask(arch, PruneMask({9: frozenset({1, 2})}))
        # conv 9 feeds a 1x1 avgpool output, so each filter is one feature
        assert pruned.layers[9].c_out == 62
        assert pruned.layers[13].c_in == 62

    def test_mask_crossing_flatten_scales_by_spatial_positions(self):
        text = """\
input 3x8x8
conv in=3 out=4 k=3 pad=1
flatten
linear in=256 out=2
"""
        arch = infer_shapes(parse_arch(text))
        pruned = apply_mask(arch, PruneMask({0: frozenset({0})}))
        assert pruned.layers[2].c_in == 192  # one filter = 8*8 flattened features

    def test_min_filters_floor_enforced(self):
        arch = infer_shapes(vgg_tiny())
        with pytest.raises(ArchError, match="min_filters"):
            apply_mask(arch, PruneMask({0: frozenset(range(16))}))

    def test_nonexistent_filter_rejected(self):
        arch = infer_shapes(vgg_tiny())
        with pytest.raises(ArchError, match="nonexistent filter"):
            apply_mask(arch, PruneMask({0: frozenset({16})}))

    def test_preserves_layer_count_kinds_and_validity(self):
        arch = infer_shapes(vgg_tiny())
        pruned = apply_mask(arch, PruneMask({0: frozenset({0}), 6: frozenset({1, 2})}))
        assert [l.kind for l in pruned.layers] == [l.kind for l in arch.layers]
        validate(pruned)

    def test_param_total_strictly_decreases(self):
        arch = infer_shapes(vgg_tiny())
        for mask in (
            PruneMask({0: frozenset({5})}),
            PruneMask({3: frozenset({0, 1, 2})}),
            PruneMask({9: frozenset(range(10))}),
        ):
            assert total_params(apply_mask(arch, mask)) < total_params(arch)

    def test_residual_arch_prunable_paths(self):
        arch = infer_shapes(res_tiny())
        pruned = apply_mask(arch, PruneMask({0: frozenset({0, 1}), 9: frozenset({7})}))
        assert pruned.layers[0].c_out == 14
        assert pruned.layers[3].c_in == 14
        assert pruned.layers[9].c_out == 63
        assert pruned.layers[13].c_in == 63
        validate(pruned)


def test_strip_inferred_recovers_parsed_form():
    arch = vgg_tiny()
    assert strip_inferred(infer_shapes(arch)) == arch
