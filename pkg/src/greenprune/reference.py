"""Reference toy architectures: a plain 4-conv stack and a residual variant.

Both take 32x32 RGB inputs and end in a 64-dimensional feature vector for the
prediction heads. In the residual variant the two convs around the junction
are pinned non-prunable by the skip edge, leaving the first and last convs as
pruning targets.
"""

from __future__ import annotations

from .archspec import NetworkArch, parse_arch

VGG_TINY = """\
# plain 4-conv stack, 32x32 RGB input, 64-d features
input 3x32x32
conv in=3 out=16 k=3 stride=1 pad=1
relu
maxpool k=2 stride=2
conv in=16 out=32 k=3 stride=1 pad=1
relu
maxpool k=2 stride=2
conv in=32 out=32 k=3 stride=1 pad=1
relu
maxpool k=2 stride=2
conv in=32 out=64 k=3 stride=1 pad=1
relu
avgpool k=4 stride=4
flatten
linear in=64 out=64
relu
"""

RES_TINY = """\
# 4-conv stack with one residual junction, 32x32 RGB input, 64-d features
input 3x32x32
conv in=3 out=16 k=3 stride=1 pad=1
relu
maxpool k=2 stride=2
conv in=16 out=32 k=3 stride=1 pad=1
relu
conv in=32 out=32 k=3 stride=1 pad=1
residual-add
relu
maxpool k=2 stride=2
conv in=32 out=64 k=3 stride=1 pad=1
relu
avgpool k=8 stride=8
flatten
linear in=64 out=64
relu
skip from=3 to=6
"""

REFERENCE_ARCHS = {"vgg-tiny": VGG_TINY, "res-tiny": RES_TINY}


def vgg_tiny() -> NetworkArch:
    return parse_arch(VGG_TINY)


def res_tiny() -> NetworkArch:
    return parse_arch(RES_TINY)
