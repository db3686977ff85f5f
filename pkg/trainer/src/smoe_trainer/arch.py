"""Canonical encoder architecture shared with the inference side.

The SMW header embeds a CRC-32 of this description; the inference loader
recomputes it from its own copy of the definition, so any drift between the
two packages fails loudly at load time instead of silently mispredicting.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from math import ceil

CONV_CHANNELS = (16, 32, 64, 128, 256, 512, 1024)
DENSE_DIMS = (1024, 512, 256, 128, 64, 24)
LATENT_DIM = 24
LATENT_KERNELS = 4
_LATENT_LINE = (
    "latent kernels=4 order=m,mux,muy,a11,a21,a22 "
    "map=sigmoid,sigmoid,sigmoid,identity,identity,identity"
)


def default_strides(block_size: int) -> tuple[int, ...]:
    n2 = block_size.bit_length() - 1
    if block_size < 2 or (1 << n2) != block_size or n2 > len(CONV_CHANNELS):
        raise ValueError(f"unsupported block size {block_size}")
    return (2,) * n2 + (1,) * (len(CONV_CHANNELS) - n2)


def scaled_channels(width_scale: int = 1) -> tuple[int, ...]:
    return tuple(max(1, c // width_scale) for c in CONV_CHANNELS)


def scaled_dense_dims(width_scale: int = 1) -> tuple[int, ...]:
    return tuple(max(1, d // width_scale) for d in DENSE_DIMS[:-1]) + (LATENT_DIM,)


def canonical_description(block_size, strides, conv_channels, dense_dims) -> str:
    lines = [f"smoe-encoder v1 block={block_size} input=1x{block_size}x{block_size}"]
    spatial = block_size
    for i, (out_ch, stride) in enumerate(zip(conv_channels, strides)):
        lines.append(f"conv{i} out={out_ch} kernel=3x3 pad=tf-same stride={stride} act=relu")
        spatial = ceil(spatial / stride)
    flat = conv_channels[-1] * spatial * spatial
    lines.append(f"flatten {flat}")
    for i, out_dim in enumerate(dense_dims):
        act = "linear" if i == len(dense_dims) - 1 else "relu"
        lines.append(f"dense{i} out={out_dim} act={act}")
    lines.append(_LATENT_LINE)
    return "\n".join(lines)


def make_tag(block_size, strides, conv_channels, dense_dims) -> str:
    desc = canonical_description(block_size, strides, conv_channels, dense_dims)
    return f"k4sig-{zlib.crc32(desc.encode()):08x}"


@dataclass(frozen=True)
class EncoderArch:
    block_size: int
    width_scale: int = 1

    @property
    def strides(self) -> tuple[int, ...]:
        return default_strides(self.block_size)

    @property
    def conv_channels(self) -> tuple[int, ...]:
        return scaled_channels(self.width_scale)

    @property
    def dense_dims(self) -> tuple[int, ...]:
        return scaled_dense_dims(self.width_scale)

    @property
    def tag(self) -> str:
        return make_tag(self.block_size, self.strides, self.conv_channels, self.dense_dims)

    def trainable_parameters(self) -> int:
        total = 0
        in_ch = 1
        spatial = self.block_size
        for out_ch, stride in zip(self.conv_channels, self.strides):
            total += out_ch * in_ch * 9 + out_ch
            in_ch = out_ch
            spatial = ceil(spatial / stride)
        in_dim = in_ch * spatial * spatial
        for out_dim in self.dense_dims:
            total += out_dim * in_dim + out_dim
            in_dim = out_dim
        return total
