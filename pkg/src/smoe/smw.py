"""SMW weight-file format shared by the trainer and the inference engine.

Layout (bit-exact):

    SMOEW1\n
    ARCH <block_size> <comma-separated conv strides> <latent tag>\n
    <tensor name> <rank> <dim0> <dim1> ...\n      (one line per tensor)
    \n                                            (blank line ends the header)
    <raw little-endian IEEE-754 float32 payload, row-major, in header order>

Conv weights are stored [out_ch, in_ch, 3, 3], conv biases [out_ch], dense
weights [out_dim, in_dim], dense biases [out_dim].

The latent tag carries a CRC-32 of the canonical architecture description, so
a trainer whose idea of the network (stride schedule, widths, latent mapping)
drifted from this module cannot produce a file that still loads.
"""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass
from math import ceil
from pathlib import Path

import numpy as np

__all__ = [
    "SmwError",
    "ArchSpec",
    "CONV_CHANNELS",
    "DENSE_DIMS",
    "LATENT_DIM",
    "LATENT_KERNELS",
    "default_strides",
    "default_channels",
    "default_dense_dims",
    "canonical_description",
    "make_tag",
    "write_smw",
    "read_smw",
    "tensor_names",
    "write_fixtures",
    "read_fixtures",
]

MAGIC = "SMOEW1"

# Reference (full-scale) architecture: 7 convs then 6 dense layers, 24-dim head.
CONV_CHANNELS = (16, 32, 64, 128, 256, 512, 1024)
DENSE_DIMS = (1024, 512, 256, 128, 64, 24)
LATENT_DIM = 24
LATENT_KERNELS = 4
_LATENT_LINE = (
    "latent kernels=4 order=m,mux,muy,a11,a21,a22 "
    "map=sigmoid,sigmoid,sigmoid,identity,identity,identity"
)


class SmwError(ValueError):
    """Raised for any malformed, inconsistent, or truncated SMW file."""


def default_strides(block_size: int) -> tuple[int, ...]:
    """Stride schedule: leading stride-2 convs shrink block_size to 1x1."""
    n2 = block_size.bit_length() - 1
    if block_size < 2 or (1 << n2) != block_size or n2 > len(CONV_CHANNELS):
        raise SmwError(f"unsupported block size {block_size}")
    return (2,) * n2 + (1,) * (len(CONV_CHANNELS) - n2)


def default_channels(scale: int = 1) -> tuple[int, ...]:
    return tuple(max(1, c // scale) for c in CONV_CHANNELS)


def default_dense_dims(scale: int = 1) -> tuple[int, ...]:
    return tuple(max(1, d // scale) for d in DENSE_DIMS[:-1]) + (LATENT_DIM,)


def canonical_description(
    block_size: int,
    strides: tuple[int, ...],
    conv_channels: tuple[int, ...],
    dense_dims: tuple[int, ...],
) -> str:
    """Single source of truth for the network structure, hashed into the tag."""
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


def make_tag(
    block_size: int,
    strides: tuple[int, ...],
    conv_channels: tuple[int, ...],
    dense_dims: tuple[int, ...],
) -> str:
    desc = canonical_description(block_size, strides, conv_channels, dense_dims)
    return f"k4sig-{zlib.crc32(desc.encode()):08x}"


@dataclass(frozen=True)
class ArchSpec:
    block_size: int
    strides: tuple[int, ...]
    tag: str

    @classmethod
    def default(cls, block_size: int, width_scale: int = 1) -> "ArchSpec":
        strides = default_strides(block_size)
        tag = make_tag(
            block_size, strides, default_channels(width_scale), default_dense_dims(width_scale)
        )
        return cls(block_size=block_size, strides=strides, tag=tag)


def tensor_names(n_conv: int = 7, n_dense: int = 6) -> list[str]:
    names = []
    for i in range(n_conv):
        names += [f"conv{i}.weight", f"conv{i}.bias"]
    for i in range(n_dense):
        names += [f"dense{i}.weight", f"dense{i}.bias"]
    return names


def write_smw(path, arch: ArchSpec, tensors) -> None:
    """Write tensors (ordered (name, array) pairs) atomically in SMW format."""
    lines = [MAGIC, f"ARCH {arch.block_size} {','.join(map(str, arch.strides))} {arch.tag}"]
    payload = bytearray()
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        lines.append(f"{name} {arr.ndim} {' '.join(str(d) for d in arr.shape)}")
        payload += arr.tobytes()
    blob = ("\n".join(lines) + "\n\n").encode("ascii") + bytes(payload)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def _parse_header(data: bytes, path) -> tuple[ArchSpec, list[tuple[str, tuple[int, ...]]], int]:
    end = data.find(b"\n\n")
    if end < 0:
        raise SmwError(f"{path}: missing blank-line header terminator")
    try:
        header = data[:end].decode("ascii")
    except UnicodeDecodeError as exc:
        raise SmwError(f"{path}: non-ASCII header") from exc
    lines = header.split("\n")
    if lines[0] != MAGIC:
        raise SmwError(f"{path}: bad magic {lines[0]!r}, expected {MAGIC!r}")
    if len(lines) < 2 or not lines[1].startswith("ARCH "):
        raise SmwError(f"{path}: missing ARCH line")
    fields = lines[1].split()
    if len(fields) != 4:
        raise SmwError(f"{path}: malformed ARCH line {lines[1]!r}")
    try:
        block_size = int(fields[1])
        strides = tuple(int(s) for s in fields[2].split(","))
    except ValueError as exc:
        raise SmwError(f"{path}: malformed ARCH line {lines[1]!r}") from exc
    arch = ArchSpec(block_size=block_size, strides=strides, tag=fields[3])

    specs = []
    for line in lines[2:]:
        parts = line.split()
        if len(parts) < 2:
            raise SmwError(f"{path}: malformed tensor line {line!r}")
        name = parts[0]
        try:
            rank = int(parts[1])
            dims = tuple(int(d) for d in parts[2:])
        except ValueError as exc:
            raise SmwError(f"{path}: malformed tensor line {line!r}") from exc
        if rank != len(dims) or any(d < 1 for d in dims):
            raise SmwError(f"{path}: tensor {name!r} has rank {rank} but dims {dims}")
        specs.append((name, dims))
    return arch, specs, end + 2


def read_smw(path) -> tuple[ArchSpec, list[tuple[str, np.ndarray]]]:
    """Read an SMW file; all structural problems raise :class:`SmwError`."""
    data = Path(path).read_bytes()
    arch, specs, offset = _parse_header(data, path)
    expected = sum(int(np.prod(dims)) for _, dims in specs) * 4
    actual = len(data) - offset
    if actual != expected:
        raise SmwError(f"{path}: payload holds {actual} bytes, header implies {expected}")
    tensors = []
    pos = offset
    for name, dims in specs:
        nbytes = int(np.prod(dims)) * 4
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims)
        if np.isnan(arr).any():
            raise SmwError(f"{path}: tensor {name!r} contains NaN values")
        tensors.append((name, arr))
        pos += nbytes
    return arch, tensors


# ---------------------------------------------------------------------------
# Fixture sidecars: (input block, expected latent) pairs in the same container.
# ---------------------------------------------------------------------------


def write_fixtures(path, arch: ArchSpec, pairs) -> None:
    tensors = []
    for i, (block, latent) in enumerate(pairs):
        tensors.append((f"fixture{i:04d}.input", np.asarray(block, dtype=np.float32)))
        tensors.append((f"fixture{i:04d}.latent", np.asarray(latent, dtype=np.float32)))
    write_smw(path, arch, tensors)


def read_fixtures(path) -> tuple[ArchSpec, list[tuple[np.ndarray, np.ndarray]]]:
    arch, tensors = read_smw(path)
    by_name = dict(tensors)
    if len(by_name) != len(tensors):
        raise SmwError(f"{path}: duplicate tensor names")
    pairs = []
    for i in range(len(tensors) // 2):
        try:
            block = by_name[f"fixture{i:04d}.input"]
            latent = by_name[f"fixture{i:04d}.latent"]
        except KeyError as exc:
            raise SmwError(f"{path}: missing fixture tensor {exc}") from exc
        pairs.append((block, latent))
    return arch, pairs
