"""Forward inference of the trained block encoder.

The network maps an N x N grayscale block to a 24-dimensional latent vector:
seven 3x3 same-padded conv layers (leading ones stride-2 until the spatial
size is 1x1), a flatten, then six dense layers with a linear 24-wide head.
The latent decodes into a steered 4-kernel block model: per kernel, sigmoid
maps the expert and center entries into (0, 1) while the three Cholesky
steering entries pass through unchanged.

All arithmetic is 32-bit floating point; convolutions run as im2col matrix
products batched over blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .model import STEERED, BlockModel, ImageGrid, SteeredKernel
from .optimizer import WindowModels
from .smw import (
    LATENT_DIM,
    LATENT_KERNELS,
    ArchSpec,
    SmwError,
    canonical_description,
    make_tag,
    read_smw,
)

__all__ = [
    "LayerSpec",
    "EncoderNetwork",
    "load_weights",
    "forward",
    "forward_batch",
    "predict_model",
    "predict_windows",
    "decode_latent",
]

_N_CONV = 7
_N_DENSE = 6
_FORWARD_CHUNK = 4096


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | dense
    in_dim: int
    out_dim: int
    stride: int = 1
    activation: str = "relu"  # relu | linear


@dataclass(frozen=True)
class EncoderNetwork:
    layers: tuple[LayerSpec, ...]
    weights: dict
    input_block_size: int
    arch: ArchSpec


def _expect(cond: bool, path, msg: str):
    if not cond:
        raise SmwError(f"{path}: {msg}")


def load_weights(path) -> EncoderNetwork:
    """Load and structurally validate an SMW weight file.

    Every tensor must be present with the shape implied by the architecture
    header, channel chains must be consistent, and the header tag must match
    the checksum of the canonical architecture description; any violation
    raises :class:`SmwError` naming the offending tensor.
    """
    arch, tensors = read_smw(path)
    weights = dict(tensors)
    _expect(len(weights) == len(tensors), path, "duplicate tensor names")
    _expect(
        len(tensors) == 2 * (_N_CONV + _N_DENSE),
        path,
        f"expected {2 * (_N_CONV + _N_DENSE)} tensors, found {len(tensors)}",
    )
    _expect(len(arch.strides) == _N_CONV, path, f"expected {_N_CONV} conv strides")
    _expect(all(s in (1, 2) for s in arch.strides), path, "conv strides must be 1 or 2")

    layers = []
    conv_channels = []
    in_ch = 1
    spatial = arch.block_size
    for i in range(_N_CONV):
        wname, bname = f"conv{i}.weight", f"conv{i}.bias"
        _expect(wname in weights and bname in weights, path, f"missing tensor {wname}")
        w, b = weights[wname], weights[bname]
        _expect(
            w.ndim == 4 and w.shape[1:] == (in_ch, 3, 3),
            path,
            f"tensor {wname} has shape {w.shape}, expected (*, {in_ch}, 3, 3)",
        )
        out_ch = w.shape[0]
        _expect(b.shape == (out_ch,), path, f"tensor {bname} has shape {b.shape}, expected ({out_ch},)")
        layers.append(LayerSpec("conv", in_ch, out_ch, stride=arch.strides[i]))
        conv_channels.append(out_ch)
        in_ch = out_ch
        spatial = ceil(spatial / arch.strides[i])

    in_dim = in_ch * spatial * spatial
    dense_dims = []
    for i in range(_N_DENSE):
        wname, bname = f"dense{i}.weight", f"dense{i}.bias"
        _expect(wname in weights and bname in weights, path, f"missing tensor {wname}")
        w, b = weights[wname], weights[bname]
        _expect(
            w.ndim == 2 and w.shape[1] == in_dim,
            path,
            f"tensor {wname} has shape {w.shape}, expected (*, {in_dim})",
        )
        out_dim = w.shape[0]
        _expect(b.shape == (out_dim,), path, f"tensor {bname} has shape {b.shape}, expected ({out_dim},)")
        act = "linear" if i == _N_DENSE - 1 else "relu"
        layers.append(LayerSpec("dense", in_dim, out_dim, activation=act))
        dense_dims.append(out_dim)
        in_dim = out_dim

    _expect(dense_dims[-1] == LATENT_DIM, path, f"latent head is {dense_dims[-1]}-wide, expected {LATENT_DIM}")
    expected_tag = make_tag(arch.block_size, arch.strides, tuple(conv_channels), tuple(dense_dims))
    if arch.tag != expected_tag:
        desc = canonical_description(
            arch.block_size, arch.strides, tuple(conv_channels), tuple(dense_dims)
        ).splitlines()[0]
        raise SmwError(
            f"{path}: architecture tag {arch.tag!r} does not match {expected_tag!r} "
            f"computed from the stored tensors ({desc})"
        )
    return EncoderNetwork(
        layers=tuple(layers),
        weights=weights,
        input_block_size=arch.block_size,
        arch=arch,
    )


def _conv2d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    """Batched 3x3 convolution with TF-style SAME padding (extra on bottom/right)."""
    B, C, H, W = x.shape
    if H == 1 and W == 1 and stride == 1:
        # SAME padding surrounds the single pixel with zeros: only the center
        # tap contributes, so the layer is a plain channel mix.
        y = x.reshape(B, C) @ w[:, :, 1, 1].T
        y += b
        return y.reshape(B, -1, 1, 1)
    out_h = ceil(H / stride)
    out_w = ceil(W / stride)
    pad_h = max((out_h - 1) * stride + 3 - H, 0)
    pad_w = max((out_w - 1) * stride + 3 - W, 0)
    pt, pl = pad_h // 2, pad_w // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pad_h - pt), (pl, pad_w - pl)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        B * out_h * out_w, C * 9
    )
    y = cols @ w.reshape(w.shape[0], C * 9).T
    y += b
    return np.ascontiguousarray(y.reshape(B, out_h, out_w, -1).transpose(0, 3, 1, 2))


def forward_batch(net: EncoderNetwork, blocks: np.ndarray) -> np.ndarray:
    """Latent vectors for a (B, N, N) block batch; returns (B, 24) float32."""
    n = net.input_block_size
    if blocks.ndim != 3 or blocks.shape[1:] != (n, n):
        raise ValueError(f"expected (B, {n}, {n}) blocks, got {blocks.shape}")
    x = np.ascontiguousarray(blocks, dtype=np.float32)[:, None, :, :]
    for i in range(_N_CONV):
        spec = net.layers[i]
        x = _conv2d_same(x, net.weights[f"conv{i}.weight"], net.weights[f"conv{i}.bias"], spec.stride)
        np.maximum(x, 0.0, out=x)
    x = x.reshape(x.shape[0], -1)
    for i in range(_N_DENSE):
        spec = net.layers[_N_CONV + i]
        x = x @ net.weights[f"dense{i}.weight"].T
        x += net.weights[f"dense{i}.bias"]
        if spec.activation == "relu":
            np.maximum(x, 0.0, out=x)
    return x


def forward(net: EncoderNetwork, block) -> np.ndarray:
    """Latent 24-vector for a single block (ImageGrid or (N, N) array)."""
    pixels = block.pixels if isinstance(block, ImageGrid) else np.asarray(block)
    return forward_batch(net, pixels[None])[0]


def decode_latent(latents: np.ndarray):
    """Map latent rows to parameter arrays: sigmoid on expert/center, raw steering.

    Accepts (..., 24) and returns float64 (mus (..., 4, 2), chols (..., 4, 3),
    experts (..., 4)).  Centers and experts land strictly inside (0, 1) up to
    floating-point underflow at extreme logits.
    """
    lat = np.asarray(latents, dtype=np.float32)
    if lat.shape[-1] != LATENT_DIM:
        raise ValueError(f"latent dimension {lat.shape[-1]} != {LATENT_DIM}")
    groups = lat.reshape(*lat.shape[:-1], LATENT_KERNELS, 6)
    bounded = expit(groups[..., :3])
    experts = bounded[..., 0].astype(np.float64)
    mus = bounded[..., 1:3].astype(np.float64)
    chols = groups[..., 3:6].astype(np.float64)
    return mus, chols, experts


def predict_windows(net: EncoderNetwork, windows: np.ndarray) -> WindowModels:
    """Predict steered block models for a (B, N, N) window batch, chunked."""
    B = windows.shape[0]
    lat = np.empty((B, LATENT_DIM), dtype=np.float32)
    for i in range(0, B, _FORWARD_CHUNK):
        lat[i : i + _FORWARD_CHUNK] = forward_batch(net, windows[i : i + _FORWARD_CHUNK])
    mus, chols, experts = decode_latent(lat)
    return WindowModels(kind=STEERED, mus=mus, chols=chols, experts=experts)


def predict_model(net: EncoderNetwork, block) -> BlockModel:
    """One-shot parameter prediction: block in, directly usable BlockModel out."""
    latent = forward(net, block)
    mus, chols, experts = decode_latent(latent[None])
    kernels = tuple(
        SteeredKernel(
            mu=(float(mus[0, k, 0]), float(mus[0, k, 1])),
            chol=(float(chols[0, k, 0]), float(chols[0, k, 1]), float(chols[0, k, 2])),
            expert=float(experts[0, k]),
        )
        for k in range(LATENT_KERNELS)
    )
    return BlockModel(kind=STEERED, kernels=kernels)
