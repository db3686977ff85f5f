"""SMW export: weight files and (block, latent) fixture sidecars.

The writer is this package's own implementation of the interchange format;
compatibility with the inference side is guarded by the architecture checksum
in the header and the round-trip parity tests.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import torch

from .arch import EncoderArch
from .model import EncoderDecoder

MAGIC = "SMOEW1"


def _write_container(path, arch: EncoderArch, tensors) -> None:
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


def export_weights(model: EncoderDecoder, path) -> list[tuple[str, np.ndarray]]:
    """Write the encoder weights atomically; returns the tensor list written."""
    arch = model.encoder.arch
    tensors = []
    for i, conv in enumerate(model.encoder.convs):
        tensors.append((f"conv{i}.weight", conv.conv.weight.detach().cpu().numpy()))
        tensors.append((f"conv{i}.bias", conv.conv.bias.detach().cpu().numpy()))
    for i, lin in enumerate(model.encoder.dense):
        tensors.append((f"dense{i}.weight", lin.weight.detach().cpu().numpy()))
        tensors.append((f"dense{i}.bias", lin.bias.detach().cpu().numpy()))
    _write_container(path, arch, tensors)
    return tensors


def export_fixtures(model: EncoderDecoder, blocks: np.ndarray, path) -> np.ndarray:
    """Run blocks through the trained encoder and persist (input, latent) pairs."""
    model.eval()
    with torch.no_grad():
        latents = model.encoder(torch.from_numpy(np.ascontiguousarray(blocks, np.float32)))
    latents = latents.cpu().numpy().astype(np.float32)
    tensors = []
    for i in range(blocks.shape[0]):
        tensors.append((f"fixture{i:04d}.input", blocks[i].astype(np.float32)))
        tensors.append((f"fixture{i:04d}.latent", latents[i]))
    _write_container(path, model.encoder.arch, tensors)
    return latents
