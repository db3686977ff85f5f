"""Block-model file format (SMOEM1).

One ASCII header line, then one line of six floats per kernel, blocks in
row-major order:

    SMOEM1 <kind> <K> <block_size> <blocks_x> <blocks_y> [bandwidth]
    <m> <mux> <muy> <a11> <a21> <a22>
    ...

Floats are written with 17 significant digits, so a save/load round trip
reproduces every parameter bit-exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import RADIAL, STEERED
from .optimizer import WindowModels

__all__ = ["ModelFileMeta", "save_model_file", "load_model_file", "ModelFileError"]


class ModelFileError(ValueError):
    pass


MAGIC = "SMOEM1"


@dataclass(frozen=True)
class ModelFileMeta:
    kind: str
    K: int
    block_size: int
    blocks_x: int
    blocks_y: int
    bandwidth: float = 0.0


def save_model_file(path, models: WindowModels, block_size: int, blocks_x: int, blocks_y: int):
    if len(models) != blocks_x * blocks_y:
        raise ModelFileError(
            f"{len(models)} models do not fill a {blocks_x}x{blocks_y} block grid"
        )
    K = models.K
    header = f"{MAGIC} {models.kind} {K} {block_size} {blocks_x} {blocks_y}"
    if models.kind == RADIAL:
        header += f" {models.bandwidth:.17g}"
    lines = [header]
    for i in range(len(models)):
        for k in range(K):
            lines.append(
                f"{models.experts[i, k]:.17g} "
                f"{models.mus[i, k, 0]:.17g} {models.mus[i, k, 1]:.17g} "
                f"{models.chols[i, k, 0]:.17g} {models.chols[i, k, 1]:.17g} "
                f"{models.chols[i, k, 2]:.17g}"
            )
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="ascii")
    os.replace(tmp, path)


def load_model_file(path) -> tuple[WindowModels, ModelFileMeta]:
    text = Path(path).read_text(encoding="ascii").splitlines()
    if not text:
        raise ModelFileError(f"{path}: empty file")
    head = text[0].split()
    if len(head) < 6 or head[0] != MAGIC:
        raise ModelFileError(f"{path}: bad header {text[0]!r}")
    kind = head[1]
    if kind not in (RADIAL, STEERED):
        raise ModelFileError(f"{path}: unknown kernel kind {kind!r}")
    try:
        K, block_size, bx, by = (int(v) for v in head[2:6])
        bandwidth = float(head[6]) if kind == RADIAL else 0.0
    except (ValueError, IndexError) as exc:
        raise ModelFileError(f"{path}: bad header {text[0]!r}") from exc
    n = bx * by
    body = [ln for ln in text[1:] if ln.strip()]
    if len(body) != n * K:
        raise ModelFileError(f"{path}: expected {n * K} kernel lines, found {len(body)}")
    values = np.array([[float(v) for v in ln.split()] for ln in body], dtype=np.float64)
    if values.shape[1] != 6:
        raise ModelFileError(f"{path}: kernel lines must hold 6 values")
    values = values.reshape(n, K, 6)
    models = WindowModels(
        kind=kind,
        mus=np.ascontiguousarray(values[:, :, 1:3]),
        chols=np.ascontiguousarray(values[:, :, 3:6]),
        experts=np.ascontiguousarray(values[:, :, 0]),
        bandwidth=bandwidth,
    )
    meta = ModelFileMeta(
        kind=kind, K=K, block_size=block_size, blocks_x=bx, blocks_y=by, bandwidth=bandwidth
    )
    return models, meta
