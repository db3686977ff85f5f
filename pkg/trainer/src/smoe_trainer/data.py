"""Training data: image directory -> normalized grayscale block arrays."""

from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

_LUMA = (0.299, 0.587, 0.114)
_EXTENSIONS = (".png", ".jpg", ".jpeg")


def load_gray(path) -> np.ndarray:
    img = Image.open(path)
    img.load()
    if img.mode in ("P", "PA"):
        img = img.convert("RGBA")
    arr = np.asarray(img)
    if img.mode in ("I;16", "I"):
        return np.clip(arr.astype(np.float64) / 65535.0, 0.0, 1.0)
    arr = arr.astype(np.float64) / 255.0
    if arr.ndim == 3:
        arr = _LUMA[0] * arr[..., 0] + _LUMA[1] * arr[..., 1] + _LUMA[2] * arr[..., 2]
    return np.clip(arr, 0.0, 1.0)


def image_to_blocks(gray: np.ndarray, block_size: int, crop_size: int | None = 1024) -> np.ndarray:
    """Center-crop to whole blocks (at most crop_size) and split."""
    h, w = gray.shape
    ch = min(h, crop_size) if crop_size else h
    cw = min(w, crop_size) if crop_size else w
    ch -= ch % block_size
    cw -= cw % block_size
    if ch < block_size or cw < block_size:
        return np.empty((0, block_size, block_size), dtype=np.float32)
    oy = (h - ch) // 2
    ox = (w - cw) // 2
    crop = gray[oy : oy + ch, ox : ox + cw]
    blocks = crop.reshape(ch // block_size, block_size, cw // block_size, block_size)
    return blocks.transpose(0, 2, 1, 3).reshape(-1, block_size, block_size).astype(np.float32)


def prepare_dataset(
    root,
    block_size: int,
    crop_size: int | None = 1024,
    max_blocks: int | None = None,
    val_fraction: float = 0.05,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Scan a directory of PNG/JPEG images into (train, val) block arrays.

    Unreadable files are skipped (counted in the log); an empty result is an
    error.  The split is a seeded random partition, roughly ``val_fraction``
    of the blocks.
    """
    root = Path(root)
    paths = sorted(p for p in root.rglob("*") if p.suffix.lower() in _EXTENSIONS)
    chunks = []
    skipped = 0
    for p in paths:
        try:
            gray = load_gray(p)
        except Exception:
            skipped += 1
            continue
        blocks = image_to_blocks(gray, block_size, crop_size)
        if blocks.size:
            chunks.append(blocks)
    if skipped:
        log.warning("skipped %d unreadable images under %s", skipped, root)
    if not chunks:
        raise ValueError(f"no usable training images under {root}")
    blocks = np.concatenate(chunks, axis=0)

    rng = np.random.default_rng(seed)
    order = rng.permutation(blocks.shape[0])
    if max_blocks is not None:
        order = order[:max_blocks]
    n_val = max(1, int(math.floor(len(order) * val_fraction)))
    val_idx = order[:n_val]
    train_idx = order[n_val:]
    if train_idx.size == 0:
        raise ValueError("dataset too small for the requested split")
    return blocks[train_idx], blocks[val_idx]


def speckle(blocks: np.ndarray, variance: float, rng: np.random.Generator) -> np.ndarray:
    """Fresh signal-dependent noise: y = clamp(x + x n), n ~ N(0, variance)."""
    n = rng.standard_normal(blocks.shape).astype(np.float32) * np.float32(np.sqrt(variance))
    return np.clip(blocks + blocks * n, 0.0, 1.0)
