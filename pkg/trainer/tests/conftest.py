"""Trainer test fixtures: a desk-scale corpus written from bundled photos.

The evaluation image (the photographer) is deliberately excluded from the
training corpus.
"""

from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

_LUMA = (0.299, 0.587, 0.114)

CORPUS_NAMES = (
    "astronaut",
    "moon",
    "brick",
    "grass",
    "gravel",
    "immunohistochemistry",
    "coffee",
    "hubble_deep_field",
    "page",
    "text",
    "coins",
    "clock",
)


def gray01(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        arr = _LUMA[0] * arr[..., 0] + _LUMA[1] * arr[..., 1] + _LUMA[2] * arr[..., 2]
    return np.clip(arr / 255.0, 0.0, 1.0)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    import skimage.data as data

    root = tmp_path_factory.mktemp("corpus")
    for name in CORPUS_NAMES:
        arr = gray01(getattr(data, name)())
        Image.fromarray(np.rint(arr * 255).astype(np.uint8)).save(root / f"{name}.png")
    return root


@pytest.fixture(scope="session")
def natural_blocks():
    """A deterministic batch of 8x8 blocks from one photo, for overfit smokes."""
    import skimage.data as data

    from smoe_trainer.data import image_to_blocks

    blocks = image_to_blocks(gray01(data.moon()), 8, crop_size=None)
    rng = np.random.default_rng(11)
    return blocks[rng.choice(len(blocks), 64, replace=False)]
