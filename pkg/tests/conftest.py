"""Shared fixtures: named test images and random-model helpers.

The quality criteria reference the classic 512x512 test set (Cameraman,
Peppers, ...), which cannot be downloaded in this environment.  By default
each name maps to the closest locally bundled scikit-image photograph,
normalized exactly like real inputs.  Set SMOE_TEST_IMAGE_DIR to a directory
of <name>.png / <name>.pgm files to run against the genuine images instead.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from smoe.model import BlockModel, ImageGrid, SteeredKernel

TEST_IMAGE_NAMES = (
    "cameraman",
    "lena",
    "baboon",
    "bridge",
    "boats",
    "livingroom",
    "elaine",
    "peppers",
)

_LUMA = (0.299, 0.587, 0.114)


def _gray01(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3:
        arr = _LUMA[0] * arr[..., 0] + _LUMA[1] * arr[..., 1] + _LUMA[2] * arr[..., 2]
    return np.clip(arr / 255.0, 0.0, 1.0)


def _standin(name: str) -> np.ndarray:
    import skimage.data as data

    if name == "cameraman":
        return _gray01(data.camera())
    if name == "lena":
        return _gray01(data.astronaut())
    if name == "baboon":
        return _gray01(data.gravel())
    if name == "bridge":
        return _gray01(data.grass())
    if name == "boats":
        return _gray01(data.brick())
    if name == "livingroom":
        return _gray01(data.immunohistochemistry())
    if name == "elaine":
        return _gray01(data.moon())
    if name == "peppers":
        from skimage.transform import resize

        img = _gray01(data.coffee())  # 400x600; square crop around the cup, then 512x512
        img = img[:, 188:588]
        return np.clip(resize(img, (512, 512), anti_aliasing=True), 0.0, 1.0)
    raise KeyError(name)


@pytest.fixture(scope="session")
def test_image():
    """Callable: name -> 512x512 ImageGrid (genuine file if provided, else stand-in)."""
    cache: dict[str, ImageGrid] = {}
    override = os.environ.get("SMOE_TEST_IMAGE_DIR")

    def load(name: str) -> ImageGrid:
        if name not in cache:
            grid = None
            if override:
                from smoe.pipeline import ingest

                for ext in (".png", ".pgm"):
                    candidate = Path(override) / f"{name}{ext}"
                    if candidate.exists():
                        grid = ingest(candidate)
                        break
            if grid is None:
                grid = ImageGrid.from_array(_standin(name))
            cache[name] = grid
        return cache[name]

    return load


def random_block_model(rng: np.random.Generator, kind: str = "steered", K: int = 4,
                       steering_scale: float = 8.0, bandwidth: float = 32.0) -> BlockModel:
    kernels = tuple(
        SteeredKernel(
            mu=tuple(rng.uniform(0.05, 0.95, 2)),
            chol=tuple(rng.uniform(-steering_scale, steering_scale, 3)),
            expert=float(rng.uniform(0.0, 1.0)),
        )
        for _ in range(K)
    )
    return BlockModel(kind=kind, kernels=kernels, bandwidth=bandwidth if kind == "radial" else 0.0)
