"""Sliding-window multi-hypothesis reconstruction.

An N x N window moves across the image with step S; every window gets its own
block model, and each pixel's output is the uniform average of all window
reconstructions ("hypotheses") covering it.  S = N degenerates to the
non-overlapping block pipeline; S < N overlaps windows, which suppresses
blocking artifacts and averages out noise.  No padding is applied, so border
pixels collect fewer hypotheses than the interior.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .model import STEERED, ImageGrid
from .optimizer import OptimizerConfig, WindowModels, fit_windows

__all__ = [
    "SlidingConfig",
    "GdEstimator",
    "EncoderEstimator",
    "SweepResult",
    "sweep",
    "sweep_detailed",
    "hypothesis_counts",
    "coverage",
    "EstimationError",
]


class EstimationError(RuntimeError):
    pass


class WindowEstimator(Protocol):
    def estimate(self, windows: np.ndarray) -> WindowModels: ...


@dataclass(frozen=True)
class GdEstimator:
    """Per-window gradient-descent fitting."""

    kind: str = STEERED
    K: int = 4
    config: OptimizerConfig = field(default_factory=OptimizerConfig)
    workers: int = 1

    def estimate(self, windows: np.ndarray) -> WindowModels:
        models, _ = fit_windows(windows, self.kind, self.K, self.config, workers=self.workers)
        return models


@dataclass(frozen=True)
class EncoderEstimator:
    """Single-pass parameter prediction through a trained encoder network."""

    network: object

    def estimate(self, windows: np.ndarray) -> WindowModels:
        from .encoder import predict_windows

        return predict_windows(self.network, windows)


@dataclass(frozen=True)
class SlidingConfig:
    window: int = 8
    step: int = 1
    estimator: WindowEstimator | None = None

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if not (1 <= self.step <= self.window):
            raise ValueError("step must satisfy 1 <= step <= window")


def coverage(width: int, height: int, cfg: SlidingConfig):
    """Covered region of the sweep: window counts and center-crop offsets.

    The region spans window + step * (count - 1) pixels per axis, centered, so
    the final window ends exactly at the region edge.  With step == window this
    matches the block pipeline's center crop.
    """
    n, s = cfg.window, cfg.step
    if width < n or height < n:
        raise ValueError(f"image {width}x{height} smaller than one {n}x{n} window")
    nx = (width - n) // s + 1
    ny = (height - n) // s + 1
    cov_w = n + s * (nx - 1)
    cov_h = n + s * (ny - 1)
    ox = (width - cov_w) // 2
    oy = (height - cov_h) // 2
    return nx, ny, cov_w, cov_h, ox, oy


def hypothesis_counts(width: int, height: int, cfg: SlidingConfig) -> np.ndarray:
    """Per-pixel hypothesis counts over the covered region, shape (cov_h, cov_w).

    Pure function of the geometry; matches exactly the divisor grid used by
    :func:`sweep`.
    """
    n, s = cfg.window, cfg.step
    nx, ny, cov_w, cov_h, _, _ = coverage(width, height, cfg)
    row = np.zeros(cov_w, dtype=np.int64)
    for i in range(nx):
        row[i * s : i * s + n] += 1
    col = np.zeros(cov_h, dtype=np.int64)
    for j in range(ny):
        col[j * s : j * s + n] += 1
    return np.outer(col, row)


@dataclass(frozen=True)
class SweepResult:
    image: ImageGrid
    n_windows: int
    encode_seconds: float
    decode_seconds: float


def sweep_detailed(image: ImageGrid, cfg: SlidingConfig) -> SweepResult:
    """Run the sliding-window reconstruction, timing estimation and decoding."""
    if cfg.estimator is None:
        raise ValueError("SlidingConfig.estimator must be set")
    n, s = cfg.window, cfg.step
    nx, ny, cov_w, cov_h, ox, oy = coverage(image.width, image.height, cfg)

    view = sliding_window_view(image.pixels, (n, n))
    windows = np.ascontiguousarray(
        view[oy : oy + (ny - 1) * s + 1 : s, ox : ox + (nx - 1) * s + 1 : s].reshape(-1, n, n)
    )

    t0 = time.perf_counter()
    try:
        models = cfg.estimator.estimate(windows)
    except Exception as exc:
        raise EstimationError(
            f"window estimation failed for {nx}x{ny} windows (N={n}, S={s}, "
            f"origin=({ox},{oy})): {exc}"
        ) from exc
    t1 = time.perf_counter()

    recon = models.reconstruct(n, n)

    acc = np.zeros((cov_h, cov_w), dtype=np.float64)
    counts = hypothesis_counts(image.width, image.height, cfg)
    idx = 0
    for j in range(ny):
        y0 = j * s
        for i in range(nx):
            x0 = i * s
            acc[y0 : y0 + n, x0 : x0 + n] += recon[idx].reshape(n, n)
            idx += 1
    acc /= counts
    out = ImageGrid.from_array(acc, clip=True)
    t2 = time.perf_counter()
    return SweepResult(
        image=out, n_windows=nx * ny, encode_seconds=t1 - t0, decode_seconds=t2 - t1
    )


def sweep(image: ImageGrid, cfg: SlidingConfig) -> ImageGrid:
    return sweep_detailed(image, cfg).image
