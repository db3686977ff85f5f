"""Steered mixture-of-experts image modeling."""

from .model import (
    RADIAL,
    STEERED,
    BlockModel,
    ImageGrid,
    SteeredKernel,
    gating_weights,
    kernel_value,
    pixel_lattice,
    reconstruct,
    reconstruct_radial,
    resample,
)
from .optimizer import (
    FitResult,
    GradientBundle,
    OptimizerConfig,
    WindowModels,
    fit_block,
    fit_image,
    fit_windows,
    gradient,
    loss,
)
from .pipeline import (
    BlockPartition,
    NoiseSpec,
    add_speckle,
    ingest,
    partition,
    psnr,
    reassemble,
    save_png,
    ssim,
)
from .sliding import (
    EncoderEstimator,
    GdEstimator,
    SlidingConfig,
    hypothesis_counts,
    sweep,
    sweep_detailed,
)

__version__ = "0.1.0"
