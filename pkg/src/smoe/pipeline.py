"""Image ingestion, block partition/reassembly, speckle noise, and metrics.

Images are grayscale rasters normalized to [0, 1].  Color inputs are reduced
with BT.601 luma weights; 8-bit values divide by 255 and 16-bit by 65535.
Supported input formats are PNG and binary PGM (P5); outputs are 8-bit PNG.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.signal import convolve2d

from .model import ImageGrid

__all__ = [
    "BlockPartition",
    "NoiseSpec",
    "ingest",
    "save_png",
    "partition",
    "reassemble",
    "add_speckle",
    "psnr",
    "ssim",
    "center_crop",
]

_LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class BlockPartition:
    """Geometry of a block split: grid shape plus the center-crop offsets."""

    block_size: int
    blocks_x: int
    blocks_y: int
    offset_x: int
    offset_y: int

    @property
    def width(self) -> int:
        return self.blocks_x * self.block_size

    @property
    def height(self) -> int:
        return self.blocks_y * self.block_size


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "speckle"
    variance: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.kind != "speckle":
            raise ValueError(f"unsupported noise kind {self.kind!r}")
        if self.variance < 0:
            raise ValueError("noise variance must be >= 0")


# ---------------------------------------------------------------------------
# Raster I/O
# ---------------------------------------------------------------------------


def _read_pgm(data: bytes) -> np.ndarray:
    """Binary PGM (P5) reader returning float64 in [0, 1]."""
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM (P5) file")
    # header tokens: magic, width, height, maxval; '#' starts a comment
    tokens = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(data):
            raise ValueError("truncated PGM header")
        ch = data[pos : pos + 1]
        if ch == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(t) for t in tokens)
    if width < 1 or height < 1 or not (0 < maxval < 65536):
        raise ValueError(f"bad PGM dimensions {width}x{height} maxval={maxval}")
    count = width * height
    if maxval > 255:
        raw = np.frombuffer(data, dtype=">u2", count=count, offset=pos)
    else:
        raw = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos)
    if raw.size < count:
        raise ValueError("truncated PGM payload")
    return raw.reshape(height, width).astype(np.float64) / float(maxval)


def _pil_to_gray(img: Image.Image) -> np.ndarray:
    if img.mode in ("P", "PA"):
        img = img.convert("RGBA")
    mode = img.mode
    arr = np.asarray(img)
    if mode in ("I;16", "I;16B", "I;16L"):
        return arr.astype(np.float64) / 65535.0
    if mode == "I":
        return arr.astype(np.float64) / 65535.0
    if mode == "L":
        return arr.astype(np.float64) / 255.0
    if mode in ("RGB", "RGBA", "LA"):
        arr = arr.astype(np.float64) / 255.0
        if mode == "LA":
            return arr[..., 0]
        r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
        return _LUMA[0] * r + _LUMA[1] * g + _LUMA[2] * b
    raise ValueError(f"unsupported image mode {mode!r}")


def ingest(source) -> ImageGrid:
    """Load a PNG or binary PGM file (path or bytes) as a normalized grayscale grid."""
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        raise TypeError("ingest expects a path or raw bytes")

    if data.startswith(b"P5"):
        gray = _read_pgm(data)
    else:
        try:
            img = Image.open(io.BytesIO(data))
            img.load()
        except Exception as exc:
            raise ValueError(f"unsupported or corrupt raster file: {exc}") from exc
        if img.format not in ("PNG", "PPM", None):
            raise ValueError(f"unsupported raster format {img.format!r} (PNG or PGM expected)")
        gray = _pil_to_gray(img)
    return ImageGrid.from_array(np.clip(gray, 0.0, 1.0))


def save_png(grid: ImageGrid, path) -> None:
    """Write an 8-bit grayscale PNG: round(clamp(x, 0, 1) * 255)."""
    q = np.rint(np.clip(grid.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="L").save(path, format="PNG")


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------


def center_crop(image: ImageGrid, width: int, height: int) -> ImageGrid:
    ox = (image.width - width) // 2
    oy = (image.height - height) // 2
    if ox < 0 or oy < 0:
        raise ValueError("crop larger than image")
    return ImageGrid.from_array(image.pixels[oy : oy + height, ox : ox + width])


def partition(image: ImageGrid, block_size: int) -> tuple[list[ImageGrid], BlockPartition]:
    """Center-crop to whole blocks and split row-major into block_size squares."""
    if block_size < 2:
        raise ValueError("block_size must be >= 2")
    bx = image.width // block_size
    by = image.height // block_size
    if bx < 1 or by < 1:
        raise ValueError(
            f"image {image.width}x{image.height} smaller than one {block_size}x{block_size} block"
        )
    part = BlockPartition(
        block_size=block_size,
        blocks_x=bx,
        blocks_y=by,
        offset_x=(image.width - bx * block_size) // 2,
        offset_y=(image.height - by * block_size) // 2,
    )
    px = image.pixels
    blocks = []
    for j in range(by):
        y0 = part.offset_y + j * block_size
        for i in range(bx):
            x0 = part.offset_x + i * block_size
            blocks.append(ImageGrid.from_array(px[y0 : y0 + block_size, x0 : x0 + block_size]))
    return blocks, part


def reassemble(blocks, part: BlockPartition) -> ImageGrid:
    """Exact inverse of :func:`partition` over the cropped region."""
    n = part.blocks_x * part.blocks_y
    if len(blocks) != n:
        raise ValueError(f"expected {n} blocks, got {len(blocks)}")
    bs = part.block_size
    out = np.empty((part.height, part.width), dtype=np.float64)
    for idx, block in enumerate(blocks):
        if block.height != bs or block.width != bs:
            raise ValueError(
                f"block {idx} is {block.width}x{block.height}, expected {bs}x{bs}"
            )
        j, i = divmod(idx, part.blocks_x)
        out[j * bs : (j + 1) * bs, i * bs : (i + 1) * bs] = block.pixels
    return ImageGrid.from_array(out)


# ---------------------------------------------------------------------------
# Noise and quality metrics
# ---------------------------------------------------------------------------


def add_speckle(image: ImageGrid, spec: NoiseSpec) -> ImageGrid:
    """Signal-dependent speckle: y = clamp(x + x*n, 0, 1), n ~ N(0, variance).

    The noise term is additive in form but scales with intensity, the common
    toolbox convention for speckle; black pixels stay untouched.
    """
    rng = np.random.default_rng(spec.seed)
    n = rng.standard_normal(image.pixels.shape) * math.sqrt(spec.variance)
    noisy = image.pixels + image.pixels * n
    return ImageGrid.from_array(noisy, clip=True)


def psnr(a: ImageGrid, b: ImageGrid) -> float:
    """Peak signal-to-noise ratio in dB on the [0, 1] range; inf when identical."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"shape mismatch {a.pixels.shape} vs {b.pixels.shape}")
    d = a.pixels - b.pixels
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-0.5 * ((np.arange(size) - half) / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: ImageGrid, b: ImageGrid) -> float:
    """Mean single-scale SSIM, 11x11 Gaussian window sigma=1.5, K1=.01, K2=.03, L=1.

    Local statistics use valid-mode windows, so both dimensions must be at
    least 11 pixels.
    """
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"shape mismatch {a.pixels.shape} vs {b.pixels.shape}")
    if min(a.pixels.shape) < 11:
        raise ValueError("ssim needs images at least 11 pixels in each dimension")
    window = _gaussian_window()
    x = a.pixels
    y = b.pixels

    def filt(img):
        return convolve2d(img, window, mode="valid")

    mu_x = filt(x)
    mu_y = filt(y)
    var_x = filt(x * x) - mu_x * mu_x
    var_y = filt(y * y) - mu_y * mu_y
    cov = filt(x * y) - mu_x * mu_y
    c1 = 0.01**2
    c2 = 0.03**2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))
