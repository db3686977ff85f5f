"""Steered mixture-of-experts image model.

An image block is modeled as a softmax-gated mixture of K Gaussian kernels
with constant experts.  Each steered kernel carries a center mu in the unit
square, a lower-triangular Cholesky factor A = [[a11, 0], [a21, a22]] of the
inverse covariance, and an expert value m.  The reconstruction at a point x is

    y(x) = sum_i m_i * w_i(x),   w_i = softmax_i( -1/2 (x-mu_i)^T A_i A_i^T (x-mu_i) )

Radial models replace A with a single shared bandwidth B, so the gate exponent
becomes -B * ||x - mu_i||^2.

Everything in this module is pure and immutable; parameter fitting lives in
``smoe.optimizer``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SteeredKernel",
    "BlockModel",
    "ImageGrid",
    "kernel_value",
    "gating_weights",
    "reconstruct",
    "reconstruct_radial",
    "resample",
    "pixel_lattice",
]

RADIAL = "radial"
STEERED = "steered"


@dataclass(frozen=True)
class SteeredKernel:
    """One mixture component: center, Cholesky steering factor, expert value.

    ``chol`` holds (a11, a21, a22) of the lower-triangular factor A; the
    inverse covariance A @ A.T is positive semidefinite by construction.
    """

    mu: tuple[float, float]
    chol: tuple[float, float, float] = (1.0, 0.0, 1.0)
    expert: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mu", (float(self.mu[0]), float(self.mu[1])))
        object.__setattr__(
            self, "chol", (float(self.chol[0]), float(self.chol[1]), float(self.chol[2]))
        )
        object.__setattr__(self, "expert", float(self.expert))

    def steering_matrix(self) -> np.ndarray:
        a11, a21, a22 = self.chol
        return np.array([[a11, 0.0], [a21, a22]])


@dataclass(frozen=True)
class BlockModel:
    """K kernels plus the kernel-kind flag; radial models share one bandwidth."""

    kind: str
    kernels: tuple[SteeredKernel, ...]
    bandwidth: float = 0.0

    def __post_init__(self):
        if self.kind not in (RADIAL, STEERED):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        kernels = tuple(self.kernels)
        if len(kernels) < 1:
            raise ValueError("a block model needs at least one kernel")
        if self.kind == RADIAL and not self.bandwidth > 0:
            raise ValueError("radial models require bandwidth > 0")
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def K(self) -> int:
        return len(self.kernels)

    def param_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(mus (K,2), chols (K,3), experts (K,)) as float64 arrays."""
        mus = np.array([k.mu for k in self.kernels], dtype=np.float64)
        chols = np.array([k.chol for k in self.kernels], dtype=np.float64)
        experts = np.array([k.expert for k in self.kernels], dtype=np.float64)
        return mus, chols, experts


def _validate_grid(pixels: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(pixels, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"image grid must be 2-D and non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image grid contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image grid values must lie in [0, 1]")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ImageGrid:
    """2-D grayscale raster with values in [0, 1], row-major."""

    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", _validate_grid(self.pixels))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_array(cls, arr: np.ndarray, clip: bool = False) -> "ImageGrid":
        arr = np.asarray(arr, dtype=np.float64)
        if clip:
            arr = np.clip(arr, 0.0, 1.0)
        return cls(arr)


def pixel_lattice(width: int, height: int, dtype=np.float64) -> np.ndarray:
    """Pixel-center sample coordinates over [0,1]^2, row-major, shape (h*w, 2).

    Pixel (r, c) maps to ((c+0.5)/width, (r+0.5)/height) so samples never sit
    on the domain boundary.
    """
    cx = (np.arange(width, dtype=dtype) + dtype(0.5)) / dtype(width)
    cy = (np.arange(height, dtype=dtype) + dtype(0.5)) / dtype(height)
    xs = np.empty((height * width, 2), dtype=dtype)
    xs[:, 0] = np.tile(cx, height)
    xs[:, 1] = np.repeat(cy, width)
    return xs


# ---------------------------------------------------------------------------
# Batched evaluation core.
#
# Parameter batches are (B, K, 2) centers, (B, K, 3) Cholesky entries and
# (B, K) experts evaluated on a shared (P, 2) lattice.  All reductions over K
# are explicit Python loops over elementwise array ops, which keeps results
# bit-identical no matter how models are batched together.
# ---------------------------------------------------------------------------


def log_kernel_batch(mus, chols, xs, kind=STEERED, bandwidth=0.0, out=None):
    """Log kernel responses, shape (B, K, P); the softmax-gating logits."""
    B, K, _ = mus.shape
    P = xs.shape[0]
    dt = mus.dtype
    g = out if out is not None else np.empty((B, K, P), dtype=dt)
    px = xs[:, 0]
    py = xs[:, 1]
    for k in range(K):
        dx = px[None, :] - mus[:, k, 0, None]
        dy = py[None, :] - mus[:, k, 1, None]
        if kind == STEERED:
            u = chols[:, k, 0, None] * dx + chols[:, k, 1, None] * dy
            v = chols[:, k, 2, None] * dy
            np.multiply(u, u, out=u)
            u += v * v
            u *= dt.type(-0.5)
            g[:, k, :] = u
        else:
            np.multiply(dx, dx, out=dx)
            dx += dy * dy
            dx *= dt.type(-bandwidth)
            g[:, k, :] = dx
    return g


def softmax_gates(g):
    """Gating weights from log kernel responses; softmax over axis 1 of (B,K,P).

    Subtracts the per-point max before exponentiating so points far from every
    kernel never produce 0/0.
    """
    B, K, P = g.shape
    gmax = g[:, 0, :].copy()
    for k in range(1, K):
        np.maximum(gmax, g[:, k, :], out=gmax)
    w = np.empty_like(g)
    denom = np.zeros((B, P), dtype=g.dtype)
    for k in range(K):
        np.exp(g[:, k, :] - gmax, out=w[:, k, :])
        denom += w[:, k, :]
    for k in range(K):
        w[:, k, :] /= denom
    return w


def mixture_batch(mus, chols, experts, xs, kind=STEERED, bandwidth=0.0):
    """Reconstruction values for a batch of models, shape (B, P)."""
    g = log_kernel_batch(mus, chols, xs, kind=kind, bandwidth=bandwidth)
    w = softmax_gates(g)
    B, K, P = w.shape
    y = np.zeros((B, P), dtype=w.dtype)
    for k in range(K):
        y += experts[:, k, None] * w[:, k, :]
    return y


# ---------------------------------------------------------------------------
# Scalar/model-level operations.
# ---------------------------------------------------------------------------


def kernel_value(kernel: SteeredKernel, x) -> float:
    """exp(-1/2 (x-mu)^T A A^T (x-mu)); in (0, 1], exactly 1 at x = mu."""
    x = np.asarray(x, dtype=np.float64)
    dx = x[0] - kernel.mu[0]
    dy = x[1] - kernel.mu[1]
    a11, a21, a22 = kernel.chol
    u = a11 * dx + a21 * dy
    v = a22 * dy
    return float(np.exp(-0.5 * (u * u + v * v)))


def _model_batch(model: BlockModel):
    mus, chols, experts = model.param_arrays()
    return mus[None, :, :], chols[None, :, :], experts[None, :]


def gating_weights(model: BlockModel, x) -> np.ndarray:
    """Softmax gate vector at one point; entries in [0,1], summing to 1."""
    xs = np.asarray(x, dtype=np.float64).reshape(1, 2)
    mus, chols, experts = _model_batch(model)
    g = log_kernel_batch(mus, chols, xs, kind=model.kind, bandwidth=model.bandwidth)
    return softmax_gates(g)[0, :, 0]


def reconstruct(model: BlockModel, xs) -> np.ndarray:
    """Mixture reconstruction at the given (n, 2) sample points."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    mus, chols, experts = _model_batch(model)
    return mixture_batch(mus, chols, experts, xs, kind=model.kind, bandwidth=model.bandwidth)[0]


def reconstruct_radial(model: BlockModel, xs) -> np.ndarray:
    """Shared-bandwidth special case: gate exponents are -B * ||x - mu_i||^2."""
    if model.kind != RADIAL:
        raise ValueError("reconstruct_radial expects a radial model")
    if not model.bandwidth > 0:
        raise ValueError("radial bandwidth must be positive")
    return reconstruct(model, xs)


def resample(model: BlockModel, out_width: int, out_height: int) -> ImageGrid:
    """Evaluate the continuous model on a pixel-center lattice of any size."""
    if out_width < 1 or out_height < 1:
        raise ValueError("output dimensions must be >= 1")
    xs = pixel_lattice(out_width, out_height)
    values = reconstruct(model, xs).reshape(out_height, out_width)
    return ImageGrid.from_array(values, clip=True)
