"""Block-model fitting by Adam gradient descent with analytic gradients.

The loss is the mean squared error between a pixel block and the mixture
reconstruction on its pixel-center lattice.  Gradients with respect to every
expert value, kernel center, and Cholesky steering entry are computed in
closed form; the optimizer is a standard Adam loop with optional projection of
experts and centers back into [0, 1] after each step.

Fitting is vectorized over batches of independent blocks.  The batch is split
into fixed-size chunks (deterministic for a given block geometry), so results
never depend on how many worker processes are used.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .model import (
    RADIAL,
    STEERED,
    BlockModel,
    ImageGrid,
    SteeredKernel,
    mixture_batch,
    pixel_lattice,
)

__all__ = [
    "OptimizerConfig",
    "FitResult",
    "GradientBundle",
    "loss",
    "gradient",
    "fit_block",
    "fit_image",
    "fit_windows",
    "WindowModels",
    "initial_params",
]

# Chunk size targets ~0.5M batch*K*P scratch elements; fixed per block geometry
# so chunk boundaries (and therefore bitwise results) are worker-independent.
_CHUNK_ELEMS = 524_288

_TRACE_POINTS = 128


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam settings for block fitting.

    ``radial_bandwidth`` is the fixed shared bandwidth used for radial models
    and ``init_steering`` the diagonal scale of the initial Cholesky factor;
    the remaining fields are the usual Adam knobs.  ``seed`` is kept for
    interface stability; the grid initialization is fully deterministic, so it
    currently has no effect.
    """

    iterations: int = 5000
    learning_rate: float = 5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clamp_mu: bool = True
    seed: int = 0
    radial_bandwidth: float = 32.0
    init_steering: float = 8.0
    record_trace: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not self.radial_bandwidth > 0:
            raise ValueError("radial_bandwidth must be > 0")


@dataclass(frozen=True)
class FitResult:
    model: BlockModel
    final_loss: float
    loss_trace: tuple[float, ...] | None = None


@dataclass(frozen=True)
class GradientBundle:
    """Partial derivatives of the block MSE w.r.t. every model parameter.

    ``d_chol`` is None for radial models, whose bandwidth is a fixed
    hyperparameter rather than an optimized quantity.
    """

    d_expert: np.ndarray
    d_mu: np.ndarray
    d_chol: np.ndarray | None


@dataclass(frozen=True)
class WindowModels:
    """Fitted or predicted parameters for a batch of same-size windows."""

    kind: str
    mus: np.ndarray
    chols: np.ndarray
    experts: np.ndarray
    bandwidth: float = 0.0

    def __len__(self) -> int:
        return self.mus.shape[0]

    @property
    def K(self) -> int:
        return self.mus.shape[1]

    def reconstruct(self, width: int, height: int) -> np.ndarray:
        """Evaluate every model on the (height, width) pixel lattice; (B, P) float64."""
        xs = pixel_lattice(width, height)
        return mixture_batch(
            self.mus.astype(np.float64),
            self.chols.astype(np.float64),
            self.experts.astype(np.float64),
            xs,
            kind=self.kind,
            bandwidth=self.bandwidth,
        )

    def model_at(self, i: int) -> BlockModel:
        kernels = tuple(
            SteeredKernel(
                mu=(float(self.mus[i, k, 0]), float(self.mus[i, k, 1])),
                chol=(
                    float(self.chols[i, k, 0]),
                    float(self.chols[i, k, 1]),
                    float(self.chols[i, k, 2]),
                ),
                expert=float(self.experts[i, k]),
            )
            for k in range(self.K)
        )
        return BlockModel(kind=self.kind, kernels=kernels, bandwidth=self.bandwidth)


# ---------------------------------------------------------------------------
# Forward/backward core on parameter batches.
# ---------------------------------------------------------------------------


def _forward_backward(mus, chols, experts, targets, xs, kind, bandwidth, want_grads=True):
    """Loss and analytic gradients for a batch of models.

    mus (B,K,2), chols (B,K,3), experts (B,K), targets (B,P), xs (P,2); all the
    same float dtype, which the computation preserves.  Returns
    (loss (B,), d_expert (B,K), d_mu (B,K,2), d_chol (B,K,3) or None).
    """
    B, K, _ = mus.shape
    P = xs.shape[0]
    dt = targets.dtype
    px = xs[:, 0]
    py = xs[:, 1]

    dx = np.empty((B, K, P), dtype=dt)
    dy = np.empty((B, K, P), dtype=dt)
    w = np.empty((B, K, P), dtype=dt)
    if kind == STEERED:
        u = np.empty((B, K, P), dtype=dt)
        v = np.empty((B, K, P), dtype=dt)

    half = dt.type(0.5)
    for k in range(K):
        np.subtract(px[None, :], mus[:, k, 0, None], out=dx[:, k, :])
        np.subtract(py[None, :], mus[:, k, 1, None], out=dy[:, k, :])
        if kind == STEERED:
            np.multiply(chols[:, k, 0, None], dx[:, k, :], out=u[:, k, :])
            u[:, k, :] += chols[:, k, 1, None] * dy[:, k, :]
            np.multiply(chols[:, k, 2, None], dy[:, k, :], out=v[:, k, :])
            np.multiply(u[:, k, :], u[:, k, :], out=w[:, k, :])
            w[:, k, :] += v[:, k, :] * v[:, k, :]
            w[:, k, :] *= -half
        else:
            np.multiply(dx[:, k, :], dx[:, k, :], out=w[:, k, :])
            w[:, k, :] += dy[:, k, :] * dy[:, k, :]
            w[:, k, :] *= dt.type(-bandwidth)

    # softmax over K, in place on the logit buffer
    gmax = w[:, 0, :].copy()
    for k in range(1, K):
        np.maximum(gmax, w[:, k, :], out=gmax)
    denom = np.zeros((B, P), dtype=dt)
    for k in range(K):
        w[:, k, :] -= gmax
        np.exp(w[:, k, :], out=w[:, k, :])
        denom += w[:, k, :]
    for k in range(K):
        w[:, k, :] /= denom

    y = np.zeros((B, P), dtype=dt)
    for k in range(K):
        y += experts[:, k, None] * w[:, k, :]

    r = y - targets
    loss_val = np.mean(r * r, axis=1)
    if not want_grads:
        return loss_val, None, None, None

    r *= dt.type(2.0 / P)

    d_expert = np.empty((B, K), dtype=dt)
    d_mu = np.empty((B, K, 2), dtype=dt)
    d_chol = np.empty((B, K, 3), dtype=dt) if kind == STEERED else None

    s = np.empty((B, P), dtype=dt)
    t1 = np.empty((B, P), dtype=dt)
    for k in range(K):
        # dL/d expert_k and dL/d logit_k
        np.multiply(r, w[:, k, :], out=s)
        d_expert[:, k] = s.sum(axis=1)
        np.subtract(experts[:, k, None], y, out=t1)
        s *= t1
        if kind == STEERED:
            np.multiply(s, u[:, k, :], out=t1)  # s * u
            d_chol[:, k, 0] = -(t1 * dx[:, k, :]).sum(axis=1)
            d_chol[:, k, 1] = -(t1 * dy[:, k, :]).sum(axis=1)
            su_sum = t1.sum(axis=1)
            np.multiply(s, v[:, k, :], out=t1)  # s * v
            d_chol[:, k, 2] = -(t1 * dy[:, k, :]).sum(axis=1)
            sv_sum = t1.sum(axis=1)
            d_mu[:, k, 0] = chols[:, k, 0] * su_sum
            d_mu[:, k, 1] = chols[:, k, 1] * su_sum + chols[:, k, 2] * sv_sum
        else:
            two_b = dt.type(2.0 * bandwidth)
            np.multiply(s, dx[:, k, :], out=t1)
            d_mu[:, k, 0] = two_b * t1.sum(axis=1)
            np.multiply(s, dy[:, k, :], out=t1)
            d_mu[:, k, 1] = two_b * t1.sum(axis=1)

    return loss_val, d_expert, d_mu, d_chol


def loss(model: BlockModel, block: ImageGrid) -> float:
    """Mean squared error of the reconstruction over the block's pixel lattice."""
    target = block.pixels.reshape(-1)
    xs = pixel_lattice(block.width, block.height)
    mus, chols, experts = model.param_arrays()
    y = mixture_batch(
        mus[None], chols[None], experts[None], xs, kind=model.kind, bandwidth=model.bandwidth
    )[0]
    d = y - target
    return float(np.mean(d * d))


def gradient(model: BlockModel, block: ImageGrid) -> GradientBundle:
    """Exact partial derivatives of :func:`loss` at the given model."""
    target = block.pixels.reshape(1, -1)
    xs = pixel_lattice(block.width, block.height)
    mus, chols, experts = model.param_arrays()
    _, d_expert, d_mu, d_chol = _forward_backward(
        mus[None],
        chols[None],
        experts[None],
        target,
        xs,
        model.kind,
        model.bandwidth,
    )
    return GradientBundle(
        d_expert=d_expert[0],
        d_mu=d_mu[0],
        d_chol=None if d_chol is None else d_chol[0],
    )


# ---------------------------------------------------------------------------
# Initialization and the Adam loop.
# ---------------------------------------------------------------------------


def grid_centers(K: int) -> np.ndarray:
    """Uniform ceil(sqrt(K))-per-side grid of initial centers, row-major."""
    side = math.ceil(math.sqrt(K))
    centers = np.empty((K, 2), dtype=np.float64)
    for idx in range(K):
        row, col = divmod(idx, side)
        centers[idx, 0] = (col + 0.5) / side
        centers[idx, 1] = (row + 0.5) / side
    return centers


def initial_params(blocks: np.ndarray, kind: str, K: int, config: OptimizerConfig):
    """Grid-initialized parameter batch for (B, H, W) pixel blocks.

    Centers sit on a uniform grid, experts sample the block at the pixel
    nearest each center, and steering starts isotropic at ``init_steering``.
    """
    B, H, W = blocks.shape
    centers = grid_centers(K)
    cols = np.clip(np.rint(centers[:, 0] * W - 0.5).astype(int), 0, W - 1)
    rows = np.clip(np.rint(centers[:, 1] * H - 0.5).astype(int), 0, H - 1)

    mus = np.broadcast_to(centers[None], (B, K, 2)).copy()
    experts = blocks[:, rows, cols].copy()
    chols = np.zeros((B, K, 3), dtype=blocks.dtype)
    if kind == STEERED:
        chols[:, :, 0] = config.init_steering
        chols[:, :, 2] = config.init_steering
    return mus.astype(blocks.dtype), chols, experts


def _adam_update(param, grad, m1, m2, lr_t, beta1, beta2, eps):
    m1 *= beta1
    m1 += (1.0 - beta1) * grad
    m2 *= beta2
    m2 += (1.0 - beta2) * grad * grad
    param -= lr_t * m1 / (np.sqrt(m2) + eps)


def _fit_chunk(blocks: np.ndarray, kind: str, K: int, config: OptimizerConfig):
    """Adam-fit one chunk of (B, H, W) float32 blocks; returns best iterates.

    Tracks the best-loss iterate seen at every step (including the post-final
    step parameters) so late-stage oscillation cannot degrade the result.
    """
    dt = np.float32
    B, H, W = blocks.shape
    P = H * W
    xs = pixel_lattice(W, H, dtype=dt)
    targets = blocks.reshape(B, P)

    mus, chols, experts = initial_params(blocks, kind, K, config)
    params = [mus, experts] if kind == RADIAL else [mus, chols, experts]

    m1s = [np.zeros_like(p) for p in params]
    m2s = [np.zeros_like(p) for p in params]
    beta1 = dt(config.adam_beta1)
    beta2 = dt(config.adam_beta2)
    eps = dt(config.adam_eps)

    best_loss = np.full(B, np.inf, dtype=dt)
    best = [p.copy() for p in params]
    trace_stride = max(1, config.iterations // _TRACE_POINTS)
    traces = [] if config.record_trace else None

    def take_best(loss_val):
        better = loss_val < best_loss
        if better.any():
            best_loss[better] = loss_val[better]
            for b, p in zip(best, params):
                b[better] = p[better]

    for t in range(1, config.iterations + 1):
        loss_val, d_expert, d_mu, d_chol = _forward_backward(
            mus, chols, experts, targets, xs, kind, config.radial_bandwidth
        )
        take_best(loss_val)
        if traces is not None and (t - 1) % trace_stride == 0:
            traces.append(loss_val.astype(np.float64))

        grads = [d_mu, d_expert] if kind == RADIAL else [d_mu, d_chol, d_expert]
        # bias-corrected step size, computed in float64 for stable powers
        lr_t = dt(
            config.learning_rate
            * math.sqrt(1.0 - config.adam_beta2**t)
            / (1.0 - config.adam_beta1**t)
        )
        for p, g, m1, m2 in zip(params, grads, m1s, m2s):
            _adam_update(p, g, m1, m2, lr_t, beta1, beta2, eps)
        if config.clamp_mu:
            np.clip(mus, 0.0, 1.0, out=mus)
            np.clip(experts, 0.0, 1.0, out=experts)

    loss_val, _, _, _ = _forward_backward(
        mus, chols, experts, targets, xs, kind, config.radial_bandwidth, want_grads=False
    )
    take_best(loss_val)
    if traces is not None:
        traces.append(best_loss.astype(np.float64))

    if kind == RADIAL:
        best_mus, best_experts = best
        best_chols = np.zeros((B, K, 3), dtype=dt)
    else:
        best_mus, best_chols, best_experts = best
    trace_arr = np.stack(traces, axis=1) if traces else None  # (B, n_points)
    return best_mus, best_chols, best_experts, trace_arr


def chunk_rows(K: int, pixels_per_block: int) -> int:
    return max(1, _CHUNK_ELEMS // (K * pixels_per_block))


def _fit_chunk_job(args):
    blocks, kind, K, config = args
    return _fit_chunk(blocks, kind, K, config)


def fit_windows(
    windows: np.ndarray,
    kind: str,
    K: int,
    config: OptimizerConfig,
    workers: int = 1,
) -> tuple[WindowModels, np.ndarray | None]:
    """Fit every (B, H, W) window independently; returns models plus traces.

    Windows are processed in fixed-size chunks; with ``workers > 1`` the chunks
    run in separate processes and are merged in submission order, so the output
    is identical for any worker count.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if kind not in (RADIAL, STEERED):
        raise ValueError(f"unknown kernel kind {kind!r}")
    if windows.ndim != 3 or windows.shape[0] < 1 or min(windows.shape[1:]) < 1:
        raise ValueError(f"expected a non-empty (B, H, W) window batch, got {windows.shape}")

    blocks32 = np.ascontiguousarray(windows, dtype=np.float32)
    B, H, W = blocks32.shape
    rows = chunk_rows(K, H * W)
    chunks = [blocks32[i : i + rows] for i in range(0, B, rows)]

    if workers > 1 and len(chunks) > 1:
        jobs = [(c, kind, K, config) for c in chunks]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fit_chunk_job, jobs))
    else:
        results = [_fit_chunk(c, kind, K, config) for c in chunks]

    mus = np.concatenate([r[0] for r in results], axis=0)
    chols = np.concatenate([r[1] for r in results], axis=0)
    experts = np.concatenate([r[2] for r in results], axis=0)
    traces = (
        np.concatenate([r[3] for r in results], axis=0) if config.record_trace else None
    )
    models = WindowModels(
        kind=kind,
        mus=mus.astype(np.float64),
        chols=chols.astype(np.float64),
        experts=experts.astype(np.float64),
        bandwidth=config.radial_bandwidth if kind == RADIAL else 0.0,
    )
    return models, traces


def _exact_losses(models: WindowModels, windows: np.ndarray) -> np.ndarray:
    """Float64 MSE of each fitted model against its window (the returned loss)."""
    B, H, W = windows.shape
    recon = models.reconstruct(W, H)
    d = recon - windows.reshape(B, H * W)
    return np.mean(d * d, axis=1)


def fit_block(
    block: ImageGrid,
    kind: str = STEERED,
    K: int = 4,
    config: OptimizerConfig | None = None,
) -> FitResult:
    """Fit one block; returns the best-loss iterate found during optimization."""
    config = config or OptimizerConfig()
    windows = block.pixels[None]
    models, traces = fit_windows(windows, kind, K, config)
    final = float(_exact_losses(models, windows)[0])
    trace = tuple(traces[0].tolist()) if traces is not None else None
    return FitResult(model=models.model_at(0), final_loss=final, loss_trace=trace)


def fit_image(
    image: ImageGrid,
    block_size: int,
    kind: str = STEERED,
    K: int = 4,
    config: OptimizerConfig | None = None,
    workers: int = 1,
) -> tuple[list[FitResult], ImageGrid]:
    """Partition, fit every block independently, and reassemble.

    Returns one FitResult per block (row-major) plus the reconstructed image
    over the cropped region.
    """
    from .pipeline import partition, reassemble  # local import to avoid a cycle

    config = config or OptimizerConfig()
    blocks, part = partition(image, block_size)
    windows = np.stack([b.pixels for b in blocks], axis=0)
    models, traces = fit_windows(windows, kind, K, config, workers=workers)
    losses = _exact_losses(models, windows)

    results = []
    for i in range(len(models)):
        trace = tuple(traces[i].tolist()) if traces is not None else None
        results.append(
            FitResult(model=models.model_at(i), final_loss=float(losses[i]), loss_trace=trace)
        )

    recon = models.reconstruct(block_size, block_size).reshape(-1, block_size, block_size)
    recon_blocks = [ImageGrid.from_array(r, clip=True) for r in recon]
    return results, reassemble(recon_blocks, part)
