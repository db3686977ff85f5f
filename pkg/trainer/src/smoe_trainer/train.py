"""Training loop: Adam on block MSE with the decoder in the graph.

Noise-robust training overlays fresh speckle noise on the input blocks every
epoch while the loss always targets the clean block.  Checkpoints are written
per epoch, so interrupted runs resume where they stopped.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .arch import EncoderArch
from .data import prepare_dataset, speckle
from .export import export_fixtures, export_weights
from .model import EncoderDecoder, build_model

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    dataset_root: str = ""
    block_size: int = 16
    epochs: int = 30
    batch: int = 64
    learning_rate: float = 5e-5
    noise_variance: float = 0.0  # > 0 trains the noise-robust variant
    width_scale: int = 1
    crop_size: int = 1024
    max_blocks: int | None = None
    val_fraction: float = 0.05
    seed: int = 0
    out_dir: str = "train_out"
    fixture_count: int = 120
    resume: bool = False
    # Desk-scale warmup: regress per-block latents fitted by gradient descent
    # through the decoder before switching to the end-to-end reconstruction
    # loss.  0 disables the phase (the plain protocol).
    distill_epochs: int = 0
    distill_fit_steps: int = 250
    distill_lr: float = 1e-3

    def validate(self):
        if self.block_size not in (8, 16):
            raise ValueError("block_size must be 8 or 16")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")


@dataclass
class TrainReport:
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    distill_latent_mse: list[float] = field(default_factory=list)
    wall_seconds: float = 0.0
    weights_path: str = ""
    fixtures_path: str = ""


def validation_mse(model: EncoderDecoder, blocks: np.ndarray, batch: int = 256) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for i in range(0, blocks.shape[0], batch):
            chunk = torch.from_numpy(np.ascontiguousarray(blocks[i : i + batch], np.float32))
            recon = model(chunk)
            total += float(((recon - chunk.flatten(1)) ** 2).sum())
    return total / (blocks.shape[0] * blocks.shape[1] * blocks.shape[2])


def fit_latent_targets(
    decoder,
    blocks: np.ndarray,
    steps: int = 250,
    learning_rate: float = 0.1,
    chunk: int = 8192,
) -> np.ndarray:
    """Per-block latent vectors optimized directly through the decoder.

    Every block gets its own 24-vector, initialized on the kernel grid and
    Adam-fitted against that block alone: the amortization-free upper bound the
    encoder is distilled toward at desk scale.
    """
    from .arch import LATENT_DIM, LATENT_KERNELS

    grid = ((0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75))
    init = torch.zeros(LATENT_DIM)
    for k, (cx, cy) in enumerate(grid[:LATENT_KERNELS]):
        init[6 * k + 1] = torch.logit(torch.tensor(cx))
        init[6 * k + 2] = torch.logit(torch.tensor(cy))
        init[6 * k + 3] = 8.0
        init[6 * k + 5] = 8.0

    out = np.empty((blocks.shape[0], LATENT_DIM), dtype=np.float32)
    for start in range(0, blocks.shape[0], chunk):
        part = torch.from_numpy(np.ascontiguousarray(blocks[start : start + chunk], np.float32))
        target = part.flatten(1)
        latent = init.repeat(len(part), 1).clone().requires_grad_(True)
        opt = torch.optim.Adam([latent], lr=learning_rate)
        for _ in range(steps):
            opt.zero_grad()
            loss = torch.mean((decoder(latent) - target) ** 2)
            loss.backward()
            opt.step()
        out[start : start + chunk] = latent.detach().numpy()
    return out


def overfit_steps(model: EncoderDecoder, blocks: np.ndarray, steps: int,
                  learning_rate: float = 1e-3) -> list[float]:
    """Repeatedly fit one fixed batch; returns the per-step loss curve."""
    opt = torch.optim.Adam(model.parameters(), lr=learning_rate)
    x = torch.from_numpy(np.ascontiguousarray(blocks, np.float32))
    target = x.flatten(1)
    losses = []
    model.train()
    for _ in range(steps):
        opt.zero_grad()
        out = model(x)
        loss = torch.mean((out - target) ** 2)
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return losses


def _checkpoint_path(out_dir: Path) -> Path:
    return out_dir / "checkpoint.pt"


def train(config: TrainConfig) -> TrainReport:
    config.validate()
    torch.manual_seed(config.seed)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_blocks, val_blocks = prepare_dataset(
        config.dataset_root,
        config.block_size,
        crop_size=config.crop_size or None,
        max_blocks=config.max_blocks,
        val_fraction=config.val_fraction,
        seed=config.seed,
    )
    log.info("dataset: %d train blocks, %d validation blocks", len(train_blocks), len(val_blocks))

    model = build_model(config.block_size, config.width_scale)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    report = TrainReport()
    start_epoch = 0

    ckpt_path = _checkpoint_path(out_dir)
    if config.resume and ckpt_path.exists():
        state = torch.load(ckpt_path, weights_only=False)
        model.load_state_dict(state["model"])
        opt.load_state_dict(state["optimizer"])
        start_epoch = state["epoch"]
        report.train_mse = state["train_mse"]
        report.val_mse = state["val_mse"]
        log.info("resumed from epoch %d", start_epoch)

    t0 = time.perf_counter()
    n = train_blocks.shape[0]

    if config.distill_epochs > 0 and start_epoch == 0:
        log.info("distillation warmup: fitting %d latent targets", n)
        targets = fit_latent_targets(model.decoder, train_blocks, steps=config.distill_fit_steps)
        distill_opt = torch.optim.Adam(model.parameters(), lr=config.distill_lr)
        target_t = torch.from_numpy(targets)
        for epoch in range(config.distill_epochs):
            model.train()
            rng = np.random.default_rng(config.seed * 99_991 + epoch)
            order = rng.permutation(n)
            phase_loss = 0.0
            seen = 0
            for start in range(0, n, config.batch):
                idx = order[start : start + config.batch]
                clean = train_blocks[idx]
                inputs = (
                    speckle(clean, config.noise_variance, rng)
                    if config.noise_variance
                    else clean
                )
                x = torch.from_numpy(np.ascontiguousarray(inputs, np.float32))
                distill_opt.zero_grad()
                loss = torch.mean((model.encoder(x) - target_t[idx]) ** 2)
                if not torch.isfinite(loss):
                    raise RuntimeError(
                        f"training diverged: non-finite loss at distill epoch {epoch}, "
                        f"batch {start // config.batch}"
                    )
                loss.backward()
                distill_opt.step()
                phase_loss += loss.item() * len(idx)
                seen += len(idx)
            report.distill_latent_mse.append(phase_loss / seen)
            log.info(
                "distill epoch %d/%d: latent mse %.3e",
                epoch + 1, config.distill_epochs, report.distill_latent_mse[-1],
            )

    for epoch in range(start_epoch, config.epochs):
        model.train()
        rng = np.random.default_rng(config.seed * 100_003 + epoch)
        order = rng.permutation(n)
        epoch_loss = 0.0
        seen = 0
        for start in range(0, n, config.batch):
            idx = order[start : start + config.batch]
            clean = train_blocks[idx]
            inputs = speckle(clean, config.noise_variance, rng) if config.noise_variance else clean
            x = torch.from_numpy(np.ascontiguousarray(inputs, np.float32))
            target = torch.from_numpy(np.ascontiguousarray(clean, np.float32)).flatten(1)
            opt.zero_grad()
            loss = torch.mean((model(x) - target) ** 2)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"batch {start // config.batch}"
                )
            loss.backward()
            opt.step()
            epoch_loss += loss.item() * len(idx)
            seen += len(idx)
        report.train_mse.append(epoch_loss / seen)
        report.val_mse.append(validation_mse(model, val_blocks))
        log.info(
            "epoch %d/%d: train %.3e val %.3e",
            epoch + 1, config.epochs, report.train_mse[-1], report.val_mse[-1],
        )
        torch.save(
            {
                "model": model.state_dict(),
                "optimizer": opt.state_dict(),
                "epoch": epoch + 1,
                "train_mse": report.train_mse,
                "val_mse": report.val_mse,
            },
            ckpt_path,
        )

    report.wall_seconds = time.perf_counter() - t0

    weights_path = out_dir / f"encoder_{config.block_size}.smw"
    export_weights(model, weights_path)
    report.weights_path = str(weights_path)

    fixtures_path = out_dir / f"fixtures_{config.block_size}.smw"
    n_fix = min(config.fixture_count, len(val_blocks))
    export_fixtures(model, val_blocks[:n_fix], fixtures_path)
    report.fixtures_path = str(fixtures_path)
    return report
