"""Command-line interface: fit, predict, ssmoe, resample, noise, metrics.

Every reporting command writes its reconstruction as PNG, its metrics as
one ``key: value`` per line (stdout and metrics.txt), and a rendered report
figure next to them.  Encoding (parameter estimation) and decoding
(reconstruction) wall times are reported separately.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from .model import RADIAL, STEERED, ImageGrid
from .modelfile import load_model_file, save_model_file
from .optimizer import OptimizerConfig, WindowModels, fit_windows
from .pipeline import add_speckle, ingest, partition, psnr, reassemble, save_png, ssim, NoiseSpec
from .report import save_comparison_figure, save_loss_figure
from .sliding import EncoderEstimator, GdEstimator, SlidingConfig, coverage, sweep_detailed

__all__ = ["main"]


def _fmt_value(key: str, value) -> str:
    if isinstance(value, float):
        if key.startswith("psnr") and math.isinf(value):
            return "identical"
        if key.endswith("seconds"):
            return f"{value:.3f}"
        return f"{value:.4f}"
    return str(value)


def _emit_metrics(metrics: dict, out_dir: Path | None):
    lines = [f"{k}: {_fmt_value(k, v)}" for k, v in metrics.items()]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out_dir is not None:
        (out_dir / "metrics.txt").write_text(text, encoding="ascii")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _quality(recon: ImageGrid, reference: ImageGrid) -> dict:
    return {"psnr_db": psnr(recon, reference), "ssim": ssim(recon, reference)}


def _crop(image: ImageGrid, ox: int, oy: int, w: int, h: int) -> ImageGrid:
    return ImageGrid.from_array(image.pixels[oy : oy + h, ox : ox + w])


def _assemble(recon_flat: np.ndarray, blocks_x: int, blocks_y: int, size: int) -> ImageGrid:
    out = np.empty((blocks_y * size, blocks_x * size), dtype=np.float64)
    for idx in range(recon_flat.shape[0]):
        j, i = divmod(idx, blocks_x)
        out[j * size : (j + 1) * size, i * size : (i + 1) * size] = np.clip(
            recon_flat[idx].reshape(size, size), 0.0, 1.0
        )
    return ImageGrid.from_array(out)


def _block_command(args, estimate, meta: dict) -> int:
    """Shared fit/predict path: partition, estimate, reconstruct, report."""
    out = _out_dir(args)
    image = ingest(args.input)
    block_size = meta["block_size"]
    blocks, part = partition(image, block_size)
    windows = np.stack([b.pixels for b in blocks], axis=0)

    t0 = time.perf_counter()
    models, traces = estimate(windows)
    t1 = time.perf_counter()
    recon_flat = models.reconstruct(block_size, block_size)
    recon = _assemble(recon_flat, part.blocks_x, part.blocks_y, block_size)
    t2 = time.perf_counter()

    reference = _crop(image, part.offset_x, part.offset_y, part.width, part.height)
    metrics = {
        "command": meta["command"],
        "input": str(args.input),
        "kind": models.kind,
        "kernels": models.K,
        "block_size": block_size,
        "blocks": len(models),
        **_quality(recon, reference),
        "encode_seconds": t1 - t0,
        "decode_seconds": t2 - t1,
    }

    save_model_file(out / "model.smoem", models, block_size, part.blocks_x, part.blocks_y)
    save_png(recon, out / "reconstruction.png")
    save_comparison_figure(
        out / "report.png",
        recon,
        original=reference,
        metrics={
            "psnr": _fmt_value("psnr_db", metrics["psnr_db"]),
            "ssim": _fmt_value("ssim", metrics["ssim"]),
        },
        title=f"{meta['command']} ({models.kind}, K={models.K}, {block_size}x{block_size})",
    )
    if traces is not None:
        save_loss_figure(out / "loss.png", traces, meta.get("iterations", traces.shape[1]))
    _emit_metrics(metrics, out)
    return 0


def _cmd_fit(args) -> int:
    config = OptimizerConfig(
        iterations=args.iterations,
        learning_rate=args.learning_rate,
        seed=args.seed,
        radial_bandwidth=args.bandwidth,
        record_trace=True,
    )

    def estimate(windows):
        return fit_windows(windows, args.kind, args.kernels, config, workers=args.workers)

    meta = {"command": "fit", "block_size": args.block_size, "iterations": args.iterations}
    return _block_command(args, estimate, meta)


def _cmd_predict(args) -> int:
    from .encoder import load_weights, predict_windows

    net = load_weights(args.weights)

    def estimate(windows):
        return predict_windows(net, windows), None

    meta = {"command": "predict", "block_size": net.input_block_size}
    return _block_command(args, estimate, meta)


def _cmd_ssmoe(args) -> int:
    out = _out_dir(args)
    image = ingest(args.input)
    if args.weights:
        from .encoder import load_weights

        estimator = EncoderEstimator(load_weights(args.weights))
        if estimator.network.input_block_size != args.window:
            raise ValueError(
                f"weight file expects {estimator.network.input_block_size}-pixel windows, "
                f"got --window {args.window}"
            )
        est_name = "encoder"
    else:
        config = OptimizerConfig(
            iterations=args.iterations,
            learning_rate=args.learning_rate,
            seed=args.seed,
            radial_bandwidth=args.bandwidth,
        )
        estimator = GdEstimator(
            kind=args.kind, K=args.kernels, config=config, workers=args.workers
        )
        est_name = "gd"

    cfg = SlidingConfig(window=args.window, step=args.step, estimator=estimator)
    result = sweep_detailed(image, cfg)
    _, _, cov_w, cov_h, ox, oy = coverage(image.width, image.height, cfg)
    reference = _crop(image, ox, oy, cov_w, cov_h)

    metrics = {
        "command": "ssmoe",
        "input": str(args.input),
        "estimator": est_name,
        "window": args.window,
        "step": args.step,
        "windows": result.n_windows,
        **_quality(result.image, reference),
        "encode_seconds": result.encode_seconds,
        "decode_seconds": result.decode_seconds,
    }
    save_png(result.image, out / "reconstruction.png")
    save_comparison_figure(
        out / "report.png",
        result.image,
        original=reference,
        metrics={
            "psnr": _fmt_value("psnr_db", metrics["psnr_db"]),
            "ssim": _fmt_value("ssim", metrics["ssim"]),
        },
        title=f"ssmoe N={args.window} S={args.step} ({est_name})",
    )
    _emit_metrics(metrics, out)
    return 0


def _cmd_resample(args) -> int:
    if args.scale < 1:
        raise ValueError("--scale must be >= 1")
    models, meta = load_model_file(args.model)
    size = meta.block_size * args.scale
    recon_flat = models.reconstruct(size, size)
    grid = _assemble(recon_flat, meta.blocks_x, meta.blocks_y, size)
    save_png(grid, args.out)
    sys.stdout.write(f"output: {args.out}\nwidth: {grid.width}\nheight: {grid.height}\n")
    return 0


def _cmd_noise(args) -> int:
    image = ingest(args.input)
    noisy = add_speckle(image, NoiseSpec(variance=args.variance, seed=args.seed))
    save_png(noisy, args.out)
    sys.stdout.write(
        f"output: {args.out}\nvariance: {args.variance}\nseed: {args.seed}\n"
        f"psnr_db: {_fmt_value('psnr_db', psnr(noisy, image))}\n"
    )
    return 0


def _cmd_metrics(args) -> int:
    a = ingest(args.image_a)
    b = ingest(args.image_b)
    metrics = {"image_a": str(args.image_a), "image_b": str(args.image_b), **_quality(a, b)}
    out = None
    if args.out_dir:
        out = _out_dir(args)
        save_comparison_figure(
            out / "report.png",
            b,
            original=a,
            metrics={
                "psnr": _fmt_value("psnr_db", metrics["psnr_db"]),
                "ssim": _fmt_value("ssim", metrics["ssim"]),
            },
            title="image_b vs image_a",
        )
    _emit_metrics(metrics, out)
    return 0


def _add_gd_flags(p: argparse.ArgumentParser):
    p.add_argument("--kind", choices=(STEERED, RADIAL), default=STEERED)
    p.add_argument("--kernels", type=int, default=4, help="kernels per block (K)")
    p.add_argument("--iterations", type=int, default=5000)
    p.add_argument("--learning-rate", type=float, default=5e-3)
    p.add_argument("--bandwidth", type=float, default=32.0, help="radial kernel bandwidth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1, help="parallel fitting processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smoe",
        description="Steered mixture-of-experts image modeling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="gradient-descent block fitting")
    p.add_argument("input")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--block-size", type=int, default=16)
    _add_gd_flags(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("predict", help="encoder-network parameter prediction")
    p.add_argument("input")
    p.add_argument("--weights", required=True, help="SMW weight file")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("ssmoe", help="sliding-window multi-hypothesis reconstruction")
    p.add_argument("input")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--window", type=int, default=8)
    p.add_argument("--step", type=int, default=1)
    p.add_argument("--weights", help="SMW weight file (omit to fit with GD)")
    _add_gd_flags(p)
    p.set_defaults(func=_cmd_ssmoe)

    p = sub.add_parser("resample", help="render a model file at any scale")
    p.add_argument("model")
    p.add_argument("--scale", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_resample)

    p = sub.add_parser("noise", help="add speckle noise")
    p.add_argument("input")
    p.add_argument("--variance", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_noise)

    p = sub.add_parser("metrics", help="PSNR/SSIM between two images")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_metrics)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
