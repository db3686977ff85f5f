"""Trainable encoder network coupled to the parameter-free mixture decoder.

The encoder follows the canonical architecture (see ``arch``); the decoder
implements the steered-mixture reconstruction differentiably with zero
trainable parameters, so gradients flow from the block reconstruction error
straight into the latent parameter predictions.
"""

from __future__ import annotations

from math import ceil

import torch
import torch.nn as nn
import torch.nn.functional as F

from .arch import LATENT_DIM, LATENT_KERNELS, EncoderArch


class SamePadConv(nn.Module):
    """3x3 conv with TF-style SAME padding (extra on bottom/right)."""

    def __init__(self, in_ch: int, out_ch: int, stride: int, in_size: int):
        super().__init__()
        out_size = ceil(in_size / stride)
        pad = max((out_size - 1) * stride + 3 - in_size, 0)
        before, after = pad // 2, pad - pad // 2
        self.pad = (before, after, before, after)  # left, right, top, bottom
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=0)
        self.out_size = out_size
        self._init_effective_fanin(in_ch, in_size, stride, out_size)

    def _init_effective_fanin(self, in_ch, in_size, stride, out_size):
        # At small spatial sizes most of the 3x3 window sees zero padding (at
        # 1x1 only the center tap carries data), so standard fan-in scaling
        # shrinks activations ~9x per layer and the 13-layer stack never
        # trains.  Scale by the average number of taps that actually overlap
        # the input instead.
        ones = torch.ones(1, 1, in_size, in_size)
        coverage = F.conv2d(
            F.pad(ones, self.pad), torch.ones(1, 1, 3, 3), stride=stride
        )
        eff_taps = float(coverage.mean())
        std = (2.0 / (in_ch * eff_taps)) ** 0.5
        with torch.no_grad():
            self.conv.weight.normal_(0.0, std)
            self.conv.bias.zero_()

    def forward(self, x):
        return self.conv(F.pad(x, self.pad))


class Encoder(nn.Module):
    def __init__(self, arch: EncoderArch):
        super().__init__()
        self.arch = arch
        convs = []
        in_ch = 1
        size = arch.block_size
        for out_ch, stride in zip(arch.conv_channels, arch.strides):
            layer = SamePadConv(in_ch, out_ch, stride, size)
            convs.append(layer)
            in_ch = out_ch
            size = layer.out_size
        self.convs = nn.ModuleList(convs)
        dense = []
        in_dim = in_ch * size * size
        for out_dim in arch.dense_dims:
            dense.append(nn.Linear(in_dim, out_dim))
            in_dim = out_dim
        self.dense = nn.ModuleList(dense)
        for lin in self.dense[:-1]:
            nn.init.kaiming_normal_(lin.weight, nonlinearity="relu")
            nn.init.zeros_(lin.bias)
        nn.init.xavier_uniform_(self.dense[-1].weight)
        self._init_latent_bias()

    def _init_latent_bias(self):
        """Start the predicted kernels on a 2x2 grid with isotropic steering.

        With a random head every kernel decodes to the block center with flat
        gates; all experts then chase the block mean and the gate gradients
        vanish (a symmetric saddle).  Seeding the head bias with the same grid
        layout the iterative optimizer starts from breaks the tie.
        """
        grid = ((0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75))
        logit = lambda p: float(torch.logit(torch.tensor(p)))
        bias = self.dense[-1].bias
        with torch.no_grad():
            for k, (cx, cy) in enumerate(grid):
                bias[6 * k + 0] = 0.0
                bias[6 * k + 1] = logit(cx)
                bias[6 * k + 2] = logit(cy)
                bias[6 * k + 3] = 8.0
                bias[6 * k + 4] = 0.0
                bias[6 * k + 5] = 8.0

    def forward(self, blocks: torch.Tensor) -> torch.Tensor:
        """(B, N, N) pixel blocks -> (B, 24) latent vectors."""
        x = blocks.unsqueeze(1)
        for conv in self.convs:
            x = F.relu(conv(x))
        x = x.flatten(1)
        for i, lin in enumerate(self.dense):
            x = lin(x)
            if i < len(self.dense) - 1:
                x = F.relu(x)
        return x


class MixtureDecoder(nn.Module):
    """Latent (B, 24) -> block reconstruction (B, N*N); no trainable weights.

    Per kernel the latent holds [m, mux, muy, a11, a21, a22]; sigmoid bounds
    the expert and center into (0, 1), steering stays unrestricted.  The
    reconstruction is the softmax-gated expert mixture on the pixel-center
    lattice.
    """

    def __init__(self, block_size: int):
        super().__init__()
        n = block_size
        cx = (torch.arange(n, dtype=torch.float32) + 0.5) / n
        cy = (torch.arange(n, dtype=torch.float32) + 0.5) / n
        px = cx.repeat(n)
        py = cy.repeat_interleave(n)
        self.register_buffer("px", px)
        self.register_buffer("py", py)
        self.block_size = n

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        groups = latent.view(-1, LATENT_KERNELS, 6)
        experts = torch.sigmoid(groups[..., 0])
        mux = torch.sigmoid(groups[..., 1])
        muy = torch.sigmoid(groups[..., 2])
        a11 = groups[..., 3]
        a21 = groups[..., 4]
        a22 = groups[..., 5]

        dx = self.px[None, None, :] - mux[..., None]  # (B, K, P)
        dy = self.py[None, None, :] - muy[..., None]
        u = a11[..., None] * dx + a21[..., None] * dy
        v = a22[..., None] * dy
        logits = -0.5 * (u * u + v * v)
        gates = torch.softmax(logits, dim=1)
        return (experts[..., None] * gates).sum(dim=1)


class EncoderDecoder(nn.Module):
    """End-to-end trainable graph: deep encoder, shallow fixed decoder."""

    def __init__(self, arch: EncoderArch):
        super().__init__()
        self.encoder = Encoder(arch)
        self.decoder = MixtureDecoder(arch.block_size)

    def forward(self, blocks: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(blocks))


def build_model(block_size: int, width_scale: int = 1) -> EncoderDecoder:
    if block_size not in (8, 16):
        raise ValueError(f"block_size must be 8 or 16, got {block_size}")
    return EncoderDecoder(EncoderArch(block_size=block_size, width_scale=width_scale))
