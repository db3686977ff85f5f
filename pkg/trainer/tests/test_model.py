"""Architecture, decoder equivalence, and gradient flow."""

import numpy as np
import pytest
import torch

from smoe_trainer import EncoderArch, build_model
from smoe_trainer.model import MixtureDecoder


class TestArchitecture:
    def test_decoder_has_no_parameters(self):
        model = build_model(8, width_scale=4)
        assert sum(p.numel() for p in model.decoder.parameters()) == 0

    def test_parameter_count_matches_arithmetic(self):
        for bs, scale in ((8, 4), (16, 4), (8, 1)):
            model = build_model(bs, width_scale=scale)
            expected = EncoderArch(bs, width_scale=scale).trainable_parameters()
            assert sum(p.numel() for p in model.encoder.parameters()) == expected

    def test_layer_structure(self):
        model = build_model(16, width_scale=4)
        assert len(model.encoder.convs) == 7
        assert len(model.encoder.dense) == 6
        assert model.encoder.dense[-1].out_features == 24
        # stride-2 convs shrink 16 -> 1 before the first stride-1 layer
        sizes = [c.out_size for c in model.encoder.convs]
        assert sizes == [8, 4, 2, 1, 1, 1, 1]

    def test_rejects_unsupported_block_size(self):
        with pytest.raises(ValueError):
            build_model(12)

    def test_tag_matches_inference_package(self):
        from smoe import smw as psmw

        for bs in (8, 16):
            for scale in (1, 4):
                arch = EncoderArch(bs, width_scale=scale)
                expected = psmw.make_tag(
                    bs,
                    psmw.default_strides(bs),
                    psmw.default_channels(scale),
                    psmw.default_dense_dims(scale),
                )
                assert arch.tag == expected


class TestDecoder:
    def test_matches_reference_reconstruction(self):
        from smoe.model import BlockModel, SteeredKernel, pixel_lattice, reconstruct

        rng = np.random.default_rng(5)
        dec = MixtureDecoder(8)
        worst = 0.0
        for _ in range(50):
            latent = rng.normal(0, 3, 24).astype(np.float32)
            y_torch = dec(torch.from_numpy(latent[None])).numpy()[0]
            groups = latent.reshape(4, 6).astype(np.float64)

            def sig(z):
                return 1.0 / (1.0 + np.exp(-z))

            kernels = tuple(
                SteeredKernel(
                    mu=(sig(groups[k, 1]), sig(groups[k, 2])),
                    chol=tuple(groups[k, 3:6]),
                    expert=sig(groups[k, 0]),
                )
                for k in range(4)
            )
            y_ref = reconstruct(BlockModel(kind="steered", kernels=kernels), pixel_lattice(8, 8))
            worst = max(worst, float(np.abs(y_torch - y_ref).max()))
        assert worst <= 1e-5

    def test_zero_latent_flat_midgray(self):
        dec = MixtureDecoder(8)
        y = dec(torch.zeros(1, 24))
        assert torch.allclose(y, torch.full_like(y, 0.5), atol=1e-6)

    def test_gradients_reach_encoder(self):
        model = build_model(8, width_scale=4)
        x = torch.rand(4, 8, 8)
        loss = torch.mean((model(x) - x.flatten(1)) ** 2)
        loss.backward()
        grads = [p.grad.abs().sum().item() for p in model.encoder.parameters()]
        assert sum(g > 0 for g in grads) > len(grads) // 2
