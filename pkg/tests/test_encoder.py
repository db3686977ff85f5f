"""Inference engine: structural validation, forward pass, latent decoding."""

import numpy as np
import pytest

from reference_forward import forward_naive, make_procedural_weights, random_tensors
from smoe import smw
from smoe.encoder import (
    decode_latent,
    forward,
    forward_batch,
    load_weights,
    predict_model,
    predict_windows,
)
from smoe.model import ImageGrid, reconstruct, pixel_lattice


@pytest.fixture(scope="module")
def net8(tmp_path_factory):
    path = tmp_path_factory.mktemp("enc") / "enc8.smw"
    arch, tensors = make_procedural_weights(path, 8, seed=21)
    return load_weights(path), arch, dict(tensors)


def zeroed_weights(tmp_path, block_size=8, head_bias=None):
    arch, tensors = random_tensors(block_size, seed=0)
    zeroed = []
    for name, arr in tensors:
        z = np.zeros_like(arr)
        if head_bias is not None and name == "dense5.bias":
            z = np.asarray(head_bias, dtype=np.float32)
        zeroed.append((name, z))
    path = tmp_path / "zero.smw"
    smw.write_smw(path, arch, zeroed)
    return load_weights(path)


class TestLoad:
    def test_thirteen_layers(self, net8):
        net, arch, _ = net8
        assert len(net.layers) == 13
        assert [l.kind for l in net.layers] == ["conv"] * 7 + ["dense"] * 6
        assert net.layers[-1].activation == "linear"
        assert all(l.activation == "relu" for l in net.layers[:-1])
        assert net.input_block_size == 8

    def test_width_scaled_architecture_loads(self, tmp_path):
        path = tmp_path / "scaled.smw"
        make_procedural_weights(path, 8, width_scale=4, seed=3)
        net = load_weights(path)
        assert net.layers[0].out_dim == 4
        assert net.layers[-1].out_dim == 24

    def test_tag_mismatch_rejected(self, tmp_path):
        arch, tensors = random_tensors(8, seed=5)
        bad_arch = smw.ArchSpec(arch.block_size, arch.strides, "k4sig-00000000")
        path = tmp_path / "badtag.smw"
        smw.write_smw(path, bad_arch, tensors)
        with pytest.raises(smw.SmwError, match="tag"):
            load_weights(path)

    def test_missing_tensor_rejected(self, tmp_path):
        arch, tensors = random_tensors(8, seed=6)
        path = tmp_path / "missing.smw"
        smw.write_smw(path, arch, tensors[:-1])
        with pytest.raises(smw.SmwError):
            load_weights(path)

    def test_wrong_channel_chain_rejected(self, tmp_path):
        arch, tensors = random_tensors(8, seed=7)
        tensors = [
            (n, np.zeros((24, 999), np.float32) if n == "dense5.weight" else a)
            for n, a in tensors
        ]
        path = tmp_path / "chain.smw"
        smw.write_smw(path, arch, tensors)
        with pytest.raises(smw.SmwError, match="dense5.weight"):
            load_weights(path)


class TestForward:
    def test_all_zero_weights_zero_output(self, tmp_path):
        net = zeroed_weights(tmp_path)
        out = forward(net, np.random.default_rng(0).uniform(0, 1, (8, 8)))
        assert np.all(out == 0.0)

    def test_head_bias_passthrough(self, tmp_path):
        bias = np.linspace(-2, 2, 24).astype(np.float32)
        net = zeroed_weights(tmp_path, head_bias=bias)
        out = forward(net, np.full((8, 8), 0.7))
        assert np.array_equal(out, bias)

    def test_deterministic(self, net8):
        net, _, _ = net8
        rng = np.random.default_rng(1)
        block = rng.uniform(0, 1, (8, 8))
        a = forward(net, block)
        b = forward(net, block)
        assert np.array_equal(a, b)

    def test_wrong_block_size_rejected(self, net8):
        net, _, _ = net8
        with pytest.raises(ValueError):
            forward(net, np.zeros((16, 16)))

    def test_parity_with_naive_reference(self, net8):
        net, arch, lookup = net8
        rng = np.random.default_rng(2)
        blocks = rng.uniform(0, 1, (25, 8, 8))
        latents = forward_batch(net, blocks)
        for i in range(blocks.shape[0]):
            ref = forward_naive(lookup, arch.strides, blocks[i])
            assert np.abs(latents[i] - ref).max() <= 1e-4

    def test_batch_matches_single(self, net8):
        net, _, _ = net8
        rng = np.random.default_rng(4)
        blocks = rng.uniform(0, 1, (6, 8, 8))
        batch = forward_batch(net, blocks)
        for i in range(6):
            assert np.abs(forward(net, blocks[i]) - batch[i]).max() <= 1e-5

    def test_accepts_image_grid(self, net8):
        net, _, _ = net8
        g = ImageGrid.from_array(np.full((8, 8), 0.25))
        assert forward(net, g).shape == (24,)


class TestDecode:
    def test_zero_latent_gives_flat_midgray(self, tmp_path):
        net = zeroed_weights(tmp_path)
        model = predict_model(net, np.zeros((8, 8)))
        for k in model.kernels:
            assert k.expert == 0.5
            assert k.mu == (0.5, 0.5)
            assert k.chol == (0.0, 0.0, 0.0)
        y = reconstruct(model, pixel_lattice(8, 8))
        assert np.allclose(y, 0.5, atol=1e-15)

    def test_decoded_centers_inside_unit_interval(self, net8):
        net, _, _ = net8
        rng = np.random.default_rng(5)
        for _ in range(20):
            model = predict_model(net, rng.uniform(0, 1, (8, 8)))
            for k in model.kernels:
                assert 0.0 < k.mu[0] < 1.0 and 0.0 < k.mu[1] < 1.0
                assert 0.0 < k.expert < 1.0

    def test_latent_layout_per_kernel(self):
        latent = np.zeros(24, dtype=np.float32)
        latent[6:12] = [10.0, -10.0, 10.0, 3.0, -4.0, 5.0]  # kernel 1 slot
        mus, chols, experts = decode_latent(latent[None])
        assert experts[0, 1] > 0.99
        assert mus[0, 1, 0] < 0.01 and mus[0, 1, 1] > 0.99
        assert chols[0, 1].tolist() == [3.0, -4.0, 5.0]
        # untouched kernels decode to the sigmoid midpoint
        assert experts[0, 0] == 0.5

    def test_predict_windows_matches_predict_model(self, net8):
        net, _, _ = net8
        rng = np.random.default_rng(6)
        windows = rng.uniform(0, 1, (5, 8, 8))
        wm = predict_windows(net, windows)
        assert wm.kind == "steered" and len(wm) == 5
        for i in range(5):
            single = predict_model(net, windows[i])
            batch = wm.model_at(i)
            for ks, kb in zip(single.kernels, batch.kernels):
                assert ks.mu == pytest.approx(kb.mu, abs=1e-6)
                assert ks.expert == pytest.approx(kb.expert, abs=1e-6)
                assert ks.chol == pytest.approx(kb.chol, abs=1e-5)

    def test_bad_latent_width_rejected(self):
        with pytest.raises(ValueError):
            decode_latent(np.zeros(23))
