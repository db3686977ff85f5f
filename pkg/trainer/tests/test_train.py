"""Training loop behavior: overfit smoke, NaN abort, resume, config parsing."""

import numpy as np
import pytest
import torch

from smoe_trainer import TrainConfig, build_model, train
from smoe_trainer.config import parse_config_text
from smoe_trainer.train import overfit_steps, validation_mse


class TestOverfit:
    def test_64_blocks_500_steps(self, natural_blocks):
        model = build_model(8, width_scale=4)
        losses = overfit_steps(model, natural_blocks, 500, learning_rate=1e-3)
        assert losses[-1] < 0.1 * losses[0]


class TestLoop:
    def test_two_epoch_run(self, corpus_dir, tmp_path):
        config = TrainConfig(
            dataset_root=str(corpus_dir),
            block_size=8,
            epochs=2,
            learning_rate=1e-3,
            width_scale=4,
            max_blocks=3000,
            seed=7,
            out_dir=str(tmp_path / "run"),
            fixture_count=20,
        )
        report = train(config)
        assert len(report.val_mse) == 2
        assert report.val_mse[1] < report.val_mse[0]
        assert (tmp_path / "run" / "encoder_8.smw").exists()
        assert (tmp_path / "run" / "fixtures_8.smw").exists()

    def test_nan_loss_aborts_with_batch_index(self, corpus_dir, tmp_path):
        config = TrainConfig(
            dataset_root=str(corpus_dir),
            block_size=8,
            epochs=1,
            width_scale=4,
            max_blocks=500,
            out_dir=str(tmp_path / "nan"),
        )
        import smoe_trainer.train as train_mod

        original = train_mod.build_model

        def poisoned(block_size, width_scale=1):
            model = original(block_size, width_scale)
            with torch.no_grad():
                model.encoder.dense[-1].bias[0] = float("nan")
            return model

        train_mod.build_model = poisoned
        try:
            with pytest.raises(RuntimeError, match=r"epoch 0, batch 0"):
                train(config)
        finally:
            train_mod.build_model = original

    def test_resume_continues_from_checkpoint(self, corpus_dir, tmp_path):
        base = dict(
            dataset_root=str(corpus_dir),
            block_size=8,
            learning_rate=1e-3,
            width_scale=4,
            max_blocks=1000,
            seed=13,
            out_dir=str(tmp_path / "resume"),
            fixture_count=5,
        )
        first = train(TrainConfig(epochs=1, **base))
        assert len(first.val_mse) == 1
        resumed = train(TrainConfig(epochs=3, resume=True, **base))
        assert len(resumed.val_mse) == 3

        straight = train(
            TrainConfig(epochs=3, **{**base, "out_dir": str(tmp_path / "straight")})
        )
        assert resumed.val_mse == pytest.approx(straight.val_mse, rel=1e-6)

    def test_validation_always_reported(self, corpus_dir, tmp_path):
        config = TrainConfig(
            dataset_root=str(corpus_dir),
            block_size=8,
            epochs=3,
            learning_rate=1e-3,
            width_scale=4,
            max_blocks=1000,
            out_dir=str(tmp_path / "val"),
            fixture_count=5,
        )
        report = train(config)
        assert len(report.val_mse) == config.epochs
        assert all(np.isfinite(v) for v in report.val_mse)


class TestNoiseTraining:
    def test_loss_targets_clean_blocks(self, natural_blocks):
        # training on pure noise around a clean target must still reduce the
        # clean-target validation error
        model = build_model(8, width_scale=4)
        opt = torch.optim.Adam(model.parameters(), lr=1e-3)
        clean = torch.from_numpy(natural_blocks)
        target = clean.flatten(1)
        rng = np.random.default_rng(17)
        before = validation_mse(model, natural_blocks)
        from smoe_trainer.data import speckle

        for _ in range(300):
            noisy = torch.from_numpy(speckle(natural_blocks, 0.01, rng))
            opt.zero_grad()
            loss = torch.mean((model(noisy) - target) ** 2)
            loss.backward()
            opt.step()
        after = validation_mse(model, natural_blocks)
        assert after < 0.5 * before


class TestConfig:
    def test_parse_roundtrip(self):
        text = """
        # desk run
        dataset_root = /data/images
        block_size = 8
        epochs = 12
        batch = 64
        learning_rate = 1e-3
        noise_variance = 0.01
        width_scale = 4
        max_blocks = 40000
        resume = true
        """
        config = parse_config_text(text)
        assert config.dataset_root == "/data/images"
        assert config.block_size == 8
        assert config.epochs == 12
        assert config.learning_rate == pytest.approx(1e-3)
        assert config.noise_variance == pytest.approx(0.01)
        assert config.width_scale == 4
        assert config.resume is True

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            parse_config_text("no_such_field = 3")

    def test_defaults_match_protocol(self):
        config = TrainConfig()
        assert config.epochs == 30
        assert config.batch == 64
        assert config.learning_rate == pytest.approx(5e-5)

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(block_size=12).validate()
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0).validate()
