"""
Aumento de datos, paso de entrenamiento, registro de pérdidas y reanudación.
"""
import math

import numpy as np
import pytest
import torch

from models.delight_network import build_model, load_checkpoint
from models.errors import ContractViolation, TrainingDivergedError
from models.losses import DelightLoss, LossBreakdown, LossSwitches
from models.trainer import (
    BEST_NAME,
    LOSS_LOG_NAME,
    TrainConfig,
    Trainer,
    augment,
    center_view,
    read_loss_log,
    to_batch,
    train_step,
)
from models.validator import DatasetValidator
from utils.image_ops import flip_horizontal, resize


def quick_config(**overrides):
    params = dict(epochs=2, batch_size=2, resolution=32, crop_range=(48, 64), seed=3,
                  learning_rate=1e-3, val_fraction=0.0, log_every=0)
    params.update(overrides)
    return TrainConfig(**params)


def make_trainer(tmp_path, tiny_model_config, miniature_extractor, **overrides):
    return Trainer(quick_config(**overrides), tiny_model_config, tmp_path, extractor=miniature_extractor)


class TestAugment:

    def test_identities_survive(self, small_sample):
        config = quick_config(flip_prob=0.5)
        for seed in range(4):
            out = augment(small_sample, np.random.default_rng(seed), config)
            assert out.shape == (32, 32)
            fg = out.foreground.pixels[..., 0] > 0.5
            np.testing.assert_allclose(out.off.pixels[fg], (out.src.pixels - out.dlt.pixels)[fg], atol=2e-2)
            np.testing.assert_allclose(out.soft_off.pixels[fg], (out.soft.pixels - out.dlt.pixels)[fg], atol=2e-2)
            assert out.fg_count == int(fg.sum())
            assert np.all(out.src.pixels[~fg] == 0.0)

    def test_full_crop_without_flip_is_plain_resize(self, small_sample):
        config = quick_config(crop_range=(64, 64), flip_prob=0.0)
        out = augment(small_sample, np.random.default_rng(0), config)
        fg = (resize(small_sample.foreground.pixels, 32, 32) > 0.5).astype(np.float64)
        np.testing.assert_allclose(out.src.pixels, resize(small_sample.src.pixels, 32, 32) * fg, atol=1e-12)
        assert out.meta["crop"] == [0, 0, 64, 64]
        assert out.meta["flip"] is False

    def test_flip_applies_to_every_plane(self, small_sample):
        config = quick_config(crop_range=(64, 64), flip_prob=1.0)
        plain = augment(small_sample, np.random.default_rng(0), quick_config(crop_range=(64, 64), flip_prob=0.0))
        flipped = augment(small_sample, np.random.default_rng(0), config)
        for name, plane in flipped.planes().items():
            np.testing.assert_allclose(plane, flip_horizontal(plain.planes()[name]), atol=1e-12, err_msg=name)

    def test_same_rng_same_view(self, small_sample):
        config = quick_config()
        a = augment(small_sample, np.random.default_rng(9), config)
        b = augment(small_sample, np.random.default_rng(9), config)
        assert a.meta["crop"] == b.meta["crop"]
        assert np.array_equal(a.src.pixels, b.src.pixels)

    def test_crop_larger_than_image(self, small_sample):
        with pytest.raises(ContractViolation):
            augment(small_sample, np.random.default_rng(0), quick_config(crop_range=(80, 90)))

    def test_source_sample_untouched(self, small_sample):
        before = small_sample.src.pixels.copy()
        augment(small_sample, np.random.default_rng(1), quick_config())
        assert np.array_equal(small_sample.src.pixels, before)
        assert "crop" not in small_sample.meta

    def test_center_view_is_valid_sample(self, small_sample):
        view = center_view(small_sample, quick_config())
        assert view.meta["crop"] == [0, 0, 64, 64]
        assert DatasetValidator.validate_sample(view, tolerance=1e-9)[0]


class TestTrainStep:

    def test_batch_ranges(self, small_sample):
        batch = to_batch([small_sample, small_sample])
        assert batch["src"].shape == (2, 3, 64, 64)
        assert batch["src"].min() >= -1.0 and batch["src"].max() <= 1.0
        assert batch["fg"].shape == (2, 1, 64, 64)
        torch.testing.assert_close(batch["fg_count"], torch.tensor([small_sample.fg_count] * 2, dtype=torch.float32))
        background = batch["fg"][0, 0] == 0
        assert torch.all(batch["dlt"][0, :, background] == -1.0)
        assert torch.all(batch["off"][0, :, background] == 0.0)

    def test_step_updates_parameters(self, small_sample, tiny_model_config, miniature_extractor):
        model = build_model(tiny_model_config)
        before = [p.detach().clone() for p in model.parameters()]
        optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
        breakdown = train_step(model, to_batch([small_sample]), DelightLoss(miniature_extractor), optimizer)
        assert not breakdown.total.requires_grad
        assert any(not torch.equal(a, b) for a, b in zip(before, model.parameters()))

    def test_non_finite_loss_leaves_model_untouched(self, small_sample, tiny_model_config, miniature_extractor):
        model = build_model(tiny_model_config)
        before = [p.detach().clone() for p in model.parameters()]
        optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
        batch = to_batch([small_sample])
        batch["dlt"][0, 0, 0, 0] = float("nan")
        with pytest.raises(TrainingDivergedError) as info:
            train_step(model, batch, DelightLoss(miniature_extractor), optimizer, step=4)
        assert info.value.step == 4
        assert all(torch.equal(a, b) for a, b in zip(before, model.parameters()))

    def test_invalid_config(self):
        with pytest.raises(ContractViolation):
            TrainConfig(crop_range=(64, 32))
        with pytest.raises(ContractViolation):
            TrainConfig(flip_prob=1.5)


class TestTrainer:

    def test_fit_writes_log_and_checkpoints(self, tmp_path, samples_dir, tiny_model_config, miniature_extractor):
        result = make_trainer(tmp_path, tiny_model_config, miniature_extractor).fit(samples_dir)
        # 3 muestras, lotes de 2 → 2 pasos por época
        assert result.steps == 4
        assert result.epochs_completed == 2
        log = read_loss_log(tmp_path / LOSS_LOG_NAME)
        assert [r["step"] for r in log] == [1, 2, 3, 4]
        for record in log:
            assert set(LossBreakdown.TERMS) | {"total", "step"} == set(record)
            assert math.isfinite(record["total"])
        assert (tmp_path / "step-2.ckpt").exists() and (tmp_path / "step-4.ckpt").exists()
        assert result.best_checkpoint == tmp_path / BEST_NAME
        assert load_checkpoint(tmp_path / "step-4.ckpt").epoch == 2

    def test_ablation_row_logs_zero_terms(self, tmp_path, samples_dir, tiny_model_config, miniature_extractor):
        trainer = make_trainer(tmp_path, tiny_model_config, miniature_extractor,
                               switches=LossSwitches.from_row("A"), epochs=1)
        trainer.fit(samples_dir)
        for record in read_loss_log(tmp_path / LOSS_LOG_NAME):
            assert record["l_dlt"] > 0
            assert record["l_off"] == record["l_soft_dlt"] == record["l_soft_off"] == record["l_msk"] == 0.0

    def test_max_steps(self, tmp_path, samples_dir, tiny_model_config, miniature_extractor):
        result = make_trainer(tmp_path, tiny_model_config, miniature_extractor, epochs=5, max_steps=3).fit(samples_dir)
        assert result.steps == 3
        assert len(read_loss_log(tmp_path / LOSS_LOG_NAME)) == 3
        assert load_checkpoint(tmp_path / "step-3.ckpt").epoch == 1

    def test_same_seed_same_losses(self, tmp_path, samples_dir, tiny_model_config, miniature_extractor):
        make_trainer(tmp_path / "a", tiny_model_config, miniature_extractor, epochs=1).fit(samples_dir)
        make_trainer(tmp_path / "b", tiny_model_config, miniature_extractor, epochs=1, workers=2).fit(samples_dir)
        a = read_loss_log(tmp_path / "a" / LOSS_LOG_NAME)
        b = read_loss_log(tmp_path / "b" / LOSS_LOG_NAME)
        assert [r["step"] for r in a] == [r["step"] for r in b]
        for x, y in zip(a, b):
            assert y["total"] == pytest.approx(x["total"], rel=1e-6)

    def test_resume_reproduces_uninterrupted_run(self, tmp_path, samples_dir, tiny_model_config, miniature_extractor):
        make_trainer(tmp_path / "full", tiny_model_config, miniature_extractor).fit(samples_dir)

        split_dir = tmp_path / "split"
        make_trainer(split_dir, tiny_model_config, miniature_extractor, epochs=1).fit(samples_dir)
        resumed = make_trainer(split_dir, tiny_model_config, miniature_extractor)
        result = resumed.fit(samples_dir, resume=split_dir / "step-2.ckpt")
        assert result.steps == 4

        full = read_loss_log(tmp_path / "full" / LOSS_LOG_NAME)
        split = read_loss_log(split_dir / LOSS_LOG_NAME)
        assert [r["step"] for r in split] == [1, 2, 3, 4]
        for expected, got in zip(full, split):
            assert got["total"] == pytest.approx(expected["total"], rel=1e-5)

    def test_resume_mid_epoch(self, tmp_path, samples_dir, tiny_model_config, miniature_extractor):
        make_trainer(tmp_path / "full", tiny_model_config, miniature_extractor).fit(samples_dir)
        split_dir = tmp_path / "split"
        make_trainer(split_dir, tiny_model_config, miniature_extractor, max_steps=3).fit(samples_dir)
        make_trainer(split_dir, tiny_model_config, miniature_extractor).fit(samples_dir, resume=split_dir / "step-3.ckpt")
        full = read_loss_log(tmp_path / "full" / LOSS_LOG_NAME)
        split = read_loss_log(split_dir / LOSS_LOG_NAME)
        assert split[-1]["step"] == 4
        assert split[-1]["total"] == pytest.approx(full[-1]["total"], rel=1e-5)

    def test_resume_rewrites_later_log_entries(self, tmp_path, samples_dir, tiny_model_config, miniature_extractor):
        make_trainer(tmp_path, tiny_model_config, miniature_extractor).fit(samples_dir)
        first = read_loss_log(tmp_path / LOSS_LOG_NAME)
        make_trainer(tmp_path, tiny_model_config, miniature_extractor).fit(samples_dir, resume=tmp_path / "step-2.ckpt")
        again = read_loss_log(tmp_path / LOSS_LOG_NAME)
        assert [r["step"] for r in again] == [1, 2, 3, 4]
        assert again[-1]["total"] == pytest.approx(first[-1]["total"], rel=1e-5)

    def test_corrupt_checkpoint_refused(self, tmp_path, samples_dir, tiny_model_config, miniature_extractor):
        from models.errors import CheckpointError

        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"\x00" * 64)
        with pytest.raises(CheckpointError):
            make_trainer(tmp_path, tiny_model_config, miniature_extractor).fit(samples_dir, resume=bad)

    def test_all_validation_split_rejected(self, tmp_path, samples_dir, tiny_model_config, miniature_extractor):
        trainer = make_trainer(tmp_path, tiny_model_config, miniature_extractor, val_fraction=1.0, epochs=1)
        with pytest.raises(ContractViolation):
            trainer.fit(samples_dir)
