"""
Subcomandos de extremo a extremo a escala mínima, códigos de salida y run.json.
"""
import json

import numpy as np
import pytest

from controllers.delight_controller import DelightController
from utils.config.delight_config import DelightConfig
from utils.image_io import read_png, read_rawf, write_png
from views.cli.main import build_parser, config_flags, main

SMALL = ["--seed", "5", "--log-level", "WARNING"]
TRAIN_FLAGS = ["--epochs", "1", "--resolution", "32", "--model-depth", "2", "--extractor", "miniature",
               "--crop-low", "48", "--crop-high", "64", "--batch-size", "2", "--max-steps", "2"]


def artifact_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "run.json"}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    fixtures, samples, run = root / "fixtures", root / "samples", root / "run"
    assert main(["fixtures", "--out", str(fixtures), "--count", "3", "--fixture-resolution", "64",
                 "--olat-count", "6", *SMALL]) == 0
    assert main(["synth", "--manifest", str(fixtures / "manifest.json"), "--out", str(samples),
                 "--olat-count", "6", "--kappa-low", "7", "--kappa-high", "12", *SMALL]) == 0
    assert main(["train", "--samples", str(samples), "--out", str(run), *TRAIN_FLAGS, *SMALL]) == 0
    return {"root": root, "fixtures": fixtures, "samples": samples, "run": run,
            "ckpt": run / "step-2.ckpt"}


class TestPipeline:

    def test_run_records(self, pipeline):
        for name in ("fixtures", "samples", "run"):
            record = json.loads((pipeline[name] / "run.json").read_text(encoding="utf-8"))
            assert record["outcome"]["success"] is True
            assert record["config"]["seed"] == 5
        train_record = json.loads((pipeline["run"] / "run.json").read_text(encoding="utf-8"))
        assert train_record["command"] == "train"
        assert train_record["outcome"]["steps"] == 2
        assert "--max-steps" in train_record["argv"]

    def test_synth_is_idempotent(self, pipeline, tmp_path):
        again = tmp_path / "samples"
        assert main(["synth", "--manifest", str(pipeline["fixtures"] / "manifest.json"), "--out", str(again),
                     "--olat-count", "6", "--kappa-low", "7", "--kappa-high", "12", *SMALL]) == 0
        assert artifact_bytes(again) == artifact_bytes(pipeline["samples"])

    def test_delight_twice_is_byte_identical(self, pipeline, tmp_path):
        image = pipeline["fixtures"] / "heldout_back_lit" / "input.png"
        fg = pipeline["fixtures"] / "heldout_back_lit" / "fg.png"
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name / "dlt.png"
            assert main(["delight", str(image), "--ckpt", str(pipeline["ckpt"]), "--out", str(out),
                         "--fg", str(fg), "--emit-offset", *SMALL]) == 0
            outputs.append(out)
        assert outputs[0].read_bytes() == outputs[1].read_bytes()
        offset = read_rawf(tmp_path / "a" / "dlt_offset.rawf")
        assert offset.shape == read_png(image).shape
        preview = read_png(tmp_path / "a" / "dlt_offset.png")
        np.testing.assert_allclose(preview, (offset + 1.0) / 2.0, atol=1.0 / 255)

    def test_eval_on_held_out(self, pipeline, tmp_path):
        out = tmp_path / "eval"
        assert main(["eval", "--ckpt", str(pipeline["ckpt"]), "--manifest", str(pipeline["fixtures"] / "manifest.json"),
                     "--out", str(out), "--split", "test", *SMALL]) == 0
        report = json.loads((out / "report.json").read_text(encoding="utf-8"))
        assert len(report["per_image"]) == 4
        assert (out / "metrics.csv").exists()

    def test_make_mask(self, pipeline, tmp_path):
        sample_dir = pipeline["samples"] / "fixture_000_v00"
        out = tmp_path / "w.png"
        assert main(["make-mask", "--src", str(sample_dir / "src.png"), "--dlt", str(sample_dir / "dlt.png"),
                     "--fg", str(sample_dir / "fg.png"), "--out", str(out), *SMALL]) == 0
        mask = read_png(out)
        assert mask.shape[2] == 1
        assert 0.0 <= mask.min() and mask.max() <= 1.0
        fg = read_png(sample_dir / "fg.png")
        assert np.all(mask[fg[..., 0] == 0] == 0.0)

    def test_resume_from_checkpoint(self, pipeline, tmp_path):
        out = tmp_path / "resumed"
        assert main(["train", "--samples", str(pipeline["samples"]), "--out", str(out), *TRAIN_FLAGS,
                     "--epochs", "2", "--max-steps", "3", "--resume", str(pipeline["ckpt"]), *SMALL]) == 0
        record = json.loads((out / "run.json").read_text(encoding="utf-8"))
        assert record["outcome"]["steps"] == 3


class TestExitCodes:

    def test_missing_checkpoint_is_2(self, tmp_path):
        image = tmp_path / "in.png"
        write_png(image, np.full((16, 16, 3), 0.5))
        out = tmp_path / "out" / "dlt.png"
        assert main(["delight", str(image), "--ckpt", str(tmp_path / "none.ckpt"), "--out", str(out)]) == 2
        record = json.loads((out.parent / "run.json").read_text(encoding="utf-8"))
        assert record["outcome"]["exit_code"] == 2
        assert not out.exists()

    def test_missing_manifest_is_2(self, tmp_path):
        assert main(["synth", "--manifest", str(tmp_path / "none.json"), "--out", str(tmp_path / "s")]) == 2

    def test_bad_config_file_is_3(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("epocs = 3\n", encoding="utf-8")
        assert main(["fixtures", "--out", str(tmp_path / "f"), "--config", str(bad)]) == 3
        assert main(["fixtures", "--out", str(tmp_path / "f"), "--config", str(tmp_path / "none.toml")]) == 3

    def test_bad_env_value_is_3(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DELIGHT_EPOCHS", "muchas")
        assert main(["fixtures", "--out", str(tmp_path / "f")]) == 3

    def test_inconsistent_flags_are_3(self, tmp_path):
        assert main(["synth", "--manifest", "m.json", "--out", str(tmp_path), "--kappa-low", "20",
                     "--kappa-high", "10"]) == 3

    def test_unreadable_image_is_3(self, tmp_path):
        bogus = tmp_path / "in.png"
        bogus.write_bytes(b"no es imagen")
        result = DelightController(DelightConfig(load_env_file=False)).make_mask(bogus, bogus, tmp_path / "w.png")
        assert result["success"] is False
        assert result["exit_code"] == 3


class TestParser:

    def test_ablate_and_row_are_exclusive(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["train", "--samples", "m", "--out", "o", "--ablate", "off", "--row", "A"])

    def test_flags_map_to_config_keys(self):
        args = build_parser().parse_args(["train", "--samples", "m", "--out", "o", "--lr", "0.01",
                                          "--epochs", "3", "--seed", "2"])
        flags = config_flags(args)
        assert flags == {"learning_rate": 0.01, "epochs": 3, "seed": 2}

    def test_soft_alternate_only_when_given(self):
        parser = build_parser()
        assert "soft_alternate" not in config_flags(parser.parse_args(["train", "--samples", "m", "--out", "o"]))
        args = parser.parse_args(["train", "--samples", "m", "--out", "o", "--soft-alternate"])
        assert config_flags(args)["soft_alternate"] is True

    def test_model_widths_follow_depth(self):
        config = DelightConfig(load_env_file=False).reload(flags={"model_depth": 3}, environ={})
        assert DelightController(config).model_config().widths == (32, 64, 128)

    def test_no_d2_skips_flag(self):
        parser = build_parser()
        assert "d2_skips" not in config_flags(parser.parse_args(["train", "--samples", "m", "--out", "o"]))
        args = parser.parse_args(["train", "--samples", "m", "--out", "o", "--no-d2-skips"])
        config = DelightConfig(load_env_file=False).reload(flags=config_flags(args), environ={})
        assert DelightController(config).model_config().d2_skips is False

    def test_train_takes_samples_index(self, tmp_path):
        parser = build_parser()
        args = parser.parse_args(["train", "--samples", str(tmp_path), "--out", "o"])
        assert args.samples == tmp_path
        legacy = parser.parse_args(["train", "--manifest", str(tmp_path), "--out", "o"])
        assert legacy.samples == tmp_path
