"""
Manifiestos, carga de muestras, configuración y artefactos de ejecución.
"""
import json

import numpy as np
import pytest

from models.dataset import load_manifest, load_sample, load_samples_index, resolve_sample_dirs, split_of
from models.errors import BadInputError, ConfigError, InvariantViolation, MissingArtifactError
from models.result_manager import ResultManager
from models.validator import DatasetValidator
from utils.config.delight_config import DEFAULTS, DelightConfig
from utils.image_io import read_rawf, write_rawf


def write_manifest(path, captures):
    path.write_text(json.dumps({"captures": captures}), encoding="utf-8")
    return path


class TestManifestValidation:

    def test_missing_file(self, tmp_path):
        is_valid, errors = DatasetValidator.validate_manifest(tmp_path / "none.json")
        assert not is_valid
        assert "no existe" in errors[0]

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{captures", encoding="utf-8")
        assert not DatasetValidator.validate_manifest(path)[0]

    def test_missing_keys_and_duplicates(self, tmp_path):
        record = {"id": "a", "flash_paths": ["1.png", "2.png"], "room_path": "r.png",
                  "foreground_path": "f.png", "nose_path": "n.png", "mouth_path": "m.png"}
        path = write_manifest(tmp_path / "m.json", [record, dict(record), {"id": "b"}])
        is_valid, errors = DatasetValidator.validate_manifest(path, check_files=False)
        assert not is_valid
        assert any("duplicado" in e for e in errors)
        assert any("faltan claves" in e for e in errors)

    def test_error_description_is_truncated(self):
        text = DatasetValidator.describe_errors([f"e{i}" for i in range(8)], limit=3)
        assert text == "e0; e1; e2 (+5 más)"
        assert DatasetValidator.describe_errors(["solo"]) == "solo"

    def test_single_flash_rejected(self, tmp_path):
        record = {"id": "a", "flash_paths": ["1.png"], "room_path": "r.png",
                  "foreground_path": "f.png", "nose_path": "n.png", "mouth_path": "m.png"}
        path = write_manifest(tmp_path / "m.json", [record])
        assert not DatasetValidator.validate_manifest(path, check_files=False)[0]

    def test_load_manifest_errors(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            load_manifest(tmp_path / "none.json")
        with pytest.raises(BadInputError):
            load_manifest(write_manifest(tmp_path / "m.json", []))


class TestSamples:

    def test_loaded_sample_keeps_identities(self, samples_dir):
        index = load_samples_index(samples_dir)
        sample = load_sample(resolve_sample_dirs(index)[0])
        is_valid, errors = DatasetValidator.validate_sample(sample)
        assert is_valid, errors
        assert sample.sample_id == "fixture_000_v00"
        assert "kappa" in sample.meta

    def test_loaded_sample_close_to_rawf(self, samples_dir):
        sample_dir = resolve_sample_dirs(load_samples_index(samples_dir))[0]
        sample = load_sample(sample_dir)
        stored = read_rawf(sample_dir / "off.rawf")
        assert np.max(np.abs(stored - sample.off.pixels)) < 1e-3

    def test_tampered_rawf_is_invariant_violation(self, tmp_path, samples_dir):
        import shutil

        source = resolve_sample_dirs(load_samples_index(samples_dir))[0]
        copy = tmp_path / source.name
        shutil.copytree(source, copy)
        off = read_rawf(copy / "off.rawf")
        write_rawf(copy / "off.rawf", off + 0.5)
        with pytest.raises(InvariantViolation):
            load_sample(copy)

    def test_sample_without_meta(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            load_sample(tmp_path)

    def test_index_errors(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            load_samples_index(tmp_path)
        (tmp_path / "samples.json").write_text("[]", encoding="utf-8")
        with pytest.raises(BadInputError):
            load_samples_index(tmp_path)

    def test_broken_sample_reported(self, small_sample):
        planes = small_sample.planes()
        planes["off"] = planes["off"] + 0.1
        broken = small_sample.with_planes(planes)
        is_valid, errors = DatasetValidator.validate_sample(broken)
        assert not is_valid
        assert any("off" in e for e in errors)


class TestSplit:

    def test_stable_and_fractional(self):
        ids = [f"cap_{i:04d}_v00" for i in range(2000)]
        splits = [split_of(i) for i in ids]
        assert splits == [split_of(i) for i in ids]
        assert 0.05 < splits.count("val") / len(ids) < 0.15

    def test_zero_fraction_is_all_train(self):
        assert {split_of(f"x{i}", 0.0) for i in range(50)} == {"train"}


class TestDelightConfig:

    @pytest.fixture
    def toml_file(self, tmp_path):
        path = tmp_path / "delight.toml"
        path.write_text("[delight]\nepochs = 2\nlearning_rate = 0.001\n", encoding="utf-8")
        return path

    def test_defaults(self):
        config = DelightConfig(load_env_file=False)
        assert config["epochs"] == DEFAULTS["epochs"]
        assert config.kappa_range() == (7, 35)
        assert config.sources()["epochs"].origin == "default"

    def test_precedence(self, toml_file):
        config = DelightConfig(config_file=toml_file, load_env_file=False)
        assert config.reload(environ={})["epochs"] == 2
        assert config.reload(environ={"DELIGHT_EPOCHS": "3"})["epochs"] == 3
        config.reload(flags={"epochs": 5}, environ={"DELIGHT_EPOCHS": "3"})
        assert config["epochs"] == 5
        assert config.sources()["epochs"].origin == "flag"
        assert config["learning_rate"] == pytest.approx(1e-3)

    def test_none_flag_does_not_override(self, toml_file):
        config = DelightConfig(config_file=toml_file, load_env_file=False)
        assert config.reload(flags={"epochs": None}, environ={})["epochs"] == 2

    def test_env_coercion(self):
        config = DelightConfig(load_env_file=False)
        config.reload(environ={"DELIGHT_MODEL_WIDTHS": "8,16", "DELIGHT_SOFT_ALTERNATE": "sí"})
        assert config["model_widths"] == (8, 16)
        assert config["soft_alternate"] is True

    def test_bad_values(self, tmp_path):
        config = DelightConfig(load_env_file=False)
        with pytest.raises(ConfigError):
            config.reload(environ={"DELIGHT_EPOCHS": "muchas"})
        with pytest.raises(ConfigError):
            config.reload(flags={"kappa_low": 40}, environ={})
        with pytest.raises(ConfigError):
            config.reload(flags={"unknown_key": 1}, environ={})

    def test_unknown_toml_key(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("epocs = 3\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            DelightConfig(config_file=path, load_env_file=False)

    def test_missing_and_malformed_file(self, tmp_path):
        with pytest.raises(ConfigError):
            DelightConfig(config_file=tmp_path / "none.toml", load_env_file=False)
        bad = tmp_path / "bad.toml"
        bad.write_text("epochs = = 3", encoding="utf-8")
        with pytest.raises(ConfigError):
            DelightConfig(config_file=bad, load_env_file=False)

    def test_failed_reload_keeps_previous_values(self):
        config = DelightConfig(load_env_file=False).reload(flags={"epochs": 7}, environ={})
        with pytest.raises(ConfigError):
            config.reload(flags={"flip_prob": 2.0}, environ={})
        assert config["epochs"] == 7


class TestResultManager:

    def test_run_record(self, tmp_path):
        manager = ResultManager(tmp_path / "run")
        path = manager.write_run_record("synth", ["synth", "--seed", "1"], {"seed": 1}, {"success": True})
        record = json.loads(path.read_text(encoding="utf-8"))
        assert record["command"] == "synth"
        assert record["argv"] == ["synth", "--seed", "1"]
        assert record["config"] == {"seed": 1}
        assert record["outcome"]["success"] is True
        assert {"version", "python", "timestamp"} <= set(record)

    def test_json_is_sorted_and_tuples_become_lists(self, tmp_path):
        manager = ResultManager(tmp_path)
        path = manager.write_json("a.json", {"b": (1, 2), "a": np.float64(0.5)})
        text = path.read_text(encoding="utf-8")
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text) == {"a": 0.5, "b": [1, 2]}

    def test_jsonl_appends(self, tmp_path):
        manager = ResultManager(tmp_path)
        manager.append_jsonl("log.jsonl", '{"step": 1}')
        manager.append_jsonl("log.jsonl", '{"step": 2}\n')
        lines = (tmp_path / "log.jsonl").read_text(encoding="utf-8").splitlines()
        assert [json.loads(l)["step"] for l in lines] == [1, 2]

    def test_saved_sample_round_trips(self, tmp_path, small_sample):
        sample_dir = ResultManager(tmp_path).save_sample(small_sample)
        loaded = load_sample(sample_dir)
        assert loaded.fg_count == small_sample.fg_count
        np.testing.assert_allclose(loaded.src.pixels, small_sample.src.pixels, atol=1e-4)
        np.testing.assert_allclose(loaded.off.pixels, small_sample.off.pixels, atol=1e-4)
