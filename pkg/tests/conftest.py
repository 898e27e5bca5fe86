"""
Fixtures compartidos: escenas pequeñas, extractor miniatura y directorios temporales.
"""
import os
import sys
from pathlib import Path

import numpy as np
import pytest

BACKEND_DIR = Path(__file__).resolve().parent.parent / "backend"
sys.path.insert(0, str(BACKEND_DIR))

from models.capture import SynthConfig  # noqa: E402
from models.data_synthesizer import data_synthesizer, sample_rng  # noqa: E402
from models.fixture_renderer import FixtureScene, fixture_renderer  # noqa: E402

SMALL_RESOLUTION = 64
SMALL_OLATS = 6


@pytest.fixture(autouse=True)
def _no_delight_env(monkeypatch):
    for key in list(os.environ):
        if key.startswith("DELIGHT_"):
            monkeypatch.delenv(key, raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scene():
    return FixtureScene.ring(count=SMALL_OLATS, resolution=SMALL_RESOLUTION, shadow_samples=3, uniform_samples=12)


@pytest.fixture(scope="session")
def small_synth_config():
    # radios acordes a 64 px
    return SynthConfig(epsilon_radius=2, kappa_range=(3, 6), hf_radius=4, rng_seed=7)


@pytest.fixture(scope="session")
def rendered_capture(small_scene):
    return fixture_renderer.render_olat_capture(small_scene, seed=3, capture_id="cap_small")


@pytest.fixture(scope="session")
def small_sample(rendered_capture, small_synth_config):
    capture, _ = rendered_capture
    rng = sample_rng(small_synth_config.rng_seed, capture.capture_id, 0)
    return data_synthesizer.assemble_sample(capture, small_synth_config, rng, "cap_small_v00")


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory, small_scene):
    out = tmp_path_factory.mktemp("fixtures")
    fixture_renderer.write_fixture_set(out, count=3, seed=11, scene=small_scene)
    return out


@pytest.fixture(scope="session")
def samples_dir(tmp_path_factory, fixture_dir, small_synth_config):
    out = tmp_path_factory.mktemp("samples")
    data_synthesizer.synthesize_manifest(fixture_dir / "manifest.json", out, small_synth_config,
                                         olat_count=SMALL_OLATS)
    return out


@pytest.fixture
def miniature_extractor():
    from models.losses import FeatureExtractor

    return FeatureExtractor.miniature(seed=0)


@pytest.fixture
def tiny_model_config():
    from models.delight_network import ModelConfig

    return ModelConfig(depth=2, widths=(4, 8), seed=0)
