"""
Colorimetría (luminancia Lab, luma Rec.709, tintes) y lectura/escritura de PNG y .rawf.
"""
import numpy as np
import pytest

from models.errors import BadInputError, ContractViolation, MissingArtifactError
from utils.colorimetry import (
    REC709_WEIGHTS,
    kelvin_to_rgb_gains,
    luma_rec709,
    luminance_lab,
    replace_luminance,
)
from utils.image_io import read_png, read_rawf, write_png, write_rawf


def lab_lightness_oracle(rgb):
    """L*/100 con linealización sRGB y blanco D65."""
    linear = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    y = linear @ np.array([0.212671, 0.715160, 0.072169])
    delta = 6.0 / 29.0
    f = np.where(y > delta ** 3, np.cbrt(y), y / (3 * delta ** 2) + 4.0 / 29.0)
    return (116.0 * f - 16.0) / 100.0


class TestLuminance:

    def test_matches_formula(self, rng):
        img = rng.random((6, 6, 3))
        np.testing.assert_allclose(luminance_lab(img)[..., 0], lab_lightness_oracle(img), atol=1e-3)

    def test_white_and_black(self):
        assert luminance_lab(np.ones((2, 2, 3))).min() == pytest.approx(1.0, abs=1e-3)
        assert luminance_lab(np.zeros((2, 2, 3))).max() == pytest.approx(0.0, abs=1e-6)

    def test_requires_three_channels(self):
        with pytest.raises(ContractViolation):
            luminance_lab(np.zeros((2, 2, 1)))

    def test_replace_with_own_luminance_round_trip(self, rng):
        img = 0.3 + 0.3 * rng.random((5, 5, 3))
        np.testing.assert_allclose(replace_luminance(img, luminance_lab(img)), img, atol=1e-3)

    def test_replace_sets_requested_lightness(self, rng):
        img = 0.35 + 0.2 * rng.random((4, 4, 3))
        target = luminance_lab(img) + 0.05
        np.testing.assert_allclose(luminance_lab(replace_luminance(img, target)), target, atol=1e-3)

    def test_luma_weights(self):
        img = np.zeros((1, 3, 3))
        img[0, 0, 0] = img[0, 1, 1] = img[0, 2, 2] = 1.0
        np.testing.assert_allclose(luma_rec709(img)[0], REC709_WEIGHTS)


class TestKelvinGains:

    @pytest.mark.parametrize("temperature", [2500.0, 4000.0, 6500.0, 10000.0])
    def test_unit_luminance(self, temperature):
        assert kelvin_to_rgb_gains(temperature) @ REC709_WEIGHTS == pytest.approx(1.0, abs=1e-9)

    def test_warm_is_red_and_cool_is_blue(self):
        warm, cool = kelvin_to_rgb_gains(2500.0), kelvin_to_rgb_gains(10000.0)
        assert warm[0] > warm[2]
        assert cool[2] > cool[0]

    def test_near_white_at_6600(self):
        np.testing.assert_allclose(kelvin_to_rgb_gains(6600.0), 1.0, atol=1e-2)

    def test_rejects_non_positive(self):
        with pytest.raises(ContractViolation):
            kelvin_to_rgb_gains(0.0)


class TestImageIO:

    def test_png16_precision(self, tmp_path, rng):
        img = rng.random((5, 7, 3))
        path = write_png(tmp_path / "a.png", img, bit_depth=16)
        assert np.max(np.abs(read_png(path) - img)) <= 0.5 / 65535 + 1e-12

    def test_png8_single_channel(self, tmp_path):
        mask = np.zeros((4, 4, 1))
        mask[1:3, 1:3] = 1.0
        out = read_png(write_png(tmp_path / "m.png", mask))
        assert out.shape == (4, 4, 1)
        assert np.array_equal(out, mask)

    def test_png_utf8_path(self, tmp_path):
        path = write_png(tmp_path / "señal_ñ.png", np.full((2, 2, 3), 0.5))
        assert read_png(path).shape == (2, 2, 3)

    def test_rejects_bad_bit_depth(self, tmp_path):
        with pytest.raises(ContractViolation):
            write_png(tmp_path / "x.png", np.zeros((2, 2, 3)), bit_depth=12)

    def test_missing_and_unreadable(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            read_png(tmp_path / "none.png")
        bogus = tmp_path / "bogus.png"
        bogus.write_bytes(b"no es un png")
        with pytest.raises(BadInputError):
            read_png(bogus)

    def test_rawf_is_float32_exact(self, tmp_path, rng):
        img = (rng.random((3, 4, 3)) * 2.0 - 1.0).astype(np.float32).astype(np.float64)
        assert np.array_equal(read_rawf(write_rawf(tmp_path / "o.rawf", img)), img)

    def test_rawf_truncated(self, tmp_path):
        path = write_rawf(tmp_path / "o.rawf", np.zeros((2, 2, 3)))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(BadInputError):
            read_rawf(path)
