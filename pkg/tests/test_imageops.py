import math
from pathlib import Path

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from projsr import imageops
from projsr.errors import ConfigError, ShapeError

GOLDEN = Path(__file__).parent / "golden"


def smooth_image(rng, shape=(64, 64), sigma=3.0):
    from scipy.ndimage import gaussian_filter

    img = gaussian_filter(rng.standard_normal(shape), sigma)
    img -= img.min()
    img /= img.max()
    return 0.1 + 0.8 * img


class TestColor:
    def test_pure_black(self):
        rgb = np.zeros((2, 2, 3), np.uint8)
        assert np.allclose(imageops.rgb_to_ycbcr_luma(rgb), 16.0 / 255.0)

    def test_pure_white(self):
        rgb = np.full((2, 2, 3), 255, np.uint8)
        # coefficients sum to 219: (16 + 219) / 255
        assert np.allclose(imageops.rgb_to_ycbcr_luma(rgb), 235.0 / 255.0)

    def test_mid_gray(self):
        rgb = np.full((1, 1, 3), 128, np.uint8)
        expected = (16.0 + 219.0 * (128.0 / 255.0)) / 255.0
        assert np.allclose(imageops.rgb_to_ycbcr_luma(rgb), expected, atol=1e-12)
        half = np.full((1, 1, 3), 0.5)
        y = (np.array([[0.5, 0.5, 0.5]]) @ np.array([65.481, 128.553, 24.966]) + 16) / 255
        assert np.allclose(y, (16 + 109.5) / 255)

    def test_round_trip_within_one_level(self, rng):
        rgb = rng.integers(0, 256, (16, 16, 3)).astype(np.uint8)
        back = imageops.ycbcr_to_rgb(imageops.rgb_to_ycbcr(rgb))
        assert np.abs(back.astype(int) - rgb.astype(int)).max() <= 1

    def test_rejects_gray(self):
        with pytest.raises(ShapeError):
            imageops.rgb_to_ycbcr_luma(np.zeros((4, 4), np.uint8))


class TestBicubicResize:
    def test_factor_one_is_identity(self, rng):
        img = rng.uniform(0, 1, (9, 7))
        assert np.array_equal(imageops.bicubic_resize(img, 1.0), img)

    @pytest.mark.parametrize("factor", [0.25, 1 / 3, 0.5, 2.0, 3.0, 4.0])
    def test_constant_preserved(self, factor):
        img = np.full((24, 24), 0.4375)
        out = imageops.bicubic_resize(img, factor)
        assert np.abs(out - 0.4375).max() < 5e-16

    def test_output_dims_round(self):
        img = np.zeros((10, 7))
        assert imageops.bicubic_resize(img, 0.5).shape == (5, 4)  # round(3.5)=4
        assert imageops.bicubic_resize(img, 3.0).shape == (30, 21)

    def test_golden_downscale(self):
        ref, factor = imageops.read_golden(GOLDEN / "ramp8_half.bin")
        yy, xx = np.mgrid[0:8, 0:8].astype(np.float64)
        ramp = (xx + 2 * yy) / 21.0
        out = imageops.bicubic_resize(ramp, factor, clamp=False)
        assert out.shape == ref.shape
        assert np.allclose(out, ref, rtol=0, atol=1e-14)

    def test_golden_upscale(self):
        ref, factor = imageops.read_golden(GOLDEN / "ramp8_x2.bin")
        yy, xx = np.mgrid[0:8, 0:8].astype(np.float64)
        ramp = (xx + 2 * yy) / 21.0
        out = imageops.bicubic_resize(ramp, factor, clamp=False)
        assert np.allclose(out, ref, rtol=0, atol=1e-14)

    def test_downscale_antialias_narrower_than_naive(self, rng):
        # with the widened kernel a 1-px checkerboard averages out instead
        # of aliasing to a constant-amplitude pattern
        img = np.indices((32, 32)).sum(axis=0) % 2 * 0.8 + 0.1
        down = imageops.bicubic_resize(img.astype(float), 0.5)
        assert down.std() < 0.05

    def test_nonpositive_factor_rejected(self):
        with pytest.raises(ConfigError):
            imageops.bicubic_resize(np.zeros((4, 4)), 0.0)

    def test_smoothed_roundtrip_smoke(self, rng):
        smooth = smooth_image(rng)
        rough = 0.1 + 0.8 * rng.uniform(size=(64, 64))

        def energy_loss_db(img):
            rt = imageops.bicubic_resize(
                imageops.bicubic_resize(img, 0.5), 2.0
            )
            return 10 * math.log10(np.var(img) / np.var(rt))

        assert energy_loss_db(smooth) < 0.5
        assert energy_loss_db(smooth) < energy_loss_db(rough)


class TestPsnr:
    def test_identical_is_infinite(self, rng):
        a = rng.uniform(0, 1, (8, 8))
        assert imageops.psnr(a, a.copy()) == math.inf

    def test_uniform_one_level_difference(self):
        a = np.full((16, 16), 0.5)
        b = a + 1.0 / 255.0
        expected = 20 * math.log10(255.0)  # 48.1308 dB
        assert abs(imageops.psnr(a, b) - expected) < 1e-9

    def test_symmetric(self, rng):
        a = rng.uniform(0, 1, (12, 12))
        b = rng.uniform(0, 1, (12, 12))
        assert imageops.psnr(a, b) == imageops.psnr(b, a)

    def test_shave_changes_region(self, rng):
        a = rng.uniform(0, 1, (12, 12))
        b = a.copy()
        b[0, 0] = 1.0 - b[0, 0]  # corrupt only the border
        assert imageops.psnr(a, b, shave=2) == math.inf
        assert imageops.psnr(a, b, shave=0) < math.inf

    def test_dims_mismatch(self):
        with pytest.raises(ShapeError):
            imageops.psnr(np.zeros((4, 4)), np.zeros((4, 5)))


class TestSsim:
    def test_identical_is_one(self, rng):
        a = smooth_image(rng, (32, 32))
        assert imageops.ssim(a, a.copy()) == 1.0

    def test_negative_structure_below_one(self, rng):
        a = smooth_image(rng, (32, 32))
        b = 1.0 - a  # flip around 0.5
        assert imageops.ssim(a, b) < 1.0

    def test_symmetric(self, rng):
        a = smooth_image(rng, (32, 32))
        b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
        assert abs(imageops.ssim(a, b) - imageops.ssim(b, a)) < 1e-12

    def test_matches_reference_implementation(self, rng):
        a = smooth_image(rng, (48, 48))
        b = np.clip(a + rng.normal(0, 0.03, a.shape), 0, 1)
        mine = imageops.ssim(a, b)
        ref = structural_similarity(
            a,
            b,
            win_size=11,
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
            data_range=1.0,
        )
        assert abs(mine - ref) < 2e-4

    def test_too_small_rejected(self):
        with pytest.raises(ShapeError):
            imageops.ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestModcrop:
    def test_odd_dims(self):
        assert imageops.modcrop(np.zeros((101, 101)), 2).shape == (100, 100)

    def test_already_divisible(self, rng):
        img = rng.uniform(0, 1, (100, 60))
        assert np.array_equal(imageops.modcrop(img, 4), img)

    def test_floor_to_multiple(self):
        assert imageops.modcrop(np.zeros((517, 389)), 4).shape == (516, 388)


class TestEvaluate:
    def test_default_shave_equals_scale(self, rng):
        a = rng.uniform(0, 1, (32, 32))
        rep = imageops.evaluate(a, a.copy(), scale=3)
        assert rep.shave == 3 and rep.scale == 3
        assert rep.psnr_db == math.inf and rep.ssim == 1.0


class TestGoldenFormat:
    def test_round_trip(self, tmp_path, rng):
        arr = rng.uniform(0, 1, (5, 7))
        imageops.write_golden(tmp_path / "g.bin", arr, 0.25)
        back, factor = imageops.read_golden(tmp_path / "g.bin")
        assert factor == 0.25
        assert np.array_equal(back, arr)


class TestFileIO:
    def test_gray_png_round_trip(self, tmp_path, rng):
        img = rng.uniform(0, 1, (16, 16))
        imageops.save_gray(tmp_path / "g.png", img)
        back = imageops.load_luma(tmp_path / "g.png")
        assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-9

    def test_rgb_png_luma(self, tmp_path, rng):
        rgb = rng.integers(0, 256, (8, 8, 3)).astype(np.uint8)
        imageops.save_rgb(tmp_path / "c.png", rgb)
        y = imageops.load_luma(tmp_path / "c.png")
        assert np.allclose(y, imageops.rgb_to_ycbcr_luma(rgb))
