import numpy as np
import numpy.testing as npt
import pytest

from evigrade.augment import (
    AugmentConfig,
    apply_clahe,
    apply_photometric,
    augment_training_sample,
    cutmix,
    mixup,
    sample_beta,
)
from evigrade.imageio import Image, luminance


# ---- oracles ----

def equalize_oracle(idx):
    """Dict-based global histogram equalization (no clipping).

    lut(v) = 255 * (cdf(v) - cdf_min) / (n - cdf_min).
    """
    counts = {}
    for v in idx.ravel():
        counts[int(v)] = counts.get(int(v), 0) + 1
    n = idx.size
    levels = sorted(counts)
    cdf_min = counts[levels[0]]
    lut = {}
    run = 0
    for v in range(256):
        run += counts.get(v, 0)
        lut[v] = 255.0 * (run - cdf_min) / (n - cdf_min) if n != cdf_min else float(v)
    return np.vectorize(lambda v: np.clip(lut[int(v)], 0.0, 255.0))(idx)


def gray(arr):
    a = np.asarray(arr, dtype=np.float64)
    return Image(a[:, :, None], source_id="t")


def rgb(arr):
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = np.repeat(a[:, :, None], 3, axis=2)
    return Image(a, source_id="t")


# ---- CLAHE ----

class TestClahe:
    def test_two_level_full_stretch(self):
        # half the pixels at 50, half at 200: equalization maps them to 0/255
        px = np.full((16, 16), 50.0)
        px[:, 8:] = 200.0
        out = apply_clahe(gray(px), clip_limit=np.inf, grid=1)
        lum = luminance(out)
        npt.assert_allclose(np.unique(lum), [0.0, 255.0])
        npt.assert_array_equal(lum == 0.0, px == 50.0)

    def test_single_level_identity(self):
        px = np.full((16, 16), 90.0)
        out = apply_clahe(gray(px), clip_limit=2.0, grid=1)
        npt.assert_allclose(luminance(out), 90.0)

    def test_grid1_matches_global_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            px = np.floor(rng.uniform(0, 256, (24, 24)))
            out = apply_clahe(gray(px), clip_limit=np.inf, grid=1)
            npt.assert_allclose(luminance(out), equalize_oracle(px.astype(int)),
                                atol=1e-9)

    def test_clipping_caps_histogram_influence(self):
        # one dominant level; with a tight clip the spread must shrink
        rng = np.random.default_rng(1)
        px = np.full((32, 32), 100.0)
        mask = rng.uniform(size=px.shape) < 0.05
        px[mask] = np.floor(rng.uniform(0, 256, mask.sum()))
        hard = luminance(apply_clahe(gray(px), clip_limit=np.inf, grid=1))
        soft = luminance(apply_clahe(gray(px), clip_limit=1.5, grid=1))
        assert soft.std() < hard.std()

    def test_improves_low_contrast(self):
        rng = np.random.default_rng(2)
        px = np.clip(rng.normal(120, 6, (32, 32)), 0, 255)
        out = luminance(apply_clahe(gray(np.floor(px)), clip_limit=4.0, grid=2))
        assert out.std() > px.std()

    def test_color_keeps_channel_ratios(self):
        rng = np.random.default_rng(3)
        base = np.floor(rng.uniform(40, 200, (16, 16)))
        px = np.stack([base * 0.9, base * 0.7, base * 0.5], axis=2)
        out = apply_clahe(Image(px, source_id="t"), clip_limit=np.inf, grid=1)
        # away from the clip boundary, R/G ratio is preserved
        inner = (out.pixels[:, :, 1] > 1.0) & (out.pixels[:, :, 0] < 254.0)
        ratio = out.pixels[:, :, 0][inner] / out.pixels[:, :, 1][inner]
        npt.assert_allclose(ratio, 0.9 / 0.7, rtol=1e-6)

    def test_output_range_and_shape(self):
        rng = np.random.default_rng(4)
        px = rng.uniform(0, 255, (32, 32, 3))
        out = apply_clahe(Image(px, source_id="t"), clip_limit=2.0, grid=4)
        assert out.pixels.shape == (32, 32, 3)
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 255.0

    def test_bad_params_rejected(self):
        px = rgb(np.full((16, 16), 100.0))
        with pytest.raises(ValueError):
            apply_clahe(px, clip_limit=0.0)
        with pytest.raises(ValueError):
            apply_clahe(px, grid=17)


# ---- photometric ----

class TestPhotometric:
    def test_deterministic_given_seed(self):
        rng_px = np.random.default_rng(5)
        img = Image(rng_px.uniform(0, 255, (16, 16, 3)), source_id="t")
        cfg = AugmentConfig()
        a = apply_photometric(img, cfg, np.random.default_rng(42))
        b = apply_photometric(img, cfg, np.random.default_rng(42))
        npt.assert_array_equal(a.pixels, b.pixels)

    def test_zero_probs_identity(self):
        rng_px = np.random.default_rng(6)
        img = Image(rng_px.uniform(0, 255, (16, 16, 3)), source_id="t")
        cfg = AugmentConfig(clahe_prob=0, flip_prob=0, brightness_contrast_prob=0,
                            hue_sat_prob=0, noise_prob=0, blur_prob=0, mix_prob=0)
        out = augment_training_sample(img, cfg, np.random.default_rng(0))
        npt.assert_array_equal(out.pixels, img.pixels)

    def test_always_flip_is_involution(self):
        rng_px = np.random.default_rng(7)
        img = Image(rng_px.uniform(0, 255, (16, 16, 3)), source_id="t")
        cfg = AugmentConfig(flip_prob=1.0, brightness_contrast_prob=0,
                            hue_sat_prob=0, noise_prob=0, blur_prob=0)
        out = apply_photometric(img, cfg, np.random.default_rng(1))
        npt.assert_array_equal(out.pixels, img.pixels[::-1, ::-1, :])

    def test_output_always_in_range(self):
        rng_px = np.random.default_rng(8)
        img = Image(rng_px.uniform(0, 255, (16, 16, 3)), source_id="t")
        cfg = AugmentConfig(flip_prob=1.0, brightness_contrast_prob=1.0,
                            hue_sat_prob=1.0, noise_prob=1.0, blur_prob=1.0)
        for seed in range(20):
            out = apply_photometric(img, cfg, np.random.default_rng(seed))
            assert out.pixels.min() >= 0.0 and out.pixels.max() <= 255.0

    def test_brightness_shift_only(self):
        img = rgb(np.full((16, 16), 100.0))
        cfg = AugmentConfig(flip_prob=0, brightness_contrast_prob=1.0,
                            hue_sat_prob=0, noise_prob=0, blur_prob=0)
        out = apply_photometric(img, cfg, np.random.default_rng(2))
        # constant image stays constant under brightness/contrast jitter
        assert np.unique(out.pixels).size == 1

    def test_validate_rejects_bad_prob(self):
        with pytest.raises(ValueError):
            AugmentConfig(flip_prob=1.5).validate()


# ---- mixing ----

class TestSampleBeta:
    def test_alpha_zero_degenerates(self):
        assert sample_beta(0.0, np.random.default_rng(0)) == 1.0

    def test_range_and_symmetry(self):
        rng = np.random.default_rng(9)
        vals = np.array([sample_beta(0.4, rng) for _ in range(4000)])
        assert (vals > 0).all() and (vals < 1).all()
        npt.assert_allclose(vals.mean(), 0.5, atol=0.03)  # Beta(a,a) mean 1/2

    def test_large_alpha_concentrates(self):
        rng = np.random.default_rng(10)
        vals = np.array([sample_beta(50.0, rng) for _ in range(500)])
        assert vals.std() < 0.08


class TestMixup:
    def make_pair(self):
        rng = np.random.default_rng(11)
        a = Image(rng.uniform(0, 255, (16, 16, 3)), source_id="a")
        b = Image(rng.uniform(0, 255, (16, 16, 3)), source_id="b")
        ta = np.array([1.0, 0.0, 0.0])
        tb = np.array([0.0, 0.0, 1.0])
        return a, b, ta, tb

    def test_convex_blend(self):
        a, b, ta, tb = self.make_pair()
        ms = mixup(a, ta, b, tb, alpha=0.2, rng=np.random.default_rng(3))
        lam = ms.mix_lambda
        npt.assert_allclose(ms.image.pixels, lam * a.pixels + (1 - lam) * b.pixels)
        npt.assert_allclose(ms.class_target, lam * ta + (1 - lam) * tb)
        npt.assert_allclose(ms.class_target.sum(), 1.0)
        assert ms.partner_id == "b"

    def test_shape_mismatch_rejected(self):
        a, _, ta, tb = self.make_pair()
        small = Image(np.zeros((16, 18, 3)), source_id="b")
        with pytest.raises(ValueError):
            mixup(a, ta, small, tb, 0.2, np.random.default_rng(0))


class TestCutmix:
    def make_pair(self):
        a = Image(np.zeros((20, 20, 3)), source_id="a")
        b = Image(np.full((20, 20, 3), 200.0), source_id="b")
        return a, b, np.array([1.0, 0.0]), np.array([0.0, 1.0])

    def test_lambda_matches_pasted_area(self):
        a, b, ta, tb = self.make_pair()
        for seed in range(30):
            ms = cutmix(a, ta, b, tb, alpha=1.0, rng=np.random.default_rng(seed))
            pasted = (ms.image.pixels[:, :, 0] == 200.0).sum()
            expect_lam = 1.0 - pasted / 400.0
            npt.assert_allclose(ms.mix_lambda, expect_lam, atol=1e-12)
            npt.assert_allclose(ms.class_target,
                                expect_lam * ta + (1 - expect_lam) * tb)

    def test_rectangle_is_contiguous(self):
        a, b, ta, tb = self.make_pair()
        ms = cutmix(a, ta, b, tb, alpha=1.0, rng=np.random.default_rng(7))
        mask = ms.image.pixels[:, :, 0] == 200.0
        if mask.any():
            rows = np.flatnonzero(mask.any(axis=1))
            cols = np.flatnonzero(mask.any(axis=0))
            sub = mask[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
            assert sub.all()

    def test_targets_stay_distributions(self):
        rng = np.random.default_rng(12)
        a, b, _, _ = self.make_pair()
        for seed in range(10):
            ta = rng.dirichlet(np.ones(5))
            tb = rng.dirichlet(np.ones(5))
            ms = cutmix(a, ta, b, tb, alpha=1.0, rng=np.random.default_rng(seed))
            npt.assert_allclose(ms.class_target.sum(), 1.0)
            assert (ms.class_target >= 0).all()
