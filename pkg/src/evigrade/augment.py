"""Training-time augmentation: CLAHE, photometric jitter, mixup/cutmix.

All randomness comes from an explicit numpy Generator so a (seed, epoch,
sample) keyed stream reproduces any augmented sample in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import gaussian_filter

from .imageio import Image, luminance

__all__ = [
    "AugmentConfig", "MixedSample",
    "apply_clahe", "apply_photometric", "augment_training_sample",
    "mixup", "cutmix", "sample_beta",
]


@dataclass
class AugmentConfig:
    clahe_prob: float = 0.3
    clahe_clip_limit: float = 2.0
    clahe_grid: int = 8
    flip_prob: float = 0.5
    brightness_contrast_prob: float = 0.5
    brightness_delta: float = 0.2     # fraction of full range
    contrast_delta: float = 0.2
    hue_sat_prob: float = 0.5
    hue_delta_deg: float = 10.0
    sat_delta: float = 0.15
    noise_prob: float = 0.3
    noise_sigma_max: float = 10.0
    blur_prob: float = 0.3
    blur_sigma_max: float = 1.5
    mix_prob: float = 0.3             # chance a batch is mixed at all
    mixup_alpha: float = 0.2
    cutmix_alpha: float = 1.0

    def validate(self):
        for name in ("clahe_prob", "flip_prob", "brightness_contrast_prob",
                     "hue_sat_prob", "noise_prob", "blur_prob", "mix_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.clahe_clip_limit <= 0.0:
            raise ValueError("clahe_clip_limit must be positive")
        if self.clahe_grid < 1:
            raise ValueError("clahe_grid must be >= 1")
        if self.mixup_alpha < 0.0 or self.cutmix_alpha < 0.0:
            raise ValueError("mix alphas must be >= 0")
        return self


@dataclass
class MixedSample:
    image: Image
    class_target: np.ndarray
    mix_lambda: float
    partner_id: str = ""


# ---- CLAHE ----

def _tile_lut(idx: np.ndarray, clip_limit: float) -> np.ndarray:
    """Equalization lookup table for one tile of quantized luminance.

    Convention: map v -> 255*(cdf(v)-cdf_min)/(n-cdf_min), clipped to
    [0, 255], where cdf_min is the cdf at the lowest occupied level. A tile
    with a single occupied level maps identically (fixed point). Histogram
    counts above the clip limit are redistributed uniformly first.
    """
    hist = np.bincount(idx.ravel(), minlength=256).astype(np.float64)
    n = hist.sum()
    if (hist > 0).sum() <= 1:
        return np.arange(256, dtype=np.float64)
    if math.isfinite(clip_limit):
        cap = clip_limit * n / 256.0
        excess = np.maximum(hist - cap, 0.0).sum()
        hist = np.minimum(hist, cap) + excess / 256.0
    cdf = np.cumsum(hist)
    first = int(np.argmax(hist > 0.0))
    cdf_min = cdf[first]
    if n == cdf_min:
        return np.arange(256, dtype=np.float64)
    lut = 255.0 * (cdf - cdf_min) / (n - cdf_min)
    return np.clip(lut, 0.0, 255.0)


def apply_clahe(img: Image, clip_limit: float = 2.0, grid: int = 8) -> Image:
    """Contrast-limited adaptive histogram equalization on luminance.

    Per-tile LUTs over a grid x grid partition, blended bilinearly between
    neighboring tile centers. Color images are rescaled channel-wise by the
    luminance ratio. Set clip_limit=inf to disable clipping.
    """
    if clip_limit <= 0.0:
        raise ValueError("clip_limit must be positive")
    h, w = img.height, img.width
    if grid < 1 or grid > min(h, w):
        raise ValueError(f"grid {grid} incompatible with image {h}x{w}")

    lum = luminance(img)
    idx = np.clip(np.floor(lum), 0, 255).astype(np.intp)

    ys = [round(i * h / grid) for i in range(grid + 1)]
    xs = [round(j * w / grid) for j in range(grid + 1)]
    luts = np.empty((grid, grid, 256))
    for i in range(grid):
        for j in range(grid):
            luts[i, j] = _tile_lut(idx[ys[i]:ys[i + 1], xs[j]:xs[j + 1]], clip_limit)

    # bilinear blend between the 4 nearest tile centers, clamped at borders
    cy = (np.arange(h) + 0.5) / (h / grid) - 0.5
    cx = (np.arange(w) + 0.5) / (w / grid) - 0.5
    y0 = np.clip(np.floor(cy).astype(int), 0, grid - 1)
    x0 = np.clip(np.floor(cx).astype(int), 0, grid - 1)
    y1 = np.minimum(y0 + 1, grid - 1)
    x1 = np.minimum(x0 + 1, grid - 1)
    fy = np.clip(cy - y0, 0.0, 1.0)[:, None]
    fx = np.clip(cx - x0, 0.0, 1.0)[None, :]

    y0g, x0g = y0[:, None], x0[None, :]
    y1g, x1g = y1[:, None], x1[None, :]
    m00 = luts[y0g, x0g, idx]
    m01 = luts[y0g, x1g, idx]
    m10 = luts[y1g, x0g, idx]
    m11 = luts[y1g, x1g, idx]
    mapped = ((1 - fy) * (1 - fx) * m00 + (1 - fy) * fx * m01
              + fy * (1 - fx) * m10 + fy * fx * m11)

    if img.channels == 1:
        out = mapped[:, :, None]
    else:
        ratio = mapped / np.maximum(lum, 1e-6)
        out = img.pixels * ratio[:, :, None]
    return Image(np.clip(out, 0.0, 255.0), source_id=img.source_id)


# ---- photometric jitter ----

def apply_photometric(img: Image, cfg: AugmentConfig, rng: np.random.Generator) -> Image:
    """Flips, brightness/contrast, hue/saturation, noise, blur — each gated
    by its probability, applied in that fixed order."""
    px = img.pixels.copy()

    if rng.random() < cfg.flip_prob:
        px = px[:, ::-1, :]
    if rng.random() < cfg.flip_prob:
        px = px[::-1, :, :]

    if rng.random() < cfg.brightness_contrast_prob:
        db = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta) * 255.0
        dc = 1.0 + rng.uniform(-cfg.contrast_delta, cfg.contrast_delta)
        mean = px.mean()
        px = (px - mean) * dc + mean + db

    if img.channels == 3 and rng.random() < cfg.hue_sat_prob:
        dh = rng.uniform(-cfg.hue_delta_deg, cfg.hue_delta_deg) / 360.0
        ds = 1.0 + rng.uniform(-cfg.sat_delta, cfg.sat_delta)
        hsv = rgb_to_hsv(np.clip(px, 0.0, 255.0) / 255.0)
        hsv[:, :, 0] = (hsv[:, :, 0] + dh) % 1.0
        hsv[:, :, 1] = np.clip(hsv[:, :, 1] * ds, 0.0, 1.0)
        px = hsv_to_rgb(hsv) * 255.0

    if rng.random() < cfg.noise_prob:
        sigma = rng.uniform(0.0, cfg.noise_sigma_max)
        px = px + rng.normal(0.0, sigma, size=px.shape)

    if rng.random() < cfg.blur_prob:
        sigma = rng.uniform(0.1, cfg.blur_sigma_max)
        px = gaussian_filter(px, sigma=(sigma, sigma, 0.0))

    return Image(np.clip(px, 0.0, 255.0), source_id=img.source_id)


def augment_training_sample(img: Image, cfg: AugmentConfig,
                            rng: np.random.Generator) -> Image:
    """Full stochastic pipeline for one training sample."""
    if rng.random() < cfg.clahe_prob:
        img = apply_clahe(img, cfg.clahe_clip_limit, cfg.clahe_grid)
    return apply_photometric(img, cfg, rng)


# ---- sample mixing ----

def sample_beta(alpha: float, rng: np.random.Generator) -> float:
    """Beta(alpha, alpha) via two Gamma draws; alpha=0 degenerates to 1."""
    if alpha == 0.0:
        return 1.0
    g1 = rng.gamma(alpha)
    g2 = rng.gamma(alpha)
    return float(g1 / (g1 + g2))


def _check_pair(a: Image, b: Image, ta, tb):
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"shape mismatch: {a.pixels.shape} vs {b.pixels.shape}")
    ta = np.asarray(ta, dtype=np.float64)
    tb = np.asarray(tb, dtype=np.float64)
    if ta.shape != tb.shape:
        raise ValueError("class target shapes differ")
    return ta, tb


def mixup(img_a: Image, target_a, img_b: Image, target_b,
          alpha: float, rng: np.random.Generator) -> MixedSample:
    """Convex pixel/target blend, lambda ~ Beta(alpha, alpha)."""
    ta, tb = _check_pair(img_a, img_b, target_a, target_b)
    lam = sample_beta(alpha, rng)
    px = lam * img_a.pixels + (1.0 - lam) * img_b.pixels
    tgt = lam * ta + (1.0 - lam) * tb
    return MixedSample(Image(np.clip(px, 0.0, 255.0), source_id=img_a.source_id),
                       tgt, lam, partner_id=img_b.source_id)


def cutmix(img_a: Image, target_a, img_b: Image, target_b,
           alpha: float, rng: np.random.Generator) -> MixedSample:
    """Paste a random rectangle of b into a; lambda = kept-area fraction."""
    ta, tb = _check_pair(img_a, img_b, target_a, target_b)
    h, w = img_a.height, img_a.width
    lam_raw = sample_beta(alpha, rng)
    rh = int(round(h * math.sqrt(1.0 - lam_raw)))
    rw = int(round(w * math.sqrt(1.0 - lam_raw)))
    cy = int(rng.integers(0, h))
    cx = int(rng.integers(0, w))
    top = max(0, cy - rh // 2)
    bottom = min(h, cy + (rh + 1) // 2)
    left = max(0, cx - rw // 2)
    right = min(w, cx + (rw + 1) // 2)
    px = img_a.pixels.copy()
    px[top:bottom, left:right, :] = img_b.pixels[top:bottom, left:right, :]
    lam = 1.0 - (bottom - top) * (right - left) / (h * w)
    tgt = lam * ta + (1.0 - lam) * tb
    return MixedSample(Image(px, source_id=img_a.source_id), tgt, lam,
                       partner_id=img_b.source_id)
