"""Image quality control: exposure and focus gating, field-of-view crop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageio import Image, luminance, resize_bilinear

__all__ = [
    "QcVerdict", "CropResult",
    "mean_brightness", "laplacian_variance", "crop_fundus", "qc_gate",
    "TAU_BRIGHTNESS", "TAU_FOCUS",
]

TAU_BRIGHTNESS = 15.0
TAU_FOCUS = 50.0
BORDER_THRESHOLD = 10.0
MARGIN_FRAC = 0.02


@dataclass
class CropResult:
    image: Image
    box: tuple  # (top, left, height, width) in source coordinates
    full_frame: bool = False


@dataclass
class QcVerdict:
    source_id: str
    brightness: float
    focus_score: float
    crop_box: tuple
    accepted: bool
    reject_reason: str  # "none" | "underexposed" | "blurry"


def _pixels(img) -> np.ndarray:
    # Measurement ops also take bare arrays; the Image dataclass enforces
    # pipeline-sized frames, which would rule out tiny calibration patterns.
    return img.pixels if isinstance(img, Image) else np.asarray(img, dtype=np.float64)


def mean_brightness(img) -> float:
    """Mean over all pixels and channels."""
    px = _pixels(img)
    if px.size == 0:
        raise ValueError("empty image")
    return float(px.mean())


def laplacian_variance(img) -> float:
    """Population variance of the 3x3 Laplacian response on luminance.

    Only the valid interior (no padding) enters the variance.
    """
    lum = luminance(_pixels(img))
    h, w = lum.shape
    if h < 3 or w < 3:
        raise ValueError("image smaller than the 3x3 Laplacian kernel")
    resp = (lum[:-2, 1:-1] + lum[2:, 1:-1] + lum[1:-1, :-2] + lum[1:-1, 2:]
            - 4.0 * lum[1:-1, 1:-1])
    return float(resp.var())


def _field_box(img: Image, border_threshold: float, margin_frac: float) -> tuple:
    """(box, full_frame_flag) for the above-threshold field of view."""
    lum = luminance(img)
    h, w = lum.shape
    mask = lum > border_threshold
    if not mask.any():
        return (0, 0, h, w), True
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    top, bottom = int(rows[0]), int(rows[-1]) + 1
    left, right = int(cols[0]), int(cols[-1]) + 1
    mr = int(np.ceil((bottom - top) * margin_frac))
    mc = int(np.ceil((right - left) * margin_frac))
    top = max(0, top - mr)
    bottom = min(h, bottom + mr)
    left = max(0, left - mc)
    right = min(w, right + mc)
    return (top, left, bottom - top, right - left), False


def crop_fundus(img: Image, out_side: int = 512,
                border_threshold: float = BORDER_THRESHOLD,
                margin_frac: float = MARGIN_FRAC) -> CropResult:
    """Tight crop of the field of view plus a relative margin, then resize.

    Rows/columns whose luminance never exceeds `border_threshold` are treated
    as border. If nothing exceeds the threshold the full frame is returned
    with a warning flag instead.
    """
    box, full = _field_box(img, border_threshold, margin_frac)
    region = img.pixels[box[0]:box[0] + box[2], box[1]:box[1] + box[3], :]
    resized = np.clip(resize_bilinear(region, out_side, out_side), 0.0, 255.0)
    return CropResult(Image(resized, source_id=img.source_id), box, full_frame=full)


def qc_gate(img: Image, tau_brightness: float = TAU_BRIGHTNESS,
            tau_focus: float = TAU_FOCUS) -> QcVerdict:
    """Accept iff brightness and focus both clear their thresholds.

    Underexposure is reported first when both checks fail.
    """
    b = mean_brightness(img)
    f = laplacian_variance(img)
    if b < tau_brightness:
        accepted, reason = False, "underexposed"
    elif f < tau_focus:
        accepted, reason = False, "blurry"
    else:
        accepted, reason = True, "none"
    box, _ = _field_box(img, BORDER_THRESHOLD, MARGIN_FRAC)
    return QcVerdict(img.source_id, b, f, box, accepted, reason)
