"""Image container and 8-bit PNG/JPEG ingestion."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PilImage

__all__ = ["Image", "load_image", "save_image_png", "luminance", "resize_bilinear"]

# Rec.601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])

MIN_SIDE = 16


@dataclass
class Image:
    """Float image, (H, W, C) with C in {1, 3}, values in [0, 255]."""

    pixels: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W, 1|3) pixels, got shape {np.shape(self.pixels)}")
        if px.shape[0] < MIN_SIDE or px.shape[1] < MIN_SIDE:
            raise ValueError(f"image sides must be >= {MIN_SIDE}, got {px.shape[:2]}")
        if not np.isfinite(px).all():
            raise ValueError("pixel values must be finite")
        if px.min() < 0.0 or px.max() > 255.0:
            raise ValueError("pixel values must lie in [0, 255]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def load_image(path: str) -> Image:
    """Read an 8-bit PNG or JPEG; grayscale stays single-channel."""
    with PilImage.open(path) as im:
        if im.mode in ("L", "I;16"):
            im = im.convert("L")
            arr = np.asarray(im, dtype=np.float64)[:, :, None]
        else:
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64)
    return Image(arr, source_id=os.path.basename(path))


def save_image_png(img, path: str) -> None:
    """Write to 8-bit PNG, rounding float values."""
    arr = img.pixels if isinstance(img, Image) else np.asarray(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    arr = np.clip(np.round(arr), 0, 255).astype(np.uint8)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    PilImage.fromarray(arr).save(path, format="PNG")


def luminance(img) -> np.ndarray:
    """Rec.601 luminance as (H, W); single-channel images pass through."""
    px = img.pixels if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    if px.ndim == 2:
        return px
    if px.shape[2] == 1:
        return px[:, :, 0]
    return px @ _LUMA


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of (H, W) or (H, W, C) float arrays."""
    a = np.asarray(arr, dtype=np.float32)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[:, :, None]
    if a.shape[0] == out_h and a.shape[1] == out_w:
        out = a.astype(np.float64)
        return out[:, :, 0] if squeeze else out
    chans = [
        np.asarray(
            PilImage.fromarray(a[:, :, c], mode="F").resize(
                (out_w, out_h), resample=PilImage.BILINEAR
            ),
            dtype=np.float64,
        )
        for c in range(a.shape[2])
    ]
    out = np.stack(chans, axis=-1)
    return out[:, :, 0] if squeeze else out
