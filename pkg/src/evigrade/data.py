"""Synthetic graded corpus and on-disk dataset handling.

Images are dark, textured circular fields with bright blob clusters; the
grade determines how many blobs appear, with strictly increasing and
non-overlapping per-grade count ranges so severity is identifiable.
Layout on disk: <root>/<split>/<grade>/img_<n>.png with grades "0".."K-1".
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .imageio import load_image, resize_bilinear, save_image_png
from .utils import stream

__all__ = [
    "SyntheticSpec", "Samples", "Dataset",
    "default_count_ranges", "make_synthetic", "write_dataset",
    "load_folder_dataset", "dataset_fingerprint",
]

SPLITS = ("train", "val", "test")
SPLIT_FRACS = (0.70, 0.15, 0.15)


def default_count_ranges(num_grades: int) -> tuple:
    """Strictly increasing, non-overlapping blob-count ranges per grade."""
    if num_grades == 5:
        return ((0, 0), (2, 4), (7, 10), (14, 18), (24, 30))
    ranges = []
    prev_hi = -1
    for g in range(num_grades):
        lo = int(round(30.0 * (g / max(1, num_grades - 1)) ** 2))
        lo = max(lo, prev_hi + 2) if g > 0 else 0
        hi = lo + max(0, lo // 4) if g > 0 else 0
        ranges.append((lo, hi))
        prev_hi = hi
    return tuple(ranges)


@dataclass
class SyntheticSpec:
    num_grades: int = 5
    images_per_grade: int = 200
    side: int = 128
    count_ranges: tuple = None
    radius_range: tuple = (2.0, 4.5)
    intensity_range: tuple = (70.0, 160.0)
    bg_noise: float = 6.0
    seed: int = 0

    def __post_init__(self):
        if self.num_grades < 2:
            raise ValueError("need at least 2 grades")
        if self.images_per_grade < 1:
            raise ValueError("images_per_grade must be >= 1")
        if self.count_ranges is None:
            self.count_ranges = default_count_ranges(self.num_grades)
        if len(self.count_ranges) != self.num_grades:
            raise ValueError("one count range per grade is required")
        prev = None
        for lo, hi in self.count_ranges:
            if lo > hi or lo < 0:
                raise ValueError(f"bad count range ({lo}, {hi})")
            if prev is not None and (lo <= prev[0] or hi <= prev[1] or lo <= prev[1]):
                raise ValueError("count ranges must be strictly increasing and disjoint")
            prev = (lo, hi)


@dataclass
class Samples:
    images: np.ndarray          # (N, side, side, 3) uint8
    labels: np.ndarray          # (N,) int
    ids: list[str] = field(default_factory=list)

    def __len__(self):
        return self.images.shape[0]


@dataclass
class Dataset:
    splits: dict
    num_grades: int
    side: int


def _render_image(grade: int, spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    s = spec.side
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    cx = s / 2 + rng.uniform(-0.02, 0.02) * s
    cy = s / 2 + rng.uniform(-0.02, 0.02) * s
    radius = 0.46 * s * rng.uniform(0.97, 1.03)
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    field = dist <= radius

    base = np.array([95.0, 55.0, 35.0])
    tex = gaussian_filter(rng.normal(0.0, 1.0, (s, s)), sigma=s / 10.0)
    tex = tex / max(1e-9, np.abs(tex).max())
    img = np.zeros((s, s, 3))
    shade = (1.0 + 0.20 * tex)[:, :, None]
    img[field] = (base[None, :] * shade[field])

    lo, hi = spec.count_ranges[grade]
    n_blobs = int(rng.integers(lo, hi + 1))
    for _ in range(n_blobs):
        r = radius * 0.85 * np.sqrt(rng.uniform())
        th = rng.uniform(0.0, 2.0 * np.pi)
        by, bx = cy + r * np.sin(th), cx + r * np.cos(th)
        br = rng.uniform(*spec.radius_range)
        amp = rng.uniform(*spec.intensity_range)
        bump = amp * np.exp(-((yy - by) ** 2 + (xx - bx) ** 2) / (2.0 * br * br))
        img[:, :, 0] += bump
        img[:, :, 1] += 0.85 * bump
        img[:, :, 2] += 0.25 * bump

    img += rng.normal(0.0, spec.bg_noise, img.shape)
    img[~field] *= 0.15
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def make_synthetic(spec: SyntheticSpec) -> Dataset:
    """Generate and split a graded corpus, stratified 70/15/15 by grade."""
    per_split = {name: {"images": [], "labels": [], "ids": []} for name in SPLITS}
    n = spec.images_per_grade
    n_train = int(round(SPLIT_FRACS[0] * n))
    n_val = int(round(SPLIT_FRACS[1] * n))
    for g in range(spec.num_grades):
        imgs = [_render_image(g, spec, stream(spec.seed, "synth", g, i)) for i in range(n)]
        order = stream(spec.seed, "split", g).permutation(n)
        bounds = {"train": order[:n_train],
                  "val": order[n_train:n_train + n_val],
                  "test": order[n_train + n_val:]}
        for split, idxs in bounds.items():
            for i in idxs:
                per_split[split]["images"].append(imgs[i])
                per_split[split]["labels"].append(g)
                per_split[split]["ids"].append(f"{split}_g{g}_{int(i):04d}")
    splits = {}
    for name, d in per_split.items():
        splits[name] = Samples(np.stack(d["images"]) if d["images"] else
                               np.zeros((0, spec.side, spec.side, 3), dtype=np.uint8),
                               np.asarray(d["labels"], dtype=np.int64), d["ids"])
    return Dataset(splits, spec.num_grades, spec.side)


def write_dataset(ds: Dataset, root: str) -> None:
    """PNG tree: <root>/<split>/<grade>/img_<n>.png (n per grade, in order)."""
    for split, samples in ds.splits.items():
        counters = {}
        for img, label in zip(samples.images, samples.labels):
            g = int(label)
            n = counters.get(g, 0)
            counters[g] = n + 1
            path = os.path.join(root, split, str(g), f"img_{n:04d}.png")
            save_image_png(img.astype(np.float64), path)


def load_folder_dataset(root: str, target_side: int | None = None) -> Dataset:
    """Read a <root>/<split>/<grade>/*.png tree back into memory."""
    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset root {root!r} does not exist")
    splits = {}
    grades_seen = set()
    side = None
    for split in SPLITS:
        sdir = os.path.join(root, split)
        if not os.path.isdir(sdir):
            continue
        images, labels, ids = [], [], []
        for gname in sorted(os.listdir(sdir), key=lambda x: (len(x), x)):
            gdir = os.path.join(sdir, gname)
            if not os.path.isdir(gdir) or not gname.isdigit():
                continue
            g = int(gname)
            grades_seen.add(g)
            for fname in sorted(os.listdir(gdir)):
                if not fname.lower().endswith((".png", ".jpg", ".jpeg")):
                    continue
                img = load_image(os.path.join(gdir, fname))
                px = img.pixels
                if px.shape[2] == 1:
                    px = np.repeat(px, 3, axis=2)
                if target_side is not None and (px.shape[0] != target_side or px.shape[1] != target_side):
                    px = np.clip(resize_bilinear(px, target_side, target_side), 0.0, 255.0)
                if side is None:
                    side = px.shape[0]
                images.append(np.clip(np.round(px), 0, 255).astype(np.uint8))
                labels.append(g)
                ids.append(f"{split}/{gname}/{fname}")
        if images:
            splits[split] = Samples(np.stack(images), np.asarray(labels, dtype=np.int64), ids)
    if not splits:
        raise ValueError(f"no samples found under {root!r}")
    num_grades = max(grades_seen) + 1
    return Dataset(splits, num_grades, side)


def dataset_fingerprint(root: str) -> str:
    """SHA-256 over sorted relative paths and file contents."""
    h = hashlib.sha256()
    entries = []
    for dirpath, _, filenames in os.walk(root):
        for fname in filenames:
            full = os.path.join(dirpath, fname)
            entries.append((os.path.relpath(full, root), full))
    for rel, full in sorted(entries):
        h.update(rel.encode())
        with open(full, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()
