"""Augmentation gallery: CLAHE, photometric jitter, MixUp and CutMix.

Takes two synthetic images of different severity grades, applies each
augmentation, saves the results as PNGs, and prints the soft class targets
produced by the mixing strategies.

Run:  python demos/augmentation_gallery.py [--out demo_out/augment]
"""

import argparse
import os

import numpy as np

from evigrade.augment import (AugmentConfig, apply_clahe, apply_photometric,
                              cutmix, mixup)
from evigrade.data import SyntheticSpec, make_synthetic
from evigrade.imageio import Image, save_image_png


def fmt(vec):
    return "[" + ", ".join(f"{v:.3f}" for v in vec) + "]"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_out/augment")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    ds = make_synthetic(SyntheticSpec(num_grades=3, images_per_grade=4,
                                      side=128, seed=3))
    tr = ds.splits["train"]
    lo = int(np.flatnonzero(tr.labels == 0)[0])   # blob-free grade
    hi = int(np.flatnonzero(tr.labels == 2)[0])   # many lesions
    img_a = Image(tr.images[lo].astype(np.float64), source_id="grade0")
    img_b = Image(tr.images[hi].astype(np.float64), source_id="grade2")
    onehot_a = np.array([1.0, 0.0, 0.0])
    onehot_b = np.array([0.0, 0.0, 1.0])
    rng = np.random.default_rng(args.seed)

    save_image_png(img_a.pixels, os.path.join(args.out, "original_grade0.png"))
    save_image_png(img_b.pixels, os.path.join(args.out, "original_grade2.png"))

    clahe = apply_clahe(img_a, clip_limit=2.0, grid=8)
    save_image_png(clahe.pixels, os.path.join(args.out, "clahe_grade0.png"))
    print("CLAHE: local contrast on the green-channel tiles, "
          f"pixel range {clahe.pixels.min():.0f}..{clahe.pixels.max():.0f}")

    cfg = AugmentConfig(clahe_prob=0.0)  # photometric only, deterministic draws
    for i in range(3):
        jit = apply_photometric(img_b, cfg, np.random.default_rng(args.seed + i))
        save_image_png(jit.pixels, os.path.join(args.out, f"photometric_{i}.png"))
    print("photometric jitter: wrote 3 random draws (flip/brightness/"
          "contrast/hue/noise/blur)")

    mixed = mixup(img_a, onehot_a, img_b, onehot_b, alpha=2.0, rng=rng)
    save_image_png(mixed.image.pixels, os.path.join(args.out, "mixup.png"))
    print(f"mixup   lam={mixed.mix_lambda:.3f}  target={fmt(mixed.class_target)}")

    cut = cutmix(img_a, onehot_a, img_b, onehot_b, alpha=1.0, rng=rng)
    save_image_png(cut.image.pixels, os.path.join(args.out, "cutmix.png"))
    print(f"cutmix  lam={cut.mix_lambda:.3f}  target={fmt(cut.class_target)}")

    print(f"\nwrote gallery to {args.out}/")


if __name__ == "__main__":
    main()
