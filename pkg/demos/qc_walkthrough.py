"""Quality-control walkthrough: crop, score, and gate a mixed image corpus.

Builds a small corpus of clean synthetic fundus-style images plus injected
failures (all-dark frames, heavily blurred copies, a black-bordered frame),
then runs every image through the crop + brightness/focus gate and prints
one verdict row per image.

Run:  python demos/qc_walkthrough.py [--out demo_out/qc]
"""

import argparse
import os

import numpy as np
import scipy.ndimage as ndi

from evigrade.data import SyntheticSpec, make_synthetic
from evigrade.imageio import Image, save_image_png
from evigrade.imageqc import crop_fundus, qc_gate


def build_corpus():
    ds = make_synthetic(SyntheticSpec(num_grades=3, images_per_grade=10,
                                      side=128, seed=7))
    clean = ds.splits["train"].images.astype(np.float64)
    corpus = [(f"clean_{i:02d}", clean[i]) for i in range(8)]

    for i in range(2):
        corpus.append((f"dark_{i}", np.zeros((128, 128, 3))))
    for i in range(2):
        blurred = ndi.gaussian_filter(clean[8 + i], sigma=(8, 8, 0))
        corpus.append((f"blurred_{i}", np.clip(blurred, 0, 255)))

    # one frame with a wide black border so the crop has work to do
    bordered = np.zeros((192, 192, 3))
    bordered[32:160, 32:160] = clean[5]
    corpus.append(("bordered_0", bordered))
    return corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_out/qc")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    corpus = build_corpus()
    print(f"{'image':<12} {'brightness':>10} {'focus':>10} {'verdict':>9} "
          f"{'reason':>12}  crop box")
    accepted = 0
    for name, pixels in corpus:
        img = Image(pixels, source_id=name)
        v = qc_gate(img)
        accepted += v.accepted
        verdict = "accept" if v.accepted else "REJECT"
        print(f"{name:<12} {v.brightness:>10.1f} {v.focus_score:>10.1f} "
              f"{verdict:>9} {v.reject_reason:>12}  {v.crop_box}")

    print(f"\naccepted {accepted}/{len(corpus)}")

    # show what the field-of-view crop does to the bordered frame
    name, pixels = corpus[-1]
    crop = crop_fundus(Image(pixels, source_id=name), out_side=128)
    save_image_png(pixels, os.path.join(args.out, "bordered_before.png"))
    save_image_png(crop.image.pixels, os.path.join(args.out, "bordered_after.png"))
    print(f"crop of {name}: box={crop.box} full_frame={crop.full_frame}")
    print(f"wrote before/after crops to {args.out}/")


if __name__ == "__main__":
    main()
