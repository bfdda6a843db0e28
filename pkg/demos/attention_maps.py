"""Visualize where each learned query looks on held-out images.

Trains briefly on synthetic data (or reuses a checkpoint), then exports one
grayscale heatmap per query for a few test images, alongside the pooling
weight each query received.

Run:  python demos/attention_maps.py [--out demo_out/attn]
      python demos/attention_maps.py --checkpoint demo_out/train/checkpoint_best.npz
"""

import argparse
import math
import os

import numpy as np

from evigrade.data import SyntheticSpec, make_synthetic
from evigrade.imageio import save_image_png
from evigrade.lqap import attention_heatmaps
from evigrade.ordinal import decode, predict_grade
from evigrade.trainer import TrainConfig, model_from_checkpoint, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_out/attn")
    ap.add_argument("--checkpoint", default="",
                    help="reuse a training checkpoint instead of training here")
    ap.add_argument("--images", type=int, default=3)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    ds = make_synthetic(SyntheticSpec(num_grades=3, images_per_grade=60,
                                      side=64, seed=5))
    if args.checkpoint:
        model, cfg, meta = model_from_checkpoint(args.checkpoint)
        print(f"loaded checkpoint from epoch {meta['epoch']}")
    else:
        cfg = TrainConfig(num_grades=3, image_side=64, epochs=15, seed=0)
        print("training a small model first (15 epochs)...")
        model, state = train(cfg, ds, quiet=True)
        print(f"done, best val QWK {state.best_val_qwk:.3f}")

    # one held-out image per grade shows how the focus shifts with severity
    test = ds.splits["test"]
    grades = np.unique(test.labels)[:args.images]
    picks = [int(np.flatnonzero(test.labels == g)[0]) for g in grades]
    x = test.images[picks].astype(np.float32)
    out, maps = model.infer(x)
    side = int(round(math.sqrt(maps.shape[-1])))

    # pooling weights tell how much each query's view contributed
    _, record = model.forward(x, train=False)
    weights = record.pooling_weights.value

    for j, i in enumerate(picks):
        save_image_png(test.images[i].astype(np.float64),
                       os.path.join(args.out, f"{test.ids[i]}_input.png"))
        heats = attention_heatmaps(maps[j], side, cfg.image_side)
        for qi, heat in enumerate(heats):
            save_image_png(heat.astype(np.float64),
                           os.path.join(args.out, f"{test.ids[i]}_q{qi}.png"))
        w = ", ".join(f"q{qi}={weights[j, qi]:.2f}"
                      for qi in range(weights.shape[1]))
        pred = int(predict_grade(decode(out.pi_hat[j])))
        print(f"{test.ids[i]}: true={test.labels[i]} pred={pred} "
              f"u={out.u_mean[j]:.2f}  weights {w}")

    print(f"\nwrote {len(picks)} images x {maps.shape[1]} query heatmaps "
          f"to {args.out}/")


if __name__ == "__main__":
    main()
