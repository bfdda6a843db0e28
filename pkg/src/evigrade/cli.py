"""Command-line interface.

Subcommands: qc, synth, train, eval, attn, ablate. Exit codes: 0 success,
1 runtime failure, 2 usage error (argparse's native behavior). If the
EVIGRADE_OUT_ROOT environment variable is set, relative output paths are
resolved under it.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from .config import read_kv_config, write_kv_config
from .data import (SyntheticSpec, dataset_fingerprint, load_folder_dataset,
                   make_synthetic, write_dataset)
from .imageio import load_image, save_image_png
from .imageqc import TAU_BRIGHTNESS, TAU_FOCUS, qc_gate
from .lqap import attention_heatmaps
from .metrics import build_report
from .trainer import TrainConfig, evaluate, model_from_checkpoint, train

_IMAGE_EXTS = (".png", ".jpg", ".jpeg")


class UsageError(Exception):
    """Bad invocation (missing files named on the command line, malformed
    flag values): reported like argparse errors, exit code 2."""


def _iter_images(input_dir: str):
    if not os.path.isdir(input_dir):
        raise FileNotFoundError(f"input directory {input_dir!r} does not exist")
    for fname in sorted(os.listdir(input_dir)):
        if fname.lower().endswith(_IMAGE_EXTS):
            yield os.path.join(input_dir, fname)


def cmd_qc(args) -> int:
    rows = []
    for path in _iter_images(args.input_dir):
        verdict = qc_gate(load_image(path), args.tau_brightness, args.tau_focus)
        rows.append(verdict)
    out = args.out or os.path.join(args.input_dir, "qc_report.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_id", "brightness", "focus_score", "accepted",
                         "reject_reason", "crop_box"])
        for v in rows:
            writer.writerow([v.source_id, f"{v.brightness:.6f}", f"{v.focus_score:.6f}",
                             int(v.accepted), v.reject_reason,
                             ",".join(str(int(c)) for c in v.crop_box)])
    n_ok = sum(v.accepted for v in rows)
    print(f"qc: {n_ok}/{len(rows)} accepted -> {out}")
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(num_grades=args.grades, images_per_grade=args.images_per_grade,
                         side=args.side, seed=args.seed)
    ds = make_synthetic(spec)
    write_dataset(ds, args.out)
    total = sum(len(s) for s in ds.splits.values())
    print(f"synth: wrote {total} images ({args.grades} grades) under {args.out}")
    return 0


def _load_train_config(args) -> TrainConfig:
    if args.config and not os.path.isfile(args.config):
        raise UsageError(f"config file {args.config!r} does not exist")
    mapping = read_kv_config(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        mapping[key.strip()] = value.strip()
    if args.seed is not None:
        mapping["seed"] = str(args.seed)
    if args.epochs is not None:
        mapping["epochs"] = str(args.epochs)
    return TrainConfig.from_mapping(mapping)


def cmd_train(args) -> int:
    cfg = _load_train_config(args)
    ds = load_folder_dataset(args.data, target_side=cfg.image_side)
    fp = dataset_fingerprint(args.data)
    model, state = train(cfg, ds, out_dir=args.out, dataset_fp=fp)
    print(f"train: best val QWK {state.best_val_qwk:.4f} at epoch {state.best_epoch}"
          + (" (early stop)" if state.stopped_early else ""))
    if "test" in ds.splits and len(ds.splits["test"]):
        report, _ = evaluate(model, ds.splits["test"], cfg, tta=cfg.tta_enabled)
        print(f"train: test acc {report.accuracy:.4f}  qwk {report.qwk:.4f}")
    return 0


def cmd_eval(args) -> int:
    model, cfg, _ = model_from_checkpoint(args.checkpoint)
    ds = load_folder_dataset(args.data, target_side=cfg.image_side)
    split = args.split
    if split not in ds.splits:
        raise ValueError(f"split {split!r} not present under {args.data!r}")
    tta = bool(args.tta) or cfg.tta_enabled
    report, logs = evaluate(model, ds.splits[split], cfg, tta=tta)
    print(report.to_text())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
        with open(os.path.join(args.out, "per_sample.jsonl"), "w", encoding="utf-8") as fh:
            for entry in logs:
                fh.write(json.dumps(entry) + "\n")
        with open(os.path.join(args.out, "triage.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["u_star", "auto_fraction", "auto_accuracy"])
            for row in report.triage:
                acc = "" if row["auto_accuracy"] is None else f"{row['auto_accuracy']:.6f}"
                writer.writerow([f"{row['u_star']:.4f}", f"{row['auto_fraction']:.6f}", acc])
        print(f"eval: artifacts under {args.out}")
    return 0


def cmd_attn(args) -> int:
    model, cfg, _ = model_from_checkpoint(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    count = 0
    for path in args.images:
        img = load_image(path)
        px = img.pixels
        if px.shape[2] == 1:
            px = np.repeat(px, 3, axis=2)
        if px.shape[0] != cfg.image_side or px.shape[1] != cfg.image_side:
            from .imageio import resize_bilinear
            px = np.clip(resize_bilinear(px, cfg.image_side, cfg.image_side), 0, 255)
        _, maps = model.infer(px.astype(np.float32)[None])
        side = int(round(math.sqrt(maps.shape[-1])))
        heats = attention_heatmaps(maps[0], side, cfg.image_side)
        stem = os.path.splitext(os.path.basename(path))[0]
        for qi, heat in enumerate(heats):
            save_image_png(heat.astype(np.float64),
                           os.path.join(args.out, f"{stem}_q{qi}.png"))
            count += 1
    print(f"attn: wrote {count} heatmaps under {args.out}")
    return 0


def cmd_ablate(args) -> int:
    base = _load_train_config(args)
    ds = load_folder_dataset(args.data, target_side=base.image_side)
    fp = dataset_fingerprint(args.data)
    variants: list[tuple[str, dict]] = []
    if args.axis == "stage":
        variants = [("stage2", {"stage_select": 2}), ("stage3", {"stage_select": 3})]
    elif args.axis == "queries":
        variants = [(f"q{n}", {"num_queries": n}) for n in (4, 8, 16)]
    elif args.axis == "regularizers":
        variants = [("full", {}),
                    ("no_div", {"beta": 0.0}),
                    ("no_lb", {"gamma": 0.0}),
                    ("no_spent", {"eta": 0.0})]
    elif args.axis == "annealing":
        variants = [("annealed", {}), ("constant", {"t_anneal": 1e-9})]
    else:
        raise ValueError(f"unknown ablation axis {args.axis!r}")

    rows = []
    for name, overrides in variants:
        mapping = {k: str(v) for k, v in base.to_flat_mapping().items()}
        mapping.update({k: str(v) for k, v in overrides.items()})
        cfg = TrainConfig.from_mapping(mapping)
        sub_out = os.path.join(args.out, name) if args.out else None
        model, state = train(cfg, ds, out_dir=sub_out, dataset_fp=fp, quiet=True)
        split = "test" if "test" in ds.splits else "val"
        report, _ = evaluate(model, ds.splits[split], cfg, tta=cfg.tta_enabled)
        rows.append((name, report.accuracy, report.qwk, state.best_epoch))
        print(f"ablate[{name}]: acc {report.accuracy:.4f}  qwk {report.qwk:.4f}")

    out_csv = args.results or (os.path.join(args.out, "ablation.csv") if args.out
                               else "ablation.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out_csv)), exist_ok=True)
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "accuracy", "qwk", "best_epoch"])
        for name, acc, qwk, ep in rows:
            writer.writerow([name, f"{acc:.6f}", f"{qwk:.6f}", ep])
    print(f"ablate: results -> {out_csv}")
    return 0


def cmd_init_config(args) -> int:
    parent = os.path.dirname(args.out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    write_kv_config(args.out, TrainConfig().to_flat_mapping())
    print(f"init-config: wrote defaults to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evigrade",
                                     description="Uncertainty-aware ordinal severity grading")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("qc", help="quality-control a directory of images")
    p.add_argument("input_dir")
    p.add_argument("--out", default=None, help="CSV report path")
    p.add_argument("--tau-brightness", type=float, default=TAU_BRIGHTNESS)
    p.add_argument("--tau-focus", type=float, default=TAU_FOCUS)
    p.set_defaults(func=cmd_qc)

    p = sub.add_parser("synth", help="generate a synthetic graded dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--grades", type=int, default=5)
    p.add_argument("--images-per-grade", type=int, default=200)
    p.add_argument("--side", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    def add_train_opts(q):
        q.add_argument("--config", default=None, help="flat key = value config file")
        q.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        q.add_argument("--seed", type=int, default=None)
        q.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    add_train_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--tta", action="store_true")
    p.add_argument("--out", default=None, help="directory for report artifacts")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attn", help="export per-query attention heatmaps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_attn)

    p = sub.add_parser("ablate", help="run an ablation axis")
    p.add_argument("--data", required=True)
    p.add_argument("--axis", required=True,
                   choices=["stage", "queries", "regularizers", "annealing"])
    p.add_argument("--out", default=None, help="directory for per-variant runs")
    p.add_argument("--results", default=None, help="results CSV path")
    add_train_opts(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("init-config", help="write a config file with defaults")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_config)

    return parser


def _apply_out_root(args):
    """Resolve relative output paths under EVIGRADE_OUT_ROOT when set."""
    root = os.environ.get("EVIGRADE_OUT_ROOT")
    if not root:
        return
    for attr in ("out", "results"):
        path = getattr(args, attr, None)
        if path and not os.path.isabs(path):
            setattr(args, attr, os.path.join(root, path))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_out_root(args)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure -> exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
