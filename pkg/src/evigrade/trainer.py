"""Training loop: AdamW with warmup+cosine schedule, EMA, early stopping.

Every random draw comes from a Philox stream keyed by (seed, purpose,
epoch, ...), so a run is reproducible bit-for-bit and any single sample's
augmentation can be replayed in isolation.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field, fields

import numpy as np

from . import __version__
from . import autodiff as ad
from .augment import AugmentConfig, augment_training_sample, cutmix, mixup
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunManifest, write_manifest
from .data import Dataset, Samples
from .evidential import AnnealSchedule, EvidentialOutput, edl_loss, lambda_at
from .imageio import Image, save_image_png
from .lqap import (attention_heatmaps, diversity_loss, load_balance_loss,
                   spatial_entropy_penalty)
from .metrics import EvalReport, build_report
from .model import GradingModel
from .ordinal import decode, encode_hard, encode_soft, predict_grade, threshold_count_grade
from .utils import stream

__all__ = [
    "TrainConfig", "TrainState", "AdamW", "Ema", "lr_at",
    "total_loss", "train", "evaluate", "build_model", "model_from_checkpoint",
    "HISTORY_COLUMNS",
]

HISTORY_COLUMNS = ("epoch", "train_loss", "L_EDL", "L_div", "L_lb", "L_spent",
                   "val_acc", "val_qwk", "val_u_mean", "lr", "lambda")


@dataclass
class TrainConfig:
    # data / model
    num_grades: int = 5
    image_side: int = 128
    stage_select: int = 2
    token_dim: int = 64
    num_queries: int = 8
    decoder_depth: int = 2
    temperature: float = 0.5
    temperature_final: float = 0.0   # > 0 enables a linear temperature ramp
    ffn_mult: int = 2
    query_dropout: float = 0.1
    # optimization
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.05
    warmup_epochs: float = 1.0
    lr_floor_frac: float = 0.01
    ema_decay: float = 0.999
    early_stop_patience: int = 10
    # objective
    beta: float = 0.1
    gamma: float = 0.01
    eta: float = 0.01
    div_margin: float = 0.25
    entropy_min: float = 0.0
    entropy_max: float = -1.0        # < 0 means ln(M): penalty inert by default
    lambda_max: float = 0.1
    t_anneal: float = 10.0
    # evaluation / misc
    tta_enabled: bool = False
    decode_mode: str = "argmax"      # or "threshold_count"
    eval_batch: int = 64
    attn_export_every: int = 0       # epochs between heatmap dumps; 0 = off
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self):
        if self.num_grades < 2:
            raise ValueError("num_grades must be >= 2")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in [0, 1)")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        if self.decode_mode not in ("argmax", "threshold_count"):
            raise ValueError("decode_mode must be 'argmax' or 'threshold_count'")
        if min(self.beta, self.gamma, self.eta, self.lambda_max) < 0:
            raise ValueError("loss weights must be >= 0")
        self.augment.validate()
        return self

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        """Build from flat string keys; augmentation keys use an aug_ prefix."""
        cfg = cls()
        own = {f.name: f.type for f in fields(cls) if f.name != "augment"}
        aug_fields = {f.name for f in fields(AugmentConfig)}
        for key, raw in mapping.items():
            if key.startswith("aug_"):
                name = key[4:]
                if name not in aug_fields:
                    raise KeyError(f"unknown augment key {key!r}")
                cur = getattr(cfg.augment, name)
                setattr(cfg.augment, name, _coerce(raw, type(cur), key))
            elif key in own:
                cur = getattr(cfg, key)
                setattr(cfg, key, _coerce(raw, type(cur), key))
            else:
                raise KeyError(f"unknown config key {key!r}")
        return cfg.validate()

    def to_flat_mapping(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "augment":
                continue
            out[f.name] = getattr(self, f.name)
        for f in fields(AugmentConfig):
            out[f"aug_{f.name}"] = getattr(self.augment, f.name)
        return out


def _coerce(raw, target_type, key):
    if isinstance(raw, target_type) and not isinstance(raw, str):
        return raw
    s = str(raw).strip()
    if target_type is bool:
        if s.lower() in ("1", "true", "yes", "on"):
            return True
        if s.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: cannot parse boolean from {raw!r}")
    if target_type is int:
        return int(s)
    if target_type is float:
        return float(s)
    return s


@dataclass
class TrainState:
    epoch: int = -1
    global_step: int = 0
    best_val_qwk: float = -np.inf
    best_epoch: int = -1
    stopped_early: bool = False
    checkpoint_path: str = ""
    history: list = field(default_factory=list)


# ---- optimization ----

def lr_at(step: int, cfg: TrainConfig, steps_per_epoch: int) -> float:
    """Linear warmup to the peak, then cosine decay to a 1% floor.

    Time is measured in fractional epochs; the rate is exactly 0 at step 0
    and exactly the peak at the end of warmup.
    """
    if steps_per_epoch < 1:
        raise ValueError("steps_per_epoch must be >= 1")
    t = step / steps_per_epoch
    peak = cfg.lr
    floor = peak * cfg.lr_floor_frac
    if cfg.warmup_epochs > 0 and t < cfg.warmup_epochs:
        return peak * t / cfg.warmup_epochs
    span = max(cfg.epochs - cfg.warmup_epochs, 1e-12)
    prog = min(1.0, (t - cfg.warmup_epochs) / span)
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * prog))


class AdamW:
    """Adam with decoupled weight decay (decay only on >= 2-D tensors)."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.skipped_steps = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float):
        for k, p in self.params.items():
            if p.grad is not None and not np.isfinite(p.grad).all():
                self.skipped_steps += 1
                warnings.warn(f"non-finite gradient in {k!r}; skipping step")
                return
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay > 0.0 and p.value.ndim >= 2:
                update = update + self.weight_decay * p.value
            p.value = p.value - lr * update


class Ema:
    """Exponential moving average of parameter values."""

    def __init__(self, params: dict):
        self.shadow = {k: p.value.astype(np.float64).copy() for k, p in params.items()}

    def update(self, params: dict, decay: float):
        if not 0.0 <= decay < 1.0:
            raise ValueError("decay must be in [0, 1)")
        for k, p in params.items():
            self.shadow[k] = decay * self.shadow[k] + (1.0 - decay) * p.value.astype(np.float64)

    @contextmanager
    def applied(self, params: dict):
        saved = {k: p.value for k, p in params.items()}
        for k, p in params.items():
            p.value = self.shadow[k].astype(saved[k].dtype)
        try:
            yield
        finally:
            for k, p in params.items():
                p.value = saved[k]


def ema_decay_at(step: int, decay: float) -> float:
    """Warmed-up effective decay min(decay, (1+t)/(10+t)).

    A flat decay near 1 would keep the shadow pinned to the random init for
    the short runs this trainer targets; the warmup lets it track early
    progress and converge to the configured decay.
    """
    return min(decay, (1.0 + step) / (10.0 + step))


# ---- objective ----

def total_loss(head_out: dict, record, targets: np.ndarray, epoch_t: float,
               cfg: TrainConfig) -> tuple:
    """Composite objective and its per-term numeric breakdown."""
    sched = AnnealSchedule(cfg.lambda_max, cfg.t_anneal)
    loss, parts = edl_loss(head_out["pi_hat"], head_out["alpha"], targets,
                           epoch_t, sched)
    breakdown = {
        "L_EDL": float(loss.value),
        "bce": parts["bce"], "kl": parts["kl"],
        "kl_weighted": parts["kl_weighted"], "lambda": parts["lambda"],
        "L_div": 0.0, "L_lb": 0.0, "L_spent": 0.0,
    }
    if cfg.beta > 0.0:
        div = diversity_loss(record.final_queries, cfg.div_margin)
        breakdown["L_div"] = float(div.value)
        loss = ad.add(loss, ad.mul(div, cfg.beta))
    if cfg.gamma > 0.0:
        lb = load_balance_loss(record.pooling_weights)
        breakdown["L_lb"] = float(lb.value)
        loss = ad.add(loss, ad.mul(lb, cfg.gamma))
    if cfg.eta > 0.0:
        m_tokens = record.maps.shape[-1]
        h_max = cfg.entropy_max if cfg.entropy_max >= 0.0 else math.log(m_tokens)
        spent = spatial_entropy_penalty(record.maps, record.pooling_weights,
                                        cfg.entropy_min, h_max)
        breakdown["L_spent"] = float(spent.value)
        loss = ad.add(loss, ad.mul(spent, cfg.eta))
    breakdown["total"] = float(loss.value)
    return loss, breakdown


# ---- data plumbing ----

def _prepare_batch(samples: Samples, idxs: np.ndarray, cfg: TrainConfig,
                   epoch: int, step: int) -> tuple[np.ndarray, np.ndarray]:
    """Augment, (maybe) mix, and encode one training batch.

    Returns float32 pixels (B, S, S, 3) and exceedance targets (B, K-1).
    """
    k = cfg.num_grades
    imgs, dists = [], []
    for i in idxs:
        rng = stream(cfg.seed, "aug", epoch, int(i))
        img = Image(samples.images[int(i)].astype(np.float64),
                    source_id=samples.ids[int(i)])
        img = augment_training_sample(img, cfg.augment, rng)
        onehot = np.zeros(k)
        onehot[int(samples.labels[int(i)])] = 1.0
        imgs.append(img)
        dists.append(onehot)

    rng_mix = stream(cfg.seed, "mix", epoch, step)
    if cfg.augment.mix_prob > 0.0 and rng_mix.random() < cfg.augment.mix_prob and len(imgs) > 1:
        use_mixup = rng_mix.random() < 0.5
        partners = rng_mix.permutation(len(imgs))
        mixed_imgs, mixed_dists = [], []
        for a, b in enumerate(partners):
            if use_mixup:
                ms = mixup(imgs[a], dists[a], imgs[int(b)], dists[int(b)],
                           cfg.augment.mixup_alpha, rng_mix)
            else:
                ms = cutmix(imgs[a], dists[a], imgs[int(b)], dists[int(b)],
                            cfg.augment.cutmix_alpha, rng_mix)
            mixed_imgs.append(ms.image)
            mixed_dists.append(ms.class_target)
        imgs, dists = mixed_imgs, mixed_dists

    x = np.stack([im.pixels for im in imgs]).astype(np.float32)
    t = np.stack([encode_soft(d / d.sum()).t for d in dists]).astype(np.float32)
    return x, t


def build_model(cfg: TrainConfig, dtype=np.float32) -> GradingModel:
    return GradingModel(num_grades=cfg.num_grades, input_side=cfg.image_side,
                        stage_select=cfg.stage_select, token_dim=cfg.token_dim,
                        num_queries=cfg.num_queries, decoder_depth=cfg.decoder_depth,
                        temperature=cfg.temperature, ffn_mult=cfg.ffn_mult,
                        query_dropout=cfg.query_dropout,
                        rng=stream(cfg.seed, "init"), dtype=dtype)


# ---- evaluation ----

_TTA_VARIANTS = ("identity", "hflip", "vflip", "hvflip")


def _apply_flip(x: np.ndarray, variant: str) -> np.ndarray:
    if variant == "identity":
        return x
    if variant == "hflip":
        return x[:, :, ::-1, :]
    if variant == "vflip":
        return x[:, ::-1, :, :]
    if variant == "hvflip":
        return x[:, ::-1, ::-1, :]
    raise ValueError(f"unknown TTA variant {variant!r}")


def evaluate(model: GradingModel, samples: Samples, cfg: TrainConfig,
             tta: bool = False) -> tuple[EvalReport, list[dict]]:
    """Deterministic forward pass over a split; returns report + sample logs.

    With TTA the decoded class distributions of the four flip variants are
    averaged (uncertainty summaries are averaged alongside).
    """
    if len(samples) == 0:
        raise ValueError("cannot evaluate an empty split")
    variants = _TTA_VARIANTS if tta else ("identity",)
    logs: list[dict] = []
    for start in range(0, len(samples), cfg.eval_batch):
        idxs = np.arange(start, min(start + cfg.eval_batch, len(samples)))
        x = samples.images[idxs].astype(np.float32)
        per_variant = []
        for variant in variants:
            out, _ = model.infer(np.ascontiguousarray(_apply_flip(x, variant)))
            per_variant.append(out)
        for j, i in enumerate(idxs):
            p_acc = np.zeros(cfg.num_grades)
            u_acc = 0.0
            for out in per_variant:
                p_acc += decode(out.pi_hat[j]).p
                u_acc += float(out.u_mean[j])
            p = p_acc / len(per_variant)
            u_mean = u_acc / len(per_variant)
            first = per_variant[0]
            if cfg.decode_mode == "threshold_count":
                pred = threshold_count_grade(np.mean([o.pi_hat[j] for o in per_variant], axis=0))
            else:
                pred = predict_grade(p)
            logs.append({
                "id": samples.ids[int(i)],
                "true_grade": int(samples.labels[int(i)]),
                "pred_grade": int(pred),
                "p": [float(v) for v in p],
                "pi_hat": [float(v) for v in first.pi_hat[j]],
                "strength": [float(v) for v in first.strength[j]],
                "u_mean": float(u_mean),
            })
    return build_report(logs, cfg.num_grades), logs


# ---- training ----

def _write_history_csv(path: str, history: list[dict]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                             for c in HISTORY_COLUMNS])


def _export_attention(model: GradingModel, samples: Samples, cfg: TrainConfig,
                      out_dir: str, epoch: int, max_images: int = 4):
    adir = os.path.join(out_dir, "artifacts", "attn", f"epoch_{epoch}")
    n = min(max_images, len(samples))
    x = samples.images[:n].astype(np.float32)
    _, maps = model.infer(x)
    side = int(round(math.sqrt(maps.shape[-1])))
    for j in range(n):
        heats = attention_heatmaps(maps[j], side, cfg.image_side)
        stem = samples.ids[j].replace("/", "_")
        for qi, heat in enumerate(heats):
            save_image_png(heat.astype(np.float64),
                           os.path.join(adir, f"{stem}_q{qi}.png"))


def train(cfg: TrainConfig, dataset: Dataset, out_dir: str | None = None,
          dataset_fp: str = "", quiet: bool = False) -> tuple[GradingModel, TrainState]:
    """Run the full loop; returns the model (best weights loaded) and state."""
    cfg.validate()
    if dataset.num_grades != cfg.num_grades:
        raise ValueError(f"dataset has {dataset.num_grades} grades, config says {cfg.num_grades}")
    train_split = dataset.splits["train"]
    val_split = dataset.splits["val"]
    if len(train_split) == 0 or len(val_split) == 0:
        raise ValueError("train and val splits must be non-empty")

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        manifest = RunManifest(seed=cfg.seed,
                               config={k: str(v) for k, v in cfg.to_flat_mapping().items()},
                               dataset_fingerprint=dataset_fp, out_dir=out_dir,
                               package_version=__version__)
        write_manifest(os.path.join(out_dir, "manifest.json"), manifest)

    model = build_model(cfg)
    t_bar = np.stack([encode_hard(int(y), cfg.num_grades).t
                      for y in train_split.labels]).mean(axis=0)
    model.head.init_bias_from_marginals(t_bar)
    params = model.named_params()
    opt = AdamW(params, weight_decay=cfg.weight_decay)
    ema = Ema(params)
    state = TrainState()
    steps_per_epoch = max(1, math.ceil(len(train_split) / cfg.batch_size))
    patience_left = cfg.early_stop_patience
    ckpt_path = os.path.join(out_dir, "checkpoint_best.npz") if out_dir else ""
    best_values: dict[str, np.ndarray] | None = None

    for epoch in range(cfg.epochs):
        state.epoch = epoch
        if cfg.temperature_final > 0.0 and cfg.epochs > 1:
            frac = epoch / (cfg.epochs - 1)
            model.set_temperature(cfg.temperature
                                  + (cfg.temperature_final - cfg.temperature) * frac)
        sums = {k: 0.0 for k in ("total", "L_EDL", "L_div", "L_lb", "L_spent",
                                 "kl", "kl_weighted")}
        seen = 0
        order = stream(cfg.seed, "shuffle", epoch).permutation(len(train_split))
        last_lr = 0.0
        for step in range(steps_per_epoch):
            idxs = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            if idxs.size == 0:
                continue
            x, targets = _prepare_batch(train_split, idxs, cfg, epoch, step)
            head_out, record = model.forward(x, train=True,
                                             rng=stream(cfg.seed, "qdrop", epoch, step))
            loss, parts = total_loss(head_out, record, targets, float(epoch), cfg)
            opt.zero_grad()
            loss.backward()
            last_lr = lr_at(state.global_step, cfg, steps_per_epoch)
            opt.step(last_lr)
            ema.update(params, ema_decay_at(state.global_step, cfg.ema_decay))
            state.global_step += 1
            b = idxs.size
            seen += b
            for key in sums:
                sums[key] += parts[key] * b

        with ema.applied(params):
            report, _ = evaluate(model, val_split, cfg, tta=False)
            if out_dir and cfg.attn_export_every > 0 and epoch % cfg.attn_export_every == 0:
                _export_attention(model, val_split, cfg, out_dir, epoch)

        row = {
            "epoch": epoch,
            "train_loss": sums["total"] / seen,
            "L_EDL": sums["L_EDL"] / seen,
            "L_div": sums["L_div"] / seen,
            "L_lb": sums["L_lb"] / seen,
            "L_spent": sums["L_spent"] / seen,
            "val_acc": report.accuracy,
            "val_qwk": report.qwk,
            "val_u_mean": report.mean_u,
            "lr": last_lr,
            "lambda": lambda_at(float(epoch), AnnealSchedule(cfg.lambda_max, cfg.t_anneal)),
            # extra in-memory fields (not part of the CSV schema)
            "kl": sums["kl"] / seen,
            "kl_weighted": sums["kl_weighted"] / seen,
        }
        state.history.append(row)
        if out_dir:
            _write_history_csv(os.path.join(out_dir, "history.csv"), state.history)
        if not quiet:
            print(f"epoch {epoch:3d}  loss {row['train_loss']:.4f}  "
                  f"val_acc {report.accuracy:.4f}  val_qwk {report.qwk:.4f}  "
                  f"val_u {report.mean_u:.4f}  lr {last_lr:.2e}")

        if report.qwk > state.best_val_qwk:
            state.best_val_qwk = report.qwk
            state.best_epoch = epoch
            patience_left = cfg.early_stop_patience
            best_values = {k: ema.shadow[k].copy() for k in params}
            if out_dir:
                save_checkpoint(ckpt_path, {
                    "param": {k: p.value for k, p in params.items()},
                    "adam_m": opt.m, "adam_v": opt.v, "ema": ema.shadow,
                }, meta={"epoch": epoch, "global_step": state.global_step,
                         "best_val_qwk": state.best_val_qwk,
                         "config": {k: str(v) for k, v in cfg.to_flat_mapping().items()}})
                state.checkpoint_path = ckpt_path
        else:
            patience_left -= 1
            if patience_left <= 0:
                state.stopped_early = True
                break

    if best_values is not None:
        model.load_values(best_values)
    return model, state


def model_from_checkpoint(path: str) -> tuple[GradingModel, TrainConfig, dict]:
    """Rebuild a model from a checkpoint, loading the EMA weights."""
    groups, meta = load_checkpoint(path)
    cfg = TrainConfig.from_mapping(meta["config"])
    model = build_model(cfg)
    weights = groups["ema"] if groups["ema"] else groups["param"]
    model.load_values(weights)
    return model, cfg, meta
