"""Evaluation metrics: agreement, per-class scores, uncertainty, triage."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConfusionMatrix", "EvalReport",
    "accuracy", "quadratic_weighted_kappa", "macro_precision_recall",
    "uncertainty_split", "triage_sweep", "build_report",
]


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (K, K), rows = true grade, cols = predicted

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("confusion matrix must be square")
        if (c < 0).any() or not np.issubdtype(c.dtype, np.integer):
            raise ValueError("confusion matrix needs non-negative integer counts")
        self.counts = c.astype(np.int64)

    @classmethod
    def from_labels(cls, y_true, y_pred, num_grades: int) -> "ConfusionMatrix":
        yt = np.asarray(y_true, dtype=np.int64)
        yp = np.asarray(y_pred, dtype=np.int64)
        if yt.shape != yp.shape:
            raise ValueError("label arrays must have equal length")
        if ((yt < 0) | (yt >= num_grades) | (yp < 0) | (yp >= num_grades)).any():
            raise ValueError(f"labels outside [0, {num_grades})")
        cm = np.zeros((num_grades, num_grades), dtype=np.int64)
        np.add.at(cm, (yt, yp), 1)
        return cls(cm)

    @property
    def num_grades(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


def quadratic_weighted_kappa(cm: ConfusionMatrix) -> float:
    """Cohen's kappa with quadratic disagreement weights.

    kappa = 1 - sum(w * O) / sum(w * E) with w_ij = (i-j)^2 / (K-1)^2,
    O the observed proportion matrix and E the outer product of its
    marginals. When expected disagreement is zero (all mass in one
    diagonal cell) the observed disagreement is zero too and kappa is 1.
    """
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    k = cm.num_grades
    o = cm.counts / cm.total
    idx = np.arange(k)
    w = (idx[:, None] - idx[None, :]) ** 2 / (k - 1) ** 2
    e = np.outer(o.sum(axis=1), o.sum(axis=0))
    denom = float((w * e).sum())
    num = float((w * o).sum())
    if denom == 0.0:
        return 1.0
    return 1.0 - num / denom


def macro_precision_recall(cm: ConfusionMatrix) -> tuple[float, float]:
    """Unweighted per-class means; empty denominators contribute 0."""
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    pred_tot = c.sum(axis=0)
    true_tot = c.sum(axis=1)
    prec = np.divide(tp, pred_tot, out=np.zeros_like(tp), where=pred_tot > 0)
    rec = np.divide(tp, true_tot, out=np.zeros_like(tp), where=true_tot > 0)
    return float(prec.mean()), float(rec.mean())


def uncertainty_split(logs: list[dict]) -> tuple[float | None, float | None]:
    """Mean u_mean over correctly vs incorrectly graded samples.

    An empty side is reported as None.
    """
    correct = [s["u_mean"] for s in logs if s["pred_grade"] == s["true_grade"]]
    wrong = [s["u_mean"] for s in logs if s["pred_grade"] != s["true_grade"]]
    u_c = float(np.mean(correct)) if correct else None
    u_w = float(np.mean(wrong)) if wrong else None
    return u_c, u_w


def triage_sweep(logs: list[dict], thresholds) -> list[dict]:
    """Automation fraction and automated-subset accuracy per u* threshold.

    A sample is auto-graded when u_mean <= u*. Accuracy over an empty
    automated set is None.
    """
    out = []
    u = np.array([s["u_mean"] for s in logs])
    ok = np.array([s["pred_grade"] == s["true_grade"] for s in logs])
    n = len(logs)
    if n == 0:
        raise ValueError("triage sweep needs at least one sample")
    for thr in thresholds:
        auto = u <= thr
        frac = float(auto.sum() / n)
        acc = float(ok[auto].mean()) if auto.any() else None
        out.append({"u_star": float(thr), "auto_fraction": frac, "auto_accuracy": acc})
    return out


@dataclass
class EvalReport:
    num_samples: int
    num_grades: int
    accuracy: float
    qwk: float
    macro_precision: float
    macro_recall: float
    mean_u: float
    u_mean_correct: float | None
    u_mean_incorrect: float | None
    confusion: np.ndarray
    triage: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        d = {
            "num_samples": self.num_samples,
            "num_grades": self.num_grades,
            "accuracy": self.accuracy,
            "qwk": self.qwk,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "mean_u": self.mean_u,
            "u_mean_correct": self.u_mean_correct,
            "u_mean_incorrect": self.u_mean_incorrect,
            "confusion": self.confusion.tolist(),
            "triage": self.triage,
        }
        return json.dumps(d, indent=2)

    def to_text(self) -> str:
        lines = [
            f"samples            {self.num_samples}",
            f"accuracy           {self.accuracy:.4f}",
            f"qwk                {self.qwk:.4f}",
            f"macro precision    {self.macro_precision:.4f}",
            f"macro recall       {self.macro_recall:.4f}",
            f"mean u             {self.mean_u:.4f}",
            f"u (correct)        {self.u_mean_correct:.4f}" if self.u_mean_correct is not None else "u (correct)        n/a",
            f"u (incorrect)      {self.u_mean_incorrect:.4f}" if self.u_mean_incorrect is not None else "u (incorrect)      n/a",
            "",
            "confusion (rows true, cols predicted):",
        ]
        width = max(5, len(str(self.confusion.max())) + 2)
        header = "     " + "".join(f"{c:>{width}}" for c in range(self.num_grades))
        lines.append(header)
        for r in range(self.num_grades):
            row = "".join(f"{int(v):>{width}}" for v in self.confusion[r])
            lines.append(f"  {r:>2} {row}")
        if self.triage:
            lines += ["", "triage sweep (u* / auto fraction / auto accuracy):"]
            for row in self.triage:
                acc = "n/a" if row["auto_accuracy"] is None else f"{row['auto_accuracy']:.4f}"
                lines.append(f"  {row['u_star']:.3f}  {row['auto_fraction']:.4f}  {acc}")
        return "\n".join(lines)


def build_report(logs: list[dict], num_grades: int,
                 triage_thresholds=None) -> EvalReport:
    if not logs:
        raise ValueError("cannot build a report from zero samples")
    y_true = [s["true_grade"] for s in logs]
    y_pred = [s["pred_grade"] for s in logs]
    cm = ConfusionMatrix.from_labels(y_true, y_pred, num_grades)
    prec, rec = macro_precision_recall(cm)
    u_c, u_w = uncertainty_split(logs)
    if triage_thresholds is None:
        triage_thresholds = np.round(np.arange(0.05, 1.0, 0.05), 4)
    return EvalReport(
        num_samples=len(logs),
        num_grades=num_grades,
        accuracy=accuracy(cm),
        qwk=quadratic_weighted_kappa(cm),
        macro_precision=prec,
        macro_recall=rec,
        mean_u=float(np.mean([s["u_mean"] for s in logs])),
        u_mean_correct=u_c,
        u_mean_incorrect=u_w,
        confusion=cm.counts,
        triage=triage_sweep(logs, triage_thresholds),
    )
