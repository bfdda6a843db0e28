"""Evidential ordinal head: per-threshold Dirichlet evidence and losses.

Each exceedance decision k gets a two-component evidence vector e_k >= 0.
Concentrations are alpha_k = e_k + 1; the exceedance probability is the
Dirichlet mean pi_k = alpha_{k,1} / S_k with strength S_k = alpha_{k,0} +
alpha_{k,1} and per-threshold uncertainty u_k = 2 / S_k. The loss is
binary cross-entropy on pi against (possibly soft) exceedance targets plus
an annealed KL pull of each Dirichlet toward the uniform prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .utils import fan_scaled_normal

__all__ = [
    "EvidentialOutput", "AnnealSchedule", "EvidenceHead",
    "bce_loss", "kl_to_uniform", "lambda_at", "edl_loss",
    "uncertainty_summary",
]

EVIDENCE_FLOOR = 1e-8
_PROB_EPS = 1e-7


@dataclass
class EvidentialOutput:
    """Per-sample numeric view of the head output (no graph)."""

    evidence: np.ndarray   # (..., K-1, 2), >= 0
    alpha: np.ndarray      # evidence + 1
    pi_hat: np.ndarray     # (..., K-1), Dirichlet mean of the exceed side
    strength: np.ndarray   # (..., K-1)
    u: np.ndarray          # (..., K-1), 2 / strength
    u_mean: np.ndarray     # (...,)

    @classmethod
    def from_evidence(cls, evidence: np.ndarray) -> "EvidentialOutput":
        e = np.asarray(evidence, dtype=np.float64)
        if e.shape[-1] != 2:
            raise ValueError("evidence must have trailing axis of size 2")
        if (e < 0).any():
            raise ValueError("evidence must be non-negative")
        alpha = e + 1.0
        strength = alpha.sum(axis=-1)
        pi_hat = alpha[..., 1] / strength
        u = 2.0 / strength
        return cls(e, alpha, pi_hat, strength, u, u.mean(axis=-1))


@dataclass
class AnnealSchedule:
    lambda_max: float = 0.1
    t_anneal: float = 10.0

    def __post_init__(self):
        if self.lambda_max < 0.0:
            raise ValueError("lambda_max must be >= 0")
        if self.t_anneal <= 0.0:
            raise ValueError("t_anneal must be > 0")


def lambda_at(t: float, sched: AnnealSchedule) -> float:
    """Linear ramp: lambda_max * min(1, t / t_anneal)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return sched.lambda_max * min(1.0, t / sched.t_anneal)


class EvidenceHead:
    """Linear map from the pooled descriptor to softplus evidence."""

    def __init__(self, dim: int, num_grades: int, rng: np.random.Generator,
                 dtype=np.float32):
        if num_grades < 2:
            raise ValueError("need at least 2 grades")
        self.dim = dim
        self.num_grades = num_grades
        self.num_thresholds = num_grades - 1
        self.w = ad.parameter(fan_scaled_normal(rng, (dim, 2 * self.num_thresholds), dtype=dtype))
        self.b = ad.parameter(np.zeros(2 * self.num_thresholds, dtype=dtype))

    def named_params(self) -> dict:
        return {"head.w": self.w, "head.b": self.b}

    def init_bias_from_marginals(self, t_bar: np.ndarray, strength: float = 6.0):
        """Start the head at the label-marginal solution.

        With zero bias the first stretch of training is spent nudging the
        biases toward the marginal exceedance rates before any image content
        matters; seeding them there hands that stretch back to the trunk.
        `strength` fixes the initial alpha mass per threshold.
        """
        t_bar = np.asarray(t_bar, dtype=np.float64)
        if t_bar.shape != (self.num_thresholds,):
            raise ValueError(f"need {self.num_thresholds} marginal rates, got {t_bar.shape}")
        if strength <= 2.0:
            raise ValueError("strength must exceed the flat-prior mass 2")
        e1 = np.maximum(t_bar * strength - 1.0, 0.05)
        e0 = np.maximum((1.0 - t_bar) * strength - 1.0, 0.05)
        raw = np.log(np.expm1(np.stack([e0, e1], axis=-1)))  # softplus inverse
        self.b.value = raw.reshape(-1).astype(self.b.value.dtype)

    def forward(self, pooled: Tensor) -> dict:
        """pooled (B, D) -> dict of graph tensors.

        Returns evidence/alpha (B, K-1, 2), pi_hat/strength (B, K-1).
        """
        if pooled.ndim != 2 or pooled.shape[1] != self.dim:
            raise ValueError(f"pooled must be (B, {self.dim}), got {pooled.shape}")
        raw = ad.add(ad.matmul(pooled, self.w), self.b)
        evidence = ad.add(ad.softplus(raw), EVIDENCE_FLOOR)
        b = pooled.shape[0]
        evidence = ad.reshape(evidence, (b, self.num_thresholds, 2))
        alpha = ad.add(evidence, 1.0)
        strength = ad.tsum(alpha, axis=-1)
        exceed_mask = Tensor(np.array([0.0, 1.0], dtype=pooled.dtype))
        exceed = ad.tsum(ad.mul(alpha, exceed_mask), axis=-1)
        pi_hat = ad.div(exceed, strength)
        return {"evidence": evidence, "alpha": alpha, "strength": strength,
                "pi_hat": pi_hat}


def bce_loss(pi_hat: Tensor, targets: np.ndarray) -> Tensor:
    """Binary cross-entropy summed over thresholds, mean over the batch."""
    t = np.asarray(targets)
    if tuple(t.shape) != tuple(pi_hat.shape):
        raise ValueError(f"target shape {t.shape} != pi_hat shape {pi_hat.shape}")
    if (t < 0).any() or (t > 1).any():
        raise ValueError("targets must lie in [0, 1]")
    t = Tensor(t.astype(pi_hat.dtype))
    one_m = ad.sub(1.0, pi_hat)
    # pi_hat in (0,1) by construction; the epsilon only guards extreme saturation
    ll = ad.add(ad.mul(t, ad.log(ad.add(pi_hat, _PROB_EPS))),
                ad.mul(ad.sub(1.0, t), ad.log(ad.add(one_m, _PROB_EPS))))
    per_sample = ad.tsum(ad.neg(ll), axis=-1)
    return ad.tmean(per_sample)


def kl_to_uniform(alpha: Tensor | np.ndarray) -> Tensor:
    """KL(Dir(alpha) || Dir(1)) per threshold; trailing axis is the pair."""
    return ad.dirichlet_kl_uniform(alpha)


def edl_loss(pi_hat: Tensor, alpha: Tensor, targets: np.ndarray,
             epoch_t: float, sched: AnnealSchedule) -> tuple[Tensor, dict]:
    """Full evidential objective and its scalar breakdown.

    loss = BCE(pi_hat, targets) + lambda(epoch_t) * mean_b sum_k KL_k.
    """
    lam = lambda_at(epoch_t, sched)
    data = bce_loss(pi_hat, targets)
    kl = ad.tmean(ad.tsum(kl_to_uniform(alpha), axis=-1))
    total = ad.add(data, ad.mul(kl, lam))
    parts = {"bce": float(data.value), "kl": float(kl.value),
             "kl_weighted": lam * float(kl.value), "lambda": lam}
    return total, parts


def uncertainty_summary(alpha: np.ndarray) -> np.ndarray:
    """Mean per-threshold uncertainty u_mean = mean_k 2 / S_k."""
    a = np.asarray(alpha, dtype=np.float64)
    s = a.sum(axis=-1)
    return (2.0 / s).mean(axis=-1)
