"""Ordinal threshold encoding and decoding.

A K-grade label is represented by K-1 exceedance indicators z_k = 1[y > k].
Decoding maps exceedance probabilities back to a class distribution via
cumulative differences, after projecting onto the non-increasing cone so the
differences are guaranteed non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "OrdinalTargets", "ClassDistribution",
    "encode_hard", "encode_soft", "isotonic_nonincreasing",
    "decode", "predict_grade", "threshold_count_grade",
]


@dataclass
class OrdinalTargets:
    """Per-threshold exceedance targets t_k, k = 0..K-2."""

    t: np.ndarray
    num_grades: int
    hard_label: int | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        if self.num_grades < 2:
            raise ValueError("need at least 2 grades")
        if self.t.shape != (self.num_grades - 1,):
            raise ValueError(f"expected {self.num_grades - 1} thresholds, got {self.t.shape}")
        if (self.t < 0).any() or (self.t > 1).any():
            raise ValueError("threshold targets must lie in [0, 1]")
        if np.any(np.diff(self.t) > 1e-12):
            raise ValueError("threshold targets must be non-increasing")


@dataclass
class ClassDistribution:
    p: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.p.ndim != 1 or self.p.shape[0] < 2:
            raise ValueError("class distribution needs >= 2 entries")
        if (self.p < -1e-12).any():
            raise ValueError("probabilities must be non-negative")
        if abs(self.p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1, got {self.p.sum()}")

    @property
    def num_grades(self) -> int:
        return self.p.shape[0]


def encode_hard(y: int, num_grades: int) -> OrdinalTargets:
    """Hard label -> binary exceedance targets 1[y > k]."""
    if not 0 <= y < num_grades:
        raise ValueError(f"label {y} outside [0, {num_grades})")
    t = (y > np.arange(num_grades - 1)).astype(np.float64)
    return OrdinalTargets(t, num_grades, hard_label=int(y))


def encode_soft(p) -> OrdinalTargets:
    """Class distribution -> exceedance targets t_k = sum_{c > k} p_c."""
    dist = p if isinstance(p, ClassDistribution) else ClassDistribution(p)
    k = dist.num_grades
    tail = np.cumsum(dist.p[::-1])[::-1]  # tail[c] = sum_{c' >= c} p_{c'}
    t = np.clip(tail[1:], 0.0, 1.0)
    return OrdinalTargets(t, k)


def isotonic_nonincreasing(x: np.ndarray) -> np.ndarray:
    """L2 projection onto non-increasing sequences (pool adjacent violators).

    Single left-to-right pass with a merge stack; ties in the projection are
    exact block means.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a 1-D sequence")
    # blocks of (mean, count); merge while the tail violates non-increase
    means: list[float] = []
    counts: list[int] = []
    for v in x:
        means.append(float(v))
        counts.append(1)
        while len(means) > 1 and means[-2] < means[-1]:
            m2, c2 = means.pop(), counts.pop()
            m1, c1 = means.pop(), counts.pop()
            c = c1 + c2
            means.append((m1 * c1 + m2 * c2) / c)
            counts.append(c)
    return np.concatenate([np.full(c, m) for m, c in zip(means, counts)])


def decode(pi_hat: np.ndarray) -> ClassDistribution:
    """Exceedance probabilities -> class distribution.

    P(0) = 1 - pi_0, P(c) = pi_{c-1} - pi_c, P(K-1) = pi_{K-2}, computed on
    the isotonic (non-increasing) projection of pi_hat so every difference
    is non-negative.
    """
    pi = np.asarray(pi_hat, dtype=np.float64)
    if pi.ndim != 1 or pi.shape[0] < 1:
        raise ValueError("expected a 1-D vector of exceedance probabilities")
    if (pi < 0).any() or (pi > 1).any():
        raise ValueError("exceedance probabilities must lie in [0, 1]")
    pi = isotonic_nonincreasing(pi)
    ext = np.concatenate([[1.0], pi, [0.0]])
    p = ext[:-1] - ext[1:]
    p = np.maximum(p, 0.0)
    p = p / p.sum()
    return ClassDistribution(p)


def predict_grade(dist: ClassDistribution | np.ndarray) -> int:
    """Most probable grade; ties break toward the lower grade."""
    p = dist.p if isinstance(dist, ClassDistribution) else np.asarray(dist)
    return int(np.argmax(p))


def threshold_count_grade(pi_hat: np.ndarray) -> int:
    """Alternative readout: number of exceedance probabilities above 1/2."""
    pi = np.asarray(pi_hat, dtype=np.float64)
    return int((pi > 0.5).sum())
