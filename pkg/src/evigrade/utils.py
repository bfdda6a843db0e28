"""Shared helpers: deterministic RNG streams and parameter initialization."""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "truncated_normal", "fan_scaled_normal"]


def stream(seed: int, *tags) -> np.random.Generator:
    """Independent Philox stream keyed by (seed, *tags).

    Streams are counter-based and order-independent: the same key always
    yields the same draws no matter what other streams were consumed first.
    """
    raw = "|".join([str(int(seed))] + [str(t) for t in tags])
    key = int.from_bytes(hashlib.sha256(raw.encode()).digest()[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02,
                     dtype=np.float32) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std by resampling."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype)


def fan_scaled_normal(rng: np.random.Generator, shape, fan_in: int | None = None,
                      fan_out: int | None = None, dtype=np.float32) -> np.ndarray:
    """Truncated normal with Glorot scale sqrt(2 / (fan_in + fan_out)).

    At small widths a fixed tiny std starves the residual branches, so the
    std follows the fans (defaults: last two axes of `shape`).
    """
    if fan_in is None:
        fan_in = int(np.prod(shape[:-1]))
    if fan_out is None:
        fan_out = int(shape[-1])
    std = float(np.sqrt(2.0 / (fan_in + fan_out)))
    return truncated_normal(rng, shape, std=std, dtype=dtype)
