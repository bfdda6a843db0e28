"""Learned-query attention pooling over spatial tokens.

A small set of learnable query vectors is refined by decoder blocks (query
self-attention, temperature-scaled cross-attention onto the tokens, then a
feed-forward), and the final queries are combined into a single pooled
descriptor by a learned softmax weighting. Cross-attention maps are kept
for regularization and heatmap export.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import TokenSet
from .imageio import resize_bilinear
from .utils import fan_scaled_normal, truncated_normal

__all__ = [
    "QuerySet", "AttentionRecord", "LesionQueryPooler",
    "diversity_loss", "load_balance_loss", "spatial_entropy_penalty",
    "attention_heatmaps",
]


@dataclass
class QuerySet:
    queries: Tensor      # (N, D) learnable
    num_queries: int
    temperature: float

    def __post_init__(self):
        if self.num_queries < 1:
            raise ValueError("need at least one query")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")


@dataclass
class AttentionRecord:
    maps: Tensor            # (B, N, M) last-block cross-attention, rows sum to 1
    pooling_weights: Tensor  # (B, N) softmax weights over queries
    pooled: Tensor          # (B, D)
    final_queries: Tensor   # (B, N, D)
    token_side: int         # spatial side of the originating feature map


class LesionQueryPooler:
    def __init__(self, num_queries: int = 8, dim: int = 64, depth: int = 2,
                 temperature: float = 0.5, ffn_mult: int = 2,
                 query_dropout: float = 0.1,
                 rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        if not 0.0 <= query_dropout < 1.0:
            raise ValueError("query_dropout must be in [0, 1)")
        self.dim = dim
        self.depth = depth
        self.query_dropout = query_dropout
        self.dtype = dtype
        rng = rng if rng is not None else np.random.default_rng(0)
        self._params: dict[str, Tensor] = {}
        q0 = truncated_normal(rng, (num_queries, dim), dtype=dtype)
        self.query_set = QuerySet(self._add("queries", q0), num_queries, temperature)
        self._norm_init("ctx_norm", dim)
        for d in range(depth):
            for sub in ("self", "cross"):
                for mat in ("wq", "wk", "wv", "wo"):
                    self._add(f"block{d}.{sub}.{mat}",
                              fan_scaled_normal(rng, (dim, dim), dtype=dtype))
                self._norm_init(f"block{d}.{sub}.norm", dim)
            self._norm_init(f"block{d}.ffn.norm", dim)
            self._add(f"block{d}.ffn.w1", fan_scaled_normal(rng, (dim, ffn_mult * dim), dtype=dtype))
            self._add(f"block{d}.ffn.b1", np.zeros(ffn_mult * dim, dtype=dtype))
            self._add(f"block{d}.ffn.w2", fan_scaled_normal(rng, (ffn_mult * dim, dim), dtype=dtype))
            self._add(f"block{d}.ffn.b2", np.zeros(dim, dtype=dtype))
        self._norm_init("final_norm", dim)
        self._add("score.w", fan_scaled_normal(rng, (dim, 1), dtype=dtype))
        self._add("score.b", np.zeros(1, dtype=dtype))

    def _add(self, name: str, value) -> Tensor:
        p = ad.parameter(value)
        self._params[name] = p
        return p

    def _norm_init(self, name: str, c: int):
        self._add(f"{name}.g", np.ones(c, dtype=self.dtype))
        self._add(f"{name}.o", np.zeros(c, dtype=self.dtype))

    def named_params(self) -> dict[str, Tensor]:
        return dict(self._params)

    def _p(self, name: str) -> Tensor:
        return self._params[name]

    def _norm(self, x: Tensor, name: str) -> Tensor:
        return ad.layer_norm(x, self._p(f"{name}.g"), self._p(f"{name}.o"))

    def _attention(self, q_in: Tensor, kv_in: Tensor, base: str,
                   temperature: float) -> tuple[Tensor, Tensor]:
        """Single-head attention; returns (output, attention map)."""
        q = ad.matmul(q_in, self._p(f"{base}.wq"))
        k = ad.matmul(kv_in, self._p(f"{base}.wk"))
        v = ad.matmul(kv_in, self._p(f"{base}.wv"))
        scale = 1.0 / (np.sqrt(self.dim) * temperature)
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 2, 1))), scale)
        attn = ad.softmax(scores, axis=-1)
        out = ad.matmul(ad.matmul(attn, v), self._p(f"{base}.wo"))
        return out, attn

    def attend(self, tokens: TokenSet, train: bool = False,
               rng: np.random.Generator | None = None) -> AttentionRecord:
        """Refine the queries against a token set and pool.

        Query dropout (training only) removes whole queries from the pooled
        combination by masking their scores, which renormalizes the softmax
        over the surviving queries.
        """
        t = tokens.tokens
        if t.ndim != 3 or t.shape[2] != self.dim:
            raise ValueError(f"tokens must be (B, M, {self.dim}), got {t.shape}")
        b = t.shape[0]
        n = self.query_set.num_queries
        tau = self.query_set.temperature

        ctx = self._norm(t, "ctx_norm")
        q = ad.broadcast_to(ad.reshape(self.query_set.queries, (1, n, self.dim)),
                            (b, n, self.dim))
        attn = None
        for d in range(self.depth):
            qn = self._norm(q, f"block{d}.self.norm")
            h, _ = self._attention(qn, qn, f"block{d}.self", 1.0)
            q = ad.add(q, h)
            h, attn = self._attention(self._norm(q, f"block{d}.cross.norm"), ctx,
                                      f"block{d}.cross", tau)
            q = ad.add(q, h)
            f = self._norm(q, f"block{d}.ffn.norm")
            f = ad.add(ad.matmul(f, self._p(f"block{d}.ffn.w1")), self._p(f"block{d}.ffn.b1"))
            f = ad.gelu(f)
            f = ad.add(ad.matmul(f, self._p(f"block{d}.ffn.w2")), self._p(f"block{d}.ffn.b2"))
            q = ad.add(q, f)

        final_q = self._norm(q, "final_norm")
        scores = ad.reshape(ad.add(ad.matmul(final_q, self._p("score.w")),
                                   self._p("score.b")), (b, n))
        if train and self.query_dropout > 0.0:
            if rng is None:
                raise ValueError("query dropout needs an rng in training mode")
            keep = rng.random((b, n)) >= self.query_dropout
            keep[~keep.any(axis=1)] = True  # never drop every query
            mask = np.where(keep, 0.0, -1e9).astype(scores.dtype)
            scores = ad.add(scores, Tensor(mask))
        w = ad.softmax(scores, axis=-1)
        pooled = ad.reshape(ad.matmul(ad.reshape(w, (b, 1, n)), final_q),
                            (b, self.dim))
        return AttentionRecord(attn, w, pooled, final_q, token_side=tokens.side)


# ---- regularizers ----

def diversity_loss(final_queries: Tensor | np.ndarray, margin: float = 0.25) -> Tensor:
    """Hinge on pairwise cosine similarity of the final queries.

    mean over ordered pairs i != j of max(0, cos(q_i, q_j) - margin)^2,
    then mean over the batch when a batch axis is present. Zero-norm rows
    are treated as orthogonal to everything (cosine 0) and flagged.
    """
    q = final_queries if isinstance(final_queries, Tensor) else Tensor(np.asarray(final_queries))
    if q.ndim == 2:
        q = ad.reshape(q, (1,) + tuple(q.shape))
    if q.ndim != 3:
        raise ValueError("final queries must be (N, D) or (B, N, D)")
    b, n, _ = q.shape
    if n < 2:
        raise ValueError("need at least two queries for a pairwise loss")
    norms_sq = ad.tsum(ad.mul(q, q), axis=-1, keepdims=True)
    if (norms_sq.value <= 0.0).any():
        warnings.warn("zero-norm query embedding in diversity_loss; treating cosine as 0")
    inv = ad.power(ad.add(norms_sq, 1e-24), -0.5)
    unit = ad.mul(q, inv)
    cos = ad.matmul(unit, ad.transpose(unit, (0, 2, 1)))  # (B, N, N)
    hinge = ad.relu(ad.sub(cos, float(margin)))
    sq = ad.mul(hinge, hinge)
    off = 1.0 - np.eye(n, dtype=q.dtype)
    per_image = ad.mul(ad.tsum(ad.mul(sq, Tensor(off)), axis=(1, 2)),
                       1.0 / (n * (n - 1)))
    return ad.tmean(per_image)


def load_balance_loss(w: Tensor | np.ndarray) -> Tensor:
    """Squared distance between the batch-mean pooling weights and uniform."""
    wt = w if isinstance(w, Tensor) else Tensor(np.asarray(w))
    if wt.ndim == 1:
        wt = ad.reshape(wt, (1,) + tuple(wt.shape))
    if wt.ndim != 2:
        raise ValueError("pooling weights must be (N,) or (B, N)")
    sums = wt.value.sum(axis=1)
    if not np.allclose(sums, 1.0, atol=1e-5):
        raise ValueError("each pooling-weight row must sum to 1")
    n = wt.shape[1]
    mean_w = ad.tmean(wt, axis=0)
    diff = ad.sub(mean_w, 1.0 / n)
    return ad.tsum(ad.mul(diff, diff))


def spatial_entropy_penalty(maps: Tensor | np.ndarray, w: Tensor | np.ndarray,
                            h_min: float, h_max: float, eps: float = 1e-12) -> Tensor:
    """Keep per-query attention entropy inside [h_min, h_max].

    Each query's map entropy H_i = -sum_m a ln a is pushed back into the
    band with a squared hinge on both sides; penalties are combined with
    the pooling weights and averaged over the batch.
    """
    if h_min > h_max:
        raise ValueError("h_min must be <= h_max")
    m = maps if isinstance(maps, Tensor) else Tensor(np.asarray(maps))
    wt = w if isinstance(w, Tensor) else Tensor(np.asarray(w))
    if (m.value < 0.0).any():
        raise ValueError("attention maps must be nonnegative")
    if m.ndim == 2:
        m = ad.reshape(m, (1,) + tuple(m.shape))
    if wt.ndim == 1:
        wt = ad.reshape(wt, (1,) + tuple(wt.shape))
    ent = ad.neg(ad.tsum(ad.mul(m, ad.log(ad.add(m, eps))), axis=-1))  # (B, N)
    low = ad.relu(ad.sub(float(h_min), ent))
    high = ad.relu(ad.sub(ent, float(h_max)))
    pen = ad.add(ad.mul(low, low), ad.mul(high, high))
    return ad.tmean(ad.tsum(ad.mul(wt, pen), axis=-1))


# ---- heatmap export ----

def attention_heatmaps(maps: np.ndarray, token_side: int, out_side: int) -> list[np.ndarray]:
    """Render one 8-bit grayscale heatmap per query.

    Each (M,) attention row is reshaped to the token grid, min-max scaled
    to [0, 255] (an all-equal map renders as zeros), and upsampled.
    """
    arr = np.asarray(maps, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != token_side * token_side:
        raise ValueError(f"expected (N, {token_side * token_side}) maps, got {arr.shape}")
    out = []
    for row in arr:
        grid = row.reshape(token_side, token_side)
        lo, hi = grid.min(), grid.max()
        if hi > lo:
            grid = (grid - lo) / (hi - lo) * 255.0
        else:
            grid = np.zeros_like(grid)
        up = resize_bilinear(grid, out_side, out_side)
        out.append(np.clip(np.round(up), 0, 255).astype(np.uint8))
    return out
