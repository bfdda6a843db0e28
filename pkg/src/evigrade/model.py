"""Full grading model: backbone -> stage tokens -> query pooling -> evidence."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .backbone import StandinBackbone, select_stage
from .evidential import EvidenceHead, EvidentialOutput
from .lqap import AttentionRecord, LesionQueryPooler

__all__ = ["GradingModel"]


class GradingModel:
    def __init__(self, num_grades: int = 5, input_side: int = 128,
                 stage_select: int = 2, token_dim: int = 64,
                 num_queries: int = 8, decoder_depth: int = 2,
                 temperature: float = 0.5, ffn_mult: int = 2,
                 query_dropout: float = 0.1,
                 rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if stage_select not in (1, 2, 3, 4):
            raise ValueError("stage_select must be in 1..4")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.num_grades = num_grades
        self.stage_select = stage_select
        self.input_side = input_side
        self.dtype = dtype
        self.backbone = StandinBackbone(input_side=input_side, token_dim=token_dim,
                                        rng=rng, dtype=dtype)
        self.pooler = LesionQueryPooler(num_queries=num_queries, dim=token_dim,
                                        depth=decoder_depth, temperature=temperature,
                                        ffn_mult=ffn_mult, query_dropout=query_dropout,
                                        rng=rng, dtype=dtype)
        self.head = EvidenceHead(token_dim, num_grades, rng=rng, dtype=dtype)

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        for prefix, comp in (("backbone", self.backbone), ("lqap", self.pooler),
                             ("head", self.head)):
            for k, v in comp.named_params().items():
                out[f"{prefix}/{k}"] = v
        return out

    def set_temperature(self, tau: float):
        if tau <= 0.0:
            raise ValueError("temperature must be positive")
        self.pooler.query_set.temperature = float(tau)

    def forward(self, x, train: bool = False,
                rng: np.random.Generator | None = None) -> tuple[dict, AttentionRecord]:
        """x: (B, H, W, 3) pixels in [0, 255] (or a prepared Tensor)."""
        maps = self.backbone.forward(x)
        fmap = select_stage(maps, self.stage_select)
        tokens = self.backbone.tokenize(fmap)
        record = self.pooler.attend(tokens, train=train, rng=rng)
        head_out = self.head.forward(record.pooled)
        return head_out, record

    def infer(self, x) -> tuple[EvidentialOutput, np.ndarray]:
        """Numeric evaluation: evidential summary + pooling-side arrays."""
        head_out, record = self.forward(x, train=False)
        out = EvidentialOutput.from_evidence(np.asarray(head_out["evidence"].value,
                                                        dtype=np.float64))
        return out, np.asarray(record.maps.value, dtype=np.float64)

    def load_values(self, values: dict[str, np.ndarray]):
        """Overwrite parameters in place from a named-array mapping."""
        params = self.named_params()
        missing = set(params) - set(values)
        extra = set(values) - set(params)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)[:3]} "
                             f"extra={sorted(extra)[:3]}")
        for k, p in params.items():
            v = np.asarray(values[k], dtype=p.value.dtype)
            if v.shape != p.value.shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {p.value.shape}")
            p.value = v
