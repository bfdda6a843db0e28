"""Small hierarchical convolutional feature extractor.

Four stages at strides 4/8/16/32. The stem is a 4x4 patch embedding; each
stage applies depthwise-separable residual blocks (depthwise 3x3, layer
norm, pointwise expand, GELU, pointwise project); stages are joined by 2x2
patch-merging downsamples. Feature maps are channels-last. A selected stage
can be flattened row-major into a token set with fixed 2-D sinusoidal
position signals added after a learned channel projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .utils import fan_scaled_normal

__all__ = [
    "FeatureMap", "TokenSet", "StandinBackbone",
    "select_stage", "sinusoidal_positions",
]

STAGE_STRIDES = (4, 8, 16, 32)


@dataclass
class FeatureMap:
    values: Tensor  # (B, S, S, C)
    stage: int      # 1-based
    stride: int

    @property
    def side(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[3]


@dataclass
class TokenSet:
    tokens: Tensor          # (B, M, D)
    positions: np.ndarray   # (M, D) fixed sinusoidal table
    stage_of_origin: int
    side: int               # spatial side the tokens were flattened from


def sinusoidal_positions(side: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Fixed 2-D sin/cos position table for a side x side grid, row-major.

    The first half of the channels encodes the row index, the second half
    the column index, each with interleaved sin/cos at geometric frequencies.
    """
    if dim % 4 != 0:
        raise ValueError("position dim must be a multiple of 4")
    half = dim // 2
    freqs = 1.0 / (10000.0 ** (np.arange(half // 2, dtype=np.float64) / (half // 2)))
    idx = np.arange(side, dtype=np.float64)
    ang = idx[:, None] * freqs[None, :]
    table = np.empty((side, half), dtype=np.float64)
    table[:, 0::2] = np.sin(ang)
    table[:, 1::2] = np.cos(ang)
    rows = np.repeat(table, side, axis=0)          # row index varies slowly
    cols = np.tile(table, (side, 1))               # column index varies fast
    return np.concatenate([rows, cols], axis=1).astype(dtype)


class StandinBackbone:
    def __init__(self, input_side: int = 128, in_channels: int = 3,
                 channels: tuple = (32, 64, 128, 256),
                 blocks_per_stage: tuple = (1, 1, 1, 1),
                 token_dim: int = 64, expand: int = 2,
                 rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if input_side % 32 != 0:
            raise ValueError("input side must be divisible by 32")
        if len(channels) != 4 or len(blocks_per_stage) != 4:
            raise ValueError("exactly four stages are required")
        self.input_side = input_side
        self.in_channels = in_channels
        self.channels = tuple(channels)
        self.blocks_per_stage = tuple(blocks_per_stage)
        self.token_dim = token_dim
        self.expand = expand
        self.dtype = dtype
        rng = rng if rng is not None else np.random.default_rng(0)
        self._params: dict[str, Tensor] = {}
        self._build(rng)
        self._pos_cache: dict[tuple, np.ndarray] = {}

    # ---- parameters ----

    def _add(self, name: str, value: np.ndarray) -> Tensor:
        p = ad.parameter(value)
        self._params[name] = p
        return p

    def _linear_init(self, rng, name, d_in, d_out):
        self._add(f"{name}.w", fan_scaled_normal(rng, (d_in, d_out), dtype=self.dtype))
        self._add(f"{name}.b", np.zeros(d_out, dtype=self.dtype))

    def _norm_init(self, name, c):
        self._add(f"{name}.g", np.ones(c, dtype=self.dtype))
        self._add(f"{name}.o", np.zeros(c, dtype=self.dtype))

    def _build(self, rng):
        c = self.channels
        self._linear_init(rng, "stem", 16 * self.in_channels, c[0])
        self._norm_init("stem.norm", c[0])
        for s in range(4):
            if s > 0:
                self._norm_init(f"down{s}.norm", c[s - 1])
                self._linear_init(rng, f"down{s}", 4 * c[s - 1], c[s])
            for blk in range(self.blocks_per_stage[s]):
                base = f"stage{s + 1}.block{blk}"
                self._add(f"{base}.dw", fan_scaled_normal(rng, (3, 3, c[s]), fan_in=9, fan_out=9,
                                                          dtype=self.dtype))
                self._norm_init(f"{base}.norm", c[s])
                self._linear_init(rng, f"{base}.fc1", c[s], self.expand * c[s])
                self._linear_init(rng, f"{base}.fc2", self.expand * c[s], c[s])
        # token projection from each stage's width (stage is selectable)
        for s in range(4):
            self._linear_init(rng, f"proj{s + 1}", c[s], self.token_dim)

    def named_params(self) -> dict[str, Tensor]:
        return dict(self._params)

    def _p(self, name: str) -> Tensor:
        return self._params[name]

    # ---- forward ----

    def _linear(self, x: Tensor, name: str) -> Tensor:
        return ad.add(ad.matmul(x, self._p(f"{name}.w")), self._p(f"{name}.b"))

    def _norm(self, x: Tensor, name: str) -> Tensor:
        return ad.layer_norm(x, self._p(f"{name}.g"), self._p(f"{name}.o"))

    def _block(self, x: Tensor, base: str) -> Tensor:
        h = ad.depthwise_conv3x3(x, self._p(f"{base}.dw"))
        h = self._norm(h, f"{base}.norm")
        h = self._linear(h, f"{base}.fc1")
        h = ad.gelu(h)
        h = self._linear(h, f"{base}.fc2")
        return ad.add(x, h)

    def forward(self, x) -> list[FeatureMap]:
        """x: (B, H, W, C) pixel values in [0, 255] -> four stage maps.

        Pixels are scaled by 1/255 (no centering, so an all-zero image
        propagates as exact zeros through the zero-offset normalizations).
        """
        if isinstance(x, Tensor):
            t = x
        else:
            arr = np.asarray(x, dtype=self.dtype)
            if arr.ndim == 3:
                arr = arr[None]
            t = Tensor(arr * np.asarray(1.0 / 255.0, dtype=self.dtype))
        if t.ndim != 4 or t.shape[1] != self.input_side or t.shape[2] != self.input_side:
            raise ValueError(f"expected (B, {self.input_side}, {self.input_side}, C) input, got {t.shape}")
        if t.shape[3] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {t.shape[3]}")

        h = self._linear(ad.patchify(t, 4), "stem")
        h = self._norm(h, "stem.norm")
        maps: list[FeatureMap] = []
        for s in range(4):
            if s > 0:
                h = self._norm(h, f"down{s}.norm")
                h = self._linear(ad.patchify(h, 2), f"down{s}")
            for blk in range(self.blocks_per_stage[s]):
                h = self._block(h, f"stage{s + 1}.block{blk}")
            maps.append(FeatureMap(h, stage=s + 1, stride=STAGE_STRIDES[s]))
        return maps

    def tokenize(self, fmap: FeatureMap) -> TokenSet:
        """Row-major flatten + learned projection + sinusoidal positions."""
        b, side, _, c = fmap.values.shape
        flat = ad.reshape(fmap.values, (b, side * side, c))
        # Feature channels come out of the residual trunk at a much smaller
        # scale than the positional code; standardizing per token keeps the
        # content signal from being drowned out.  An all-zero image still maps
        # to pure positions because standardize(0) = 0.
        flat = ad.standardize(flat)
        proj = self._linear(flat, f"proj{fmap.stage}")
        key = (side, self.token_dim)
        if key not in self._pos_cache:
            self._pos_cache[key] = sinusoidal_positions(side, self.token_dim, self.dtype)
        pos = self._pos_cache[key]
        tokens = ad.add(proj, Tensor(pos))
        return TokenSet(tokens, pos, stage_of_origin=fmap.stage, side=side)


def select_stage(maps: list[FeatureMap], stage: int) -> FeatureMap:
    """Pick a stage by its 1-based index."""
    for m in maps:
        if m.stage == stage:
            return m
    raise ValueError(f"stage {stage} not in {[m.stage for m in maps]}")
