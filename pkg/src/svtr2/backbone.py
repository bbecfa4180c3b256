"""Three-stage visual encoder: conv stem, local (paired grouped conv) and global (MHSA)
mixing blocks, a single height merge.  No positional encoding anywhere."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .nn import Conv2d, LayerNorm, Linear, Mlp, Module, attention
from .tensor import Tensor, as_tensor


@dataclass(frozen=True)
class BackboneConfig:
    variant: str
    dims: tuple
    depths: tuple
    heads: tuple
    permutation: tuple  # "L"/"G" per block, left to right across stages
    mlp_ratio: int = 4

    def __post_init__(self):
        if len(self.permutation) != sum(self.depths):
            raise ConfigError(f"permutation has {len(self.permutation)} entries for {sum(self.depths)} blocks")
        for d, h in zip(self.dims, self.heads):
            if d % h:
                raise ConfigError(f"dim {d} not divisible by {h} heads")

    def stage_kinds(self) -> list:
        out, start = [], 0
        for n in self.depths:
            out.append(self.permutation[start:start + n])
            start += n
        return out


def _perm(n_local: int, n_global: int) -> tuple:
    return ("L",) * n_local + ("G",) * n_global


_VARIANTS = {
    "T": ((64, 128, 256), (3, 6, 3), _perm(6, 6)),
    "S": ((96, 192, 384), (3, 6, 3), _perm(6, 6)),
    "B": ((128, 256, 384), (6, 6, 6), _perm(8, 10)),
    "Nano": ((32, 64, 128), (2, 2, 2), _perm(3, 3)),
}
_ALIASES = {"tiny": "T", "small": "S", "base": "B", "nano": "Nano", "t": "T", "s": "S", "b": "B"}


def mixing_width(dim: int) -> int:
    """Heads and conv groups per stage: D/32, floored at 1 for narrow desk-scale stages."""
    return max(dim // 32, 1)


def make_config(variant: str) -> BackboneConfig:
    key = _ALIASES.get(variant, variant)
    if key not in _VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of T, S, B, Nano")
    dims, depths, perm = _VARIANTS[key]
    return BackboneConfig(key, dims, depths, tuple(mixing_width(d) for d in dims), perm)


class Stem(Module):
    """Two stride-2 3x3 convs (3 -> D0/2 -> D0), each followed by LN and GELU."""

    def __init__(self, dim: int, rng: np.random.Generator, in_ch: int = 3):
        self.conv1 = Conv2d(in_ch, dim // 2, rng, 3, stride=2)
        self.norm1 = LayerNorm(dim // 2)
        self.conv2 = Conv2d(dim // 2, dim, rng, 3, stride=2)
        self.norm2 = LayerNorm(dim)

    def forward(self, x: Tensor) -> Tensor:
        H, W = x.shape[-3], x.shape[-2]
        if H % 4 or W % 4:
            raise ShapeError(f"stem needs extents divisible by 4, got {H}x{W}")
        x = ops.gelu(self.norm1(self.conv1(x)))
        return ops.gelu(self.norm2(self.conv2(x)))


class LocalMixing(Module):
    """Pre-norm residual pair of grouped 3x3 convs (nothing between them), then an MLP."""

    def __init__(self, dim: int, rng: np.random.Generator, mlp_ratio: int = 4):
        groups = mixing_width(dim)
        self.norm1 = LayerNorm(dim)
        self.conv1 = Conv2d(dim, dim, rng, 3, groups=groups)
        self.conv2 = Conv2d(dim, dim, rng, 3, groups=groups)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, rng, mlp_ratio)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.conv2(self.conv1(self.norm1(x)))
        return x + self.mlp(self.norm2(x))


class GlobalMixing(Module):
    """Pre-norm residual multi-head self-attention over every grid token, then an MLP."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, mlp_ratio: int = 4,
                 scale: bool = True):
        self.heads = heads
        self.scale = scale
        self.norm1 = LayerNorm(dim)
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, rng, mlp_ratio)

    def mix(self, tokens: Tensor) -> Tensor:
        y = self.norm1(tokens)
        return self.proj(attention(self.q(y), self.k(y), self.v(y), self.heads, self.scale))

    def forward(self, x: Tensor) -> Tensor:
        shape = x.shape
        tokens = x.reshape(*shape[:-3], shape[-3] * shape[-2], shape[-1])
        tokens = tokens + self.mix(tokens)
        tokens = tokens + self.mlp(self.norm2(tokens))
        return tokens.reshape(shape)


class HeightMerge(Module):
    """3x3 conv with stride (2, 1): halves the grid height and widens channels, then LN."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.conv = Conv2d(d_in, d_out, rng, 3, stride=(2, 1))
        self.norm = LayerNorm(d_out)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-3] % 2:
            raise ShapeError(f"height merge needs an even grid height, got {x.shape[-3]}")
        return self.norm(self.conv(x))


class ChannelProjection(Module):
    """1x1 channel projection (grid unchanged), then LN."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.fc = Linear(d_in, d_out, rng)
        self.norm = LayerNorm(d_out)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(self.fc(x))


@dataclass
class FeatureMap:
    """Encoder output of shape (..., H/8, W/4, D2)."""

    data: Tensor

    @property
    def grid(self) -> tuple:
        return self.data.shape[-3], self.data.shape[-2]

    @property
    def dim(self) -> int:
        return self.data.shape[-1]

    def tokens(self) -> Tensor:
        s = self.data.shape
        return self.data.reshape(*s[:-3], s[-3] * s[-2], s[-1])


class Backbone(Module):
    def __init__(self, config: BackboneConfig, rng: np.random.Generator, scale_attention: bool = True):
        self.config = config
        d0, d1, d2 = config.dims
        self.stem = Stem(d0, rng)
        self.stages = []
        for dim, heads, kinds in zip(config.dims, config.heads, config.stage_kinds()):
            blocks = [LocalMixing(dim, rng, config.mlp_ratio) if k == "L"
                      else GlobalMixing(dim, heads, rng, config.mlp_ratio, scale_attention)
                      for k in kinds]
            self.stages.append(blocks)
        self.merge = HeightMerge(d0, d1, rng)
        self.project = ChannelProjection(d1, d2, rng)
        self.norm = LayerNorm(d2)

    def forward(self, image) -> FeatureMap:
        """``image``: (..., H, W, 3) channel-last, H and W divisible by 8 and 4."""
        x = as_tensor(image)
        if x.shape[-3] % 8 or x.shape[-2] % 4:
            raise ShapeError(f"input {x.shape[-3]}x{x.shape[-2]} must have H % 8 == 0 and W % 4 == 0")
        x = self.stem(x)
        for block in self.stages[0]:
            x = block(x)
        x = self.merge(x)
        for block in self.stages[1]:
            x = block(x)
        x = self.project(x)
        for block in self.stages[2]:
            x = block(x)
        return FeatureMap(self.norm(x))
