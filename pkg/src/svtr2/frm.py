"""Feature rearrangement: per-row self-attention followed by per-column selection,
mapping an (h, w) feature grid to a length-w sequence aligned with reading order."""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .backbone import FeatureMap, GlobalMixing, mixing_width
from .nn import LayerNorm, Linear, Mlp, Module, Parameter, attention, lecun_std, trunc_normal
from .tensor import Tensor

FRM_MODES = ("frm", "none", "h", "v", "tf1")


class HorizontalRearranger(Module):
    """Row-wise MHSA with post-norm residuals; weights shared by all rows."""

    def __init__(self, dim: int, rng: np.random.Generator, heads: int | None = None, scale: bool = True,
                 mlp_ratio: int = 4):
        self.heads = heads or mixing_width(dim)
        self.scale = scale
        self.wq = Linear(dim, dim, rng, bias=False)
        self.wk = Linear(dim, dim, rng, bias=False)
        self.wv = Linear(dim, dim, rng, bias=False)
        self.norm1 = LayerNorm(dim)
        self.mlp = Mlp(dim, rng, mlp_ratio)
        self.norm2 = LayerNorm(dim)

    def forward(self, fmap: Tensor, return_weights: bool = False):
        """``fmap``: (..., h, w, D).  Weights have shape (..., h, heads, w, w), without the
        heads axis when there is a single head."""
        mixed, weights = attention(self.wq(fmap), self.wk(fmap), self.wv(fmap), self.heads, self.scale,
                                   return_weights=True)
        fh = self.norm1(mixed + fmap)
        fh = self.norm2(self.mlp(fh) + fh)
        return (fh, weights) if return_weights else fh


class VerticalRearranger(Module):
    """Cross-attention from a learned selecting token over the rows of each column."""

    def __init__(self, dim: int, rng: np.random.Generator, scale: bool = True):
        self.token = Parameter(trunc_normal(rng, (1, dim)))
        self.wk = Linear(dim, dim, rng, bias=False)
        # value path feeds the classifier directly; 1/sqrt(D) keeps it out of the
        # small-times-small saddle that stalls CTC training with 0.02 init
        self.wv = Linear(dim, dim, rng, bias=False, std=lecun_std(dim))
        self.scale = scale

    def forward(self, fh: Tensor, return_weights: bool = False):
        """``fh``: (..., h, w, D) -> (..., w, D).  Weights: (..., h, w), summing to 1 over h."""
        dim = fh.shape[-1]
        logits = ops.matmul(self.wk(fh), ops.transpose(self.token, (1, 0)))  # (..., h, w, 1)
        if self.scale:
            logits = logits * (1.0 / math.sqrt(dim))
        weights = ops.softmax(logits, axis=-3)
        seq = ops.sum(weights * self.wv(fh), axis=-3)
        weights = weights.reshape(weights.shape[:-1])
        return (seq, weights) if return_weights else seq


class CtcClassifier(Module):
    def __init__(self, dim: int, num_classes: int, rng: np.random.Generator):
        self.weight = Parameter(trunc_normal(rng, (dim, num_classes + 1), lecun_std(dim)))

    def forward(self, seq: Tensor) -> Tensor:
        return ops.linear(seq, self.weight)


class FeatureRearrangement(Module):
    """Sequence builder in front of the CTC classifier.

    ``mode`` selects the full module (``frm``), horizontal or vertical step
    only (``h``/``v``), a single transformer block (``tf1``) or plain
    column-mean pooling over height (``none``).  Every mode except ``frm``
    and ``v`` finishes with column-mean pooling.
    """

    def __init__(self, dim: int, rng: np.random.Generator, mode: str = "frm", scale: bool = True):
        if mode not in FRM_MODES:
            raise ValueError(f"unknown rearrangement mode {mode!r}")
        self.mode = mode
        self.horizontal = HorizontalRearranger(dim, rng, scale=scale) if mode in ("frm", "h") else None
        self.vertical = VerticalRearranger(dim, rng, scale=scale) if mode in ("frm", "v") else None
        self.block = GlobalMixing(dim, mixing_width(dim), rng, scale=scale) if mode == "tf1" else None

    def forward(self, fmap: FeatureMap, return_weights: bool = False):
        x = fmap.data
        mh = mv = None
        if self.block is not None:
            x = self.block(x)
        if self.horizontal is not None:
            x, mh = self.horizontal(x, return_weights=True)
        if self.vertical is not None:
            seq, mv = self.vertical(x, return_weights=True)
        else:
            seq = ops.mean(x, axis=-3)
        if return_weights:
            return seq, {"horizontal": mh, "vertical": mv}
        return seq


def horizontal_rearrange(fmap: FeatureMap, module: HorizontalRearranger, return_weights: bool = False):
    return module(fmap.data, return_weights=return_weights)


def vertical_rearrange(fh: Tensor, module: VerticalRearranger, return_weights: bool = False):
    return module(fh, return_weights=return_weights)


def effective_rearrangement(mh: np.ndarray, mv: np.ndarray) -> np.ndarray:
    """Compose attention weights into the soft map M of shape (w, h * w).

    ``mh``: (h, heads, w, w) or (h, w, w) row attention; heads are averaged.
    ``mv``: (h, w) column selection.  ``M[m, i * w + j] = mv[i, m] * mh[i, m, j]``.
    Value projections and the MLP are ignored: this is a diagnostic of the
    attention composition only, not the forward computation.
    """
    mh = np.asarray(mh.data if isinstance(mh, Tensor) else mh, dtype=np.float64)
    mv = np.asarray(mv.data if isinstance(mv, Tensor) else mv, dtype=np.float64)
    if mh.ndim == 4:
        mh = mh.mean(axis=1)
    h, w, _ = mh.shape
    m = mv.T[:, :, None] * mh.transpose(1, 0, 2)  # (w_out, h, w_in)
    return m.reshape(w, h * w)
