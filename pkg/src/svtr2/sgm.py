"""Training-only semantic guidance: predict each character from its left and right
string context by attending over the visual feature map."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ops
from .errors import InputError
from .nn import LayerNorm, Linear, Module, Parameter, lecun_std, trunc_normal
from .tensor import Tensor


@dataclass(frozen=True)
class SgmConfig:
    num_classes: int
    window: int = 5

    @property
    def pad_index(self) -> int:
        return self.num_classes


def extract_windows(label: Sequence[int], window: int, pad: int):
    """Left and right context index windows for every position, ``[P]``-padded.

    Returns two int arrays of shape (L, window).
    """
    lab = list(label)
    L = len(lab)
    left = np.full((L, window), pad, dtype=np.int64)
    right = np.full((L, window), pad, dtype=np.int64)
    for i in range(L):
        for k in range(window):
            j = i - window + k
            if 0 <= j:
                left[i, k] = lab[j]
            j = i + 1 + k
            if j < L:
                right[i, k] = lab[j]
    return left, right


class ContextSide(Module):
    """One side's context encoder and visual attention."""

    def __init__(self, dim: int, rng: np.random.Generator, scale: bool = True):
        self.token = Parameter(trunc_normal(rng, (1, dim)))
        self.ctx_q = Linear(dim, dim, rng, bias=False)
        self.ctx_k = Linear(dim, dim, rng, bias=False)
        self.ctx_v = Linear(dim, dim, rng, bias=False)
        self.norm = LayerNorm(dim)
        self.vis_q = Linear(dim, dim, rng, bias=False)
        self.vis_k = Linear(dim, dim, rng, bias=False)
        self.vis_v = Linear(dim, dim, rng, bias=False, std=lecun_std(dim))
        self.scale = scale

    def encode_context(self, emb: Tensor, return_weights: bool = False):
        """``emb``: (..., l_s, D) window embeddings -> context query (..., D)."""
        dim = emb.shape[-1]
        q = self.ctx_q(self.token)  # (1, D)
        logits = ops.matmul(self.ctx_k(emb), ops.transpose(q, (1, 0)))  # (..., l_s, 1)
        if self.scale:
            logits = logits * (1.0 / math.sqrt(dim))
        w = ops.softmax(logits, axis=-2)
        ctx = ops.sum(w * self.ctx_v(emb), axis=-2)
        out = self.norm(ctx + self.token)
        return (out, w.reshape(w.shape[:-1])) if return_weights else out

    def attend_visual(self, query: Tensor, tokens: Tensor):
        """``query``: (B, P, D), ``tokens``: (B, N, D) -> (attention (B, P, N), feature (B, P, D))."""
        dim = tokens.shape[-1]
        logits = ops.matmul(self.vis_q(query), ops.swapaxes(self.vis_k(tokens), -1, -2))
        if self.scale:
            logits = logits * (1.0 / math.sqrt(dim))
        attn = ops.softmax(logits, axis=-1)
        return attn, ops.matmul(attn, self.vis_v(tokens))


class SemanticGuidance(Module):
    def __init__(self, dim: int, config: SgmConfig, rng: np.random.Generator, scale: bool = True):
        self.config = config
        self.embedding = Parameter(trunc_normal(rng, (config.num_classes + 1, dim)))
        self.left = ContextSide(dim, rng, scale)
        self.right = ContextSide(dim, rng, scale)
        self.classifier = Linear(dim, config.num_classes, rng, bias=False, std=lecun_std(dim))

    def _windows(self, labels):
        cfg = self.config
        B = len(labels)
        P = max(len(l) for l in labels)
        left = np.full((B, P, cfg.window), cfg.pad_index, dtype=np.int64)
        right = np.full_like(left, cfg.pad_index)
        targets = np.zeros((B, P), dtype=np.int64)
        weights = np.zeros((B, P))
        for b, lab in enumerate(labels):
            L = len(lab)
            if L == 0:
                raise InputError("SGM needs non-empty labels")
            if max(lab) >= cfg.num_classes or min(lab) < 0:
                raise InputError(f"label index outside [0, {cfg.num_classes})")
            lw, rw = extract_windows(lab, cfg.window, cfg.pad_index)
            left[b, :L], right[b, :L] = lw, rw
            targets[b, :L] = lab
            weights[b, :L] = 1.0 / (2 * L * B)
        return left, right, targets, weights

    def forward(self, tokens: Tensor, labels: Sequence[Sequence[int]], return_attention: bool = False):
        """Batch-averaged SGM loss; ``tokens`` is the flattened feature map (B, N, D)."""
        left, right, targets, weights = self._windows(labels)
        loss = None
        maps = {}
        for name, side, idx in (("left", self.left, left), ("right", self.right, right)):
            query = side.encode_context(ops.embedding(self.embedding, idx))
            attn, feat = side.attend_visual(query, tokens)
            term = ops.cross_entropy(self.classifier(feat), targets, weights.astype(feat.dtype))
            loss = term if loss is None else loss + term
            maps[name] = attn.data
        return (loss, maps) if return_attention else loss
