"""Greedy CTC decoding and the word-accuracy metric."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import InputError
from ..tensor import Tensor


@dataclass(frozen=True)
class DecodedText:
    indices: tuple
    trace: tuple
    confidence: float = 1.0

    def text(self, charset: Sequence[str]) -> str:
        return "".join(charset[i] for i in self.indices)


def collapse(trace: Sequence[int], blank: int) -> tuple:
    """Merge runs of equal labels, then drop blanks."""
    out = []
    prev = None
    for c in trace:
        c = int(c)
        if c != prev and c != blank:
            out.append(c)
        prev = c
    return tuple(out)


def greedy_decode(logits) -> DecodedText:
    """Best-path decoding of a (T, N_c + 1) logit matrix; ties go to the lowest index."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    blank = data.shape[-1] - 1
    trace = data.argmax(axis=-1)
    z = data - data.max(axis=-1, keepdims=True)
    probs = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
    best = probs.max(axis=-1)
    kept = [t for t in range(len(trace)) if trace[t] != blank and (t == 0 or trace[t] != trace[t - 1])]
    conf = float(np.mean(best[kept])) if kept else float(np.mean(best)) if len(best) else 0.0
    return DecodedText(collapse(trace, blank), tuple(int(c) for c in trace), conf)


_SPECIAL = re.compile(r"[^0-9a-z]")


def normalize_text(s: str) -> str:
    return _SPECIAL.sub("", s.lower())


def word_accuracy(predictions: Sequence[str], references: Sequence[str]) -> float:
    """Exact-match rate after lowercasing and stripping non-alphanumerics."""
    if len(predictions) != len(references):
        raise InputError(f"{len(predictions)} predictions vs {len(references)} references")
    if not references:
        raise InputError("word_accuracy needs at least one reference")
    hits = sum(normalize_text(p) == normalize_text(r) for p, r in zip(predictions, references))
    return hits / len(references)
