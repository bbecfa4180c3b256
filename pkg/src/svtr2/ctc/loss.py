"""Differentiable CTC loss built on the forward-backward kernel."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from ..errors import InfeasibleAlignmentError, InputError
from ..tensor import Tensor, as_tensor, make_output
from .. import kernels as kernel

log = logging.getLogger(__name__)

NEG_SENTINEL = -1e30


def min_frames(label: Sequence[int]) -> int:
    """Frames needed to emit ``label``: one per character plus a blank between repeats."""
    label = list(label)
    return len(label) + sum(1 for a, b in zip(label, label[1:]) if a == b)


def _log_softmax64(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check(label, T: int, C: int):
    label = np.asarray(label, dtype=np.int64).reshape(-1)
    if label.size and (label.min() < 0 or label.max() >= C - 1):
        raise InputError(f"label indices must lie in [0, {C - 1}); blank is {C - 1}")
    need = min_frames(label)
    if T < need:
        raise InfeasibleAlignmentError(f"label needs {need} frames, only {T} available")
    return label


def _forward_backward(logp: np.ndarray, label: np.ndarray, blank: int):
    if not np.isfinite(logp).all():
        # the DP clamps to its -inf sentinel, which would turn NaN into a huge finite loss
        return np.nan, np.full(logp.shape, np.nan)
    nll, grad, _ = kernel.ctc_forward_backward(logp, label, blank)
    return nll, grad


def ctc_lattice(logits, label) -> np.ndarray:
    """Log-space forward table alpha, shape (T, 2L+1), over the blank-interleaved label."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    T, C = data.shape
    label = _check(label, T, C)
    return kernel.ctc_forward_backward(_log_softmax64(data), label, C - 1)[2]


def ctc_loss(logits, label) -> Tensor:
    """``-log p(label | logits)`` for a (T, N_c + 1) logit matrix; blank is the last class."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise InputError(f"ctc_loss expects (T, C) logits, got {logits.shape}")
    T, C = logits.shape
    label = _check(label, T, C)
    nll, grad = _forward_backward(_log_softmax64(logits.data), label, C - 1)
    grad = grad.astype(logits.dtype)
    return make_output("ctc_loss", np.asarray(nll, dtype=logits.dtype), (logits,), lambda g: (g * grad,))


def ctc_loss_batch(logits, labels: Sequence[Sequence[int]]):
    """Mean CTC loss over a (B, T, C) batch.

    Samples whose label cannot be aligned are skipped with a warning; returns
    ``(loss, n_skipped)``.  ``loss`` is None when every sample was skipped.
    """
    logits = as_tensor(logits)
    B, T, C = logits.shape
    logp = _log_softmax64(logits.data)
    grad = np.zeros(logits.shape, dtype=logits.dtype)
    total = 0.0
    used = 0
    skipped = 0
    for b, label in enumerate(labels):
        try:
            lab = _check(label, T, C)
        except InfeasibleAlignmentError as exc:
            log.warning("skipping sample %d: %s", b, exc)
            skipped += 1
            continue
        nll, g = _forward_backward(logp[b], lab, C - 1)
        total += nll
        grad[b] = g
        used += 1
    if used == 0:
        return None, skipped
    grad /= used
    loss = make_output("ctc_loss_batch", np.asarray(total / used, dtype=logits.dtype), (logits,),
                       lambda g: (g * grad,))
    return loss, skipped
