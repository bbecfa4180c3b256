"""CTC loss, lattice, greedy decoding and the enumeration oracle."""

from .decode import DecodedText, collapse, greedy_decode, normalize_text, word_accuracy
from ..kernels import BACKEND
from .loss import NEG_SENTINEL, ctc_lattice, ctc_loss, ctc_loss_batch, min_frames
from .oracle import ctc_loss_bruteforce

__all__ = [
    "BACKEND", "DecodedText", "NEG_SENTINEL", "collapse", "ctc_lattice", "ctc_loss", "ctc_loss_batch",
    "ctc_loss_bruteforce", "greedy_decode", "min_frames", "normalize_text", "word_accuracy",
]
