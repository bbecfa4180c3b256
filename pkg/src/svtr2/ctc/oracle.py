"""Brute-force CTC likelihood by enumerating every frame path.

Deliberately independent of the dynamic program: it shares no code with the
kernels and computes probabilities with plain Python floats.
"""

import itertools
import math

from ..errors import SizeError

MAX_PATHS = 10 ** 7


def _collapse(path, blank):
    out = []
    prev = None
    for c in path:
        if c != prev and c != blank:
            out.append(c)
        prev = c
    return tuple(out)


def ctc_loss_bruteforce(logits, label) -> float:
    rows = [list(map(float, row)) for row in logits]
    T = len(rows)
    C = len(rows[0])
    if C ** T > MAX_PATHS:
        raise SizeError(f"{C}^{T} paths exceeds the enumeration limit of {MAX_PATHS}")
    probs = []
    for row in rows:
        m = max(row)
        e = [math.exp(v - m) for v in row]
        z = sum(e)
        probs.append([v / z for v in e])
    target = tuple(int(c) for c in label)
    blank = C - 1
    total = 0.0
    for path in itertools.product(range(C), repeat=T):
        if _collapse(path, blank) == target:
            p = 1.0
            for t, c in enumerate(path):
                p *= probs[t][c]
            total += p
    return math.inf if total == 0.0 else -math.log(total)
