"""numpy twins of the compiled kernels in ``_kernels.pyx``; used when the extension is not built."""

import numpy as np

NEG = -1e30


def _lse(*terms):
    m = terms[0]
    for t in terms[1:]:
        m = np.maximum(m, t)
    acc = np.zeros_like(m)
    for t in terms:
        acc += np.exp(t - m)
    out = m + np.log(acc)
    return np.where(m <= NEG / 2, NEG, out)


def extend_label(label, blank):
    ext = np.full(2 * len(label) + 1, blank, dtype=np.int64)
    ext[1::2] = label
    return ext


def ctc_forward_backward(logp, label, blank):
    """Return ``(nll, grad_wrt_logits, alpha)`` for one sequence.

    ``logp`` is a (T, C) float64 array of per-frame log-softmax outputs.
    """
    logp = np.ascontiguousarray(logp, dtype=np.float64)
    label = np.asarray(label, dtype=np.int64)
    T = logp.shape[0]
    ext = extend_label(label, blank)
    S = ext.size
    emit = logp[:, ext]
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    neg1 = np.array([NEG])
    neg2 = np.array([NEG, NEG])

    alpha = np.full((T, S), NEG)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        a = _lse(prev, np.concatenate([neg1, prev[:-1]]),
                 np.where(skip, np.concatenate([neg2, prev[:-2]])[:S], NEG))
        alpha[t] = np.where(a <= NEG / 2, NEG, a + emit[t])

    skip_b = np.zeros(S, dtype=bool)
    skip_b[:-2] = skip[2:]
    beta = np.full((T, S), NEG)
    beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emit[T - 1, S - 2]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        b = _lse(nxt, np.concatenate([nxt[1:], neg1]),
                 np.where(skip_b, np.concatenate([nxt[2:], neg2])[-S:], NEG))
        beta[t] = np.where(b <= NEG / 2, NEG, b + emit[t])

    if S > 1:
        log_z = float(_lse(np.array(alpha[T - 1, S - 1]), np.array(alpha[T - 1, S - 2])))
    else:
        log_z = float(alpha[T - 1, 0])
    grad = np.exp(logp)
    if log_z > NEG / 2:
        gamma = np.exp(np.minimum(alpha + beta - emit - log_z, 0.0))
        gamma[(alpha <= NEG / 2) | (beta <= NEG / 2)] = 0.0
        for s in range(S):
            grad[:, ext[s]] -= gamma[:, s]
    return -log_z, grad, alpha


# fused layer norm -----------------------------------------------------------

def layer_norm_forward(x, gain, bias, eps, out, xhat, rstd):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    r = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    rstd[...] = r[:, 0]
    xhat[...] = xc * r
    out[...] = xhat * gain + bias


def layer_norm_backward(g, xhat, rstd, gain, gx, ggain, gbias):
    ggain += (g * xhat).sum(axis=0)
    gbias += g.sum(axis=0)
    gh = g * gain
    gx[...] = rstd[:, None] * (gh - gh.mean(axis=1, keepdims=True)
                               - xhat * (gh * xhat).mean(axis=1, keepdims=True))
