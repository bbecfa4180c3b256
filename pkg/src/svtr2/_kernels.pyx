# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: CTC forward-backward and fused layer norm."""

import numpy as np
from libc.math cimport exp, log

cdef double NEG = -1e30
cdef double HALF_NEG = -5e29


cdef inline double _lse2(double a, double b) noexcept nogil:
    cdef double m = a if a > b else b
    if m <= HALF_NEG:
        return NEG
    return m + log(exp(a - m) + exp(b - m))


def ctc_forward_backward(logp_in, label_in, long blank):
    """Return ``(nll, grad_wrt_logits, alpha)`` for one sequence."""
    cdef double[:, ::1] logp = np.ascontiguousarray(logp_in, dtype=np.float64)
    cdef long[::1] label = np.ascontiguousarray(label_in, dtype=np.int64)
    cdef Py_ssize_t T = logp.shape[0]
    cdef Py_ssize_t C = logp.shape[1]
    cdef Py_ssize_t L = label.shape[0]
    cdef Py_ssize_t S = 2 * L + 1
    cdef Py_ssize_t t, s, c
    cdef double a, b, log_z, g

    ext_arr = np.full(S, blank, dtype=np.int64)
    cdef long[::1] ext = ext_arr
    for s in range(L):
        ext[2 * s + 1] = label[s]

    alpha_arr = np.full((T, S), NEG)
    beta_arr = np.full((T, S), NEG)
    grad_arr = np.exp(np.asarray(logp))
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef double[:, ::1] grad = grad_arr

    with nogil:
        alpha[0, 0] = logp[0, ext[0]]
        if S > 1:
            alpha[0, 1] = logp[0, ext[1]]
        for t in range(1, T):
            for s in range(S):
                a = alpha[t - 1, s]
                if s >= 1:
                    a = _lse2(a, alpha[t - 1, s - 1])
                if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                    a = _lse2(a, alpha[t - 1, s - 2])
                if a > HALF_NEG:
                    alpha[t, s] = a + logp[t, ext[s]]

        beta[T - 1, S - 1] = logp[T - 1, ext[S - 1]]
        if S > 1:
            beta[T - 1, S - 2] = logp[T - 1, ext[S - 2]]
        for t in range(T - 2, -1, -1):
            for s in range(S):
                b = beta[t + 1, s]
                if s + 1 < S:
                    b = _lse2(b, beta[t + 1, s + 1])
                if s + 2 < S and ext[s] != blank and ext[s + 2] != ext[s]:
                    b = _lse2(b, beta[t + 1, s + 2])
                if b > HALF_NEG:
                    beta[t, s] = b + logp[t, ext[s]]

        if S > 1:
            log_z = _lse2(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
        else:
            log_z = alpha[T - 1, 0]
        if log_z > HALF_NEG:
            for t in range(T):
                for s in range(S):
                    if alpha[t, s] > HALF_NEG and beta[t, s] > HALF_NEG:
                        g = alpha[t, s] + beta[t, s] - logp[t, ext[s]] - log_z
                        if g > 0.0:
                            g = 0.0
                        grad[t, ext[s]] -= exp(g)
    return -log_z, grad_arr, alpha_arr


# ---------------------------------------------------------------------------
# fused layer norm

from libc.math cimport sqrt
from cython cimport floating


def layer_norm_forward(floating[:, ::1] x, floating[::1] gain, floating[::1] bias, double eps,
                       floating[:, ::1] out, floating[:, ::1] xhat, floating[::1] rstd):
    """Row-wise normalisation of an (N, C) buffer; fills ``out``, ``xhat`` and ``rstd``."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], i, j
    cdef double mu, var, d, r
    with nogil:
        for i in range(n):
            mu = 0.0
            for j in range(c):
                mu += x[i, j]
            mu /= c
            var = 0.0
            for j in range(c):
                d = x[i, j] - mu
                var += d * d
            var /= c
            r = 1.0 / sqrt(var + eps)
            rstd[i] = <floating>r
            for j in range(c):
                d = (x[i, j] - mu) * r
                xhat[i, j] = <floating>d
                out[i, j] = <floating>(d * gain[j] + bias[j])


def layer_norm_backward(floating[:, ::1] g, floating[:, ::1] xhat, floating[::1] rstd, floating[::1] gain,
                        floating[:, ::1] gx, double[::1] ggain, double[::1] gbias):
    """Input gradient into ``gx``; gain/bias gradients accumulated (in float64) into ``ggain``/``gbias``."""
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1], i, j
    cdef double m1, m2, gh
    with nogil:
        for i in range(n):
            m1 = 0.0
            m2 = 0.0
            for j in range(c):
                gh = g[i, j] * gain[j]
                m1 += gh
                m2 += gh * xhat[i, j]
                ggain[j] += g[i, j] * xhat[i, j]
                gbias[j] += g[i, j]
            m1 /= c
            m2 /= c
            for j in range(c):
                gh = g[i, j] * gain[j]
                gx[i, j] = <floating>(rstd[i] * (gh - m1 - xhat[i, j] * m2))
