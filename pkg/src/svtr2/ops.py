"""Differentiable primitives.

Every function takes :class:`~svtr2.tensor.Tensor` (or array-like) inputs and
returns a Tensor whose record carries the analytic vector-Jacobian product.
Image tensors are channel-last: ``(..., H, W, C)``.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor, make_output


_GELU_C = 0.7978845608028654  # sqrt(2 / pi)
_GELU_A = 0.044715


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


# elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_output("add", a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_output("sub", a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_output("mul", ad * bd, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_output("div", out, (a, b), vjp)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make_output("exp", out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return make_output("log", np.log(xd), (x,), lambda g: (g / xd,))


def gelu(x) -> Tensor:
    """GELU in its tanh form: ``0.5 x (1 + tanh(c (x + 0.044715 x^3)))``.

    Written with in-place updates: activations are the largest tensors in the
    model and extra temporaries cost more than the arithmetic.
    """
    x = as_tensor(x)
    xd = x.data
    t = np.multiply(xd, xd)
    t *= _GELU_C * _GELU_A
    t += _GELU_C
    t *= xd
    np.tanh(t, out=t)
    out = t + 1.0
    out *= xd
    out *= 0.5

    def vjp(g):
        d = np.multiply(xd, xd)
        d *= 3.0 * _GELU_C * _GELU_A
        d += _GELU_C
        s = np.multiply(t, t)
        np.subtract(1.0, s, out=s)
        d *= s
        d *= xd
        d += t
        d += 1.0
        d *= 0.5
        d *= g
        return (d,)

    return make_output("gelu", out, (x,), vjp)


# shape ---------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return make_output("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make_output("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    return make_output("swapaxes", np.swapaxes(x.data, a1, a2), (x,),
                       lambda g: (np.swapaxes(g, a1, a2),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_output("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_output("sum", x.data.sum(axis=axis, keepdims=keepdims), (x,), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis, keepdims), 1.0 / n)


def embedding(table, indices) -> Tensor:
    """Row lookup ``table[indices]``; gradient scatters back into the table."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    shape = table.shape

    def vjp(g):
        gt = np.zeros(shape, dtype=g.dtype)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, shape[-1]))
        return (gt,)

    return make_output("embedding", table.data[idx], (table,), vjp)


# linear algebra --------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                k, n = bd.shape
                gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return make_output("matmul", ad @ bd, (a, b), vjp)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` of shape (in, out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    inputs = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        inputs = (x, weight, bias)

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g @ wd.T) if x.requires_grad else None
        gw = (xd.reshape(-1, xd.shape[-1]).T @ g2) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_output("linear", out, inputs, vjp)


# normalisation ---------------------------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    out = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def vjp(g):
        gx = g * out
        gx -= out * gx.sum(axis=axis, keepdims=True)
        return (gx,)

    return make_output("softmax", out, (x,), vjp)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_output("log_softmax", out, (x,), vjp)


def layer_norm(x, gain, bias, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis, then scale by ``gain`` and shift by ``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeError(f"layer_norm: channel extent {c} vs gain {gain.shape} / bias {bias.shape}")
    dt = x.dtype
    x2 = np.ascontiguousarray(x.data).reshape(-1, c)
    g_arr = np.ascontiguousarray(gain.data, dtype=dt)
    out = np.empty_like(x2)
    xhat = np.empty_like(x2)
    rstd = np.empty(x2.shape[0], dtype=dt)
    kernels.layer_norm_forward(x2, g_arr, np.ascontiguousarray(bias.data, dtype=dt), float(eps), out, xhat, rstd)

    def vjp(g):
        g2 = np.ascontiguousarray(g, dtype=dt).reshape(-1, c)
        gx = np.empty_like(g2)
        gg = np.zeros(c)
        gb = np.zeros(c)
        kernels.layer_norm_backward(g2, xhat, rstd, g_arr, gx, gg, gb)
        return gx.reshape(x.shape), gg.astype(gain.dtype), gb.astype(bias.dtype)

    return make_output("layer_norm", out.reshape(x.shape), (x, gain, bias), vjp)


def cross_entropy(logits, targets, weights=None) -> Tensor:
    """Weighted sum over rows of ``-log softmax(logits)[target]``.

    ``targets`` is an integer array matching ``logits.shape[:-1]``; ``weights``
    (same shape, default ones) lets callers mask and normalise.
    """
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.int64)
    if t.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets {t.shape} vs logits {logits.shape}")
    w = np.ones(t.shape, dtype=logits.dtype) if weights is None else np.asarray(weights, dtype=logits.dtype)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, t[..., None], axis=-1)[..., 0]
    loss = -(picked * w).sum()

    def vjp(g):
        p = np.exp(logp)
        np.put_along_axis(p, t[..., None], np.take_along_axis(p, t[..., None], axis=-1) - 1.0, axis=-1)
        return (g * p * w[..., None],)

    return make_output("cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), vjp)


# convolution -----------------------------------------------------------------

def _as_pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def conv_output_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def grouped_conv2d(x, weight, bias=None, groups: int = 1, stride=1, padding=1) -> Tensor:
    """Grouped 2-D convolution on channel-last input.

    ``x``: (..., H, W, C_in); ``weight``: (C_out, C_in // groups, kh, kw).
    Each group convolves only its own slice of input channels.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    cout, cin_g, kh, kw = weight.shape
    cin = x.shape[-1]
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigError(f"grouped_conv2d: channels {cin}->{cout} not divisible by groups={groups}")
    if cin_g * groups != cin:
        raise ShapeError(f"grouped_conv2d: weight {weight.shape} expects {cin_g * groups} input channels, got {cin}")
    sh, sw = _as_pair(stride)
    ph, pw = _as_pair(padding)
    lead = x.shape[:-3]
    H, W = x.shape[-3], x.shape[-2]
    xd = x.data.reshape((-1, H, W, cin))
    B = xd.shape[0]
    Ho, Wo = conv_output_size(H, kh, sh, ph), conv_output_size(W, kw, sw, pw)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"grouped_conv2d: input {H}x{W} too small for kernel {kh}x{kw}")
    xp = np.pad(xd, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else xd
    st = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp, shape=(B, Ho, Wo, kh, kw, cin),
        strides=(st[0], st[1] * sh, st[2] * sw, st[1], st[2], st[3]), writeable=False)
    cout_g = cout // groups
    # (groups, kh*kw*cin_g, cout_g)
    wmat = weight.data.reshape(groups, cout_g, cin_g, kh, kw).transpose(0, 3, 4, 2, 1).reshape(
        groups, kh * kw * cin_g, cout_g)
    M = B * Ho * Wo
    if groups == 1:
        cols = [patches.reshape(M, kh * kw * cin)]
    else:
        cols = [patches[..., gi * cin_g:(gi + 1) * cin_g].reshape(M, kh * kw * cin_g) for gi in range(groups)]
    out = np.empty((M, cout), dtype=np.result_type(xd, weight.data))
    for gi in range(groups):
        out[:, gi * cout_g:(gi + 1) * cout_g] = cols[gi] @ wmat[gi]
    inputs = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data
        inputs = (x, weight, bias)
    out = out.reshape(lead + (Ho, Wo, cout))

    def vjp(g):
        g2 = g.reshape(M, cout)
        gx = gw = None
        if weight.requires_grad:
            gwm = np.stack([cols[gi].T @ g2[:, gi * cout_g:(gi + 1) * cout_g] for gi in range(groups)])
            gw = gwm.reshape(groups, kh, kw, cin_g, cout_g).transpose(0, 4, 3, 1, 2).reshape(weight.shape)
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for gi in range(groups):
                dcol = (g2[:, gi * cout_g:(gi + 1) * cout_g] @ wmat[gi].T).reshape(B, Ho, Wo, kh, kw, cin_g)
                cs = slice(gi * cin_g, (gi + 1) * cin_g)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw, cs] += dcol[:, :, :, i, j, :]
            gx = gxp[:, ph:ph + H, pw:pw + W, :].reshape(x.shape)
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_output("grouped_conv2d", out, inputs, vjp)


def conv2d(x, weight, bias=None, stride=1, padding=1) -> Tensor:
    return grouped_conv2d(x, weight, bias, 1, stride, padding)
