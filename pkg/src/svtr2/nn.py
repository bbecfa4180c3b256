"""Parameter containers and the small set of layers the model is built from."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from . import ops
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor.

    ``decay`` is False for normalisation gains/biases and bias vectors, which
    the optimizer excludes from weight decay.
    """

    __slots__ = ("decay",)

    def __init__(self, data, decay: bool = True):
        super().__init__(data, requires_grad=True)
        self.decay = decay


class Module:
    """Attribute-based parameter registry, in the spirit of ``torch.nn.Module``."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            yield from _walk(f"{prefix}{key}", value)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data) for n, p in self.named_parameters())

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, arr in state.items():
            if name in own:
                p = own[name]
                if p.shape != tuple(arr.shape):
                    raise KeyError(f"{name}: shape {arr.shape} != {p.shape}")
                p.data = np.array(arr, dtype=p.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(name: str, value):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return np.clip(rng.normal(0.0, std, size=shape), -2 * std, 2 * std)


def lecun_std(fan_in: int) -> float:
    return 1.0 / math.sqrt(fan_in)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, std: float = 0.02):
        self.weight = Parameter(trunc_normal(rng, (d_in, d_out), std))
        self.bias = Parameter(np.zeros(d_out), decay=False) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.gain = Parameter(np.ones(dim), decay=False)
        self.bias = Parameter(np.zeros(dim), decay=False)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias, self.eps)


class Conv2d(Module):
    """Channel-last grouped convolution with He-normal (fan-out) initialisation."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, kernel: int = 3,
                 stride=1, padding: Optional[int] = None, groups: int = 1, bias: bool = True):
        fan_out = c_out * kernel * kernel // groups
        self.weight = Parameter(rng.normal(0.0, math.sqrt(2.0 / fan_out), size=(c_out, c_in // groups, kernel, kernel)))
        self.bias = Parameter(np.zeros(c_out), decay=False) if bias else None
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return ops.grouped_conv2d(x, self.weight, self.bias, self.groups, self.stride, self.padding)


class Mlp(Module):
    def __init__(self, dim: int, rng: np.random.Generator, ratio: int = 4):
        self.fc1 = Linear(dim, dim * ratio, rng)
        self.fc2 = Linear(dim * ratio, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int, scale: bool = True,
              return_weights: bool = False):
    """Multi-head scaled dot-product attention over the second-to-last axis.

    ``q``: (..., Nq, D), ``k``/``v``: (..., Nk, D).  No output projection.
    """
    *lead, nq, d = q.shape
    nk = k.shape[-2]
    dh = d // heads
    if heads == 1:
        qh, kh, vh = q, k, v
    else:
        qh = ops.swapaxes(q.reshape(*lead, nq, heads, dh), -2, -3)
        kh = ops.swapaxes(k.reshape(*lead, nk, heads, dh), -2, -3)
        vh = ops.swapaxes(v.reshape(*lead, nk, heads, dh), -2, -3)
    logits = ops.matmul(qh, ops.swapaxes(kh, -1, -2))
    if scale:
        logits = logits * (1.0 / math.sqrt(dh))
    weights = ops.softmax(logits, axis=-1)
    out = ops.matmul(weights, vh)
    if heads > 1:
        out = ops.swapaxes(out, -2, -3).reshape(*lead, nq, d)
    return (out, weights) if return_weights else out
