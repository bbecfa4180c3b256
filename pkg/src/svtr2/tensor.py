"""Dense tensors with a reverse-mode differentiation tape.

A :class:`Tensor` wraps a numpy array.  Every differentiable primitive in
:mod:`svtr2.ops` that sees an input with ``requires_grad`` appends a
:class:`Record` to the graph; the records reachable from a scalar loss,
ordered by creation, form the :class:`Tape` that :func:`backward` replays.
"""

from __future__ import annotations

import contextlib
import itertools
import os
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import ContractError, NonFiniteError

_counter = itertools.count()
_grad_enabled = True
_debug = os.environ.get("SVTR2_DEBUG", "") not in ("", "0")


def set_debug(flag: bool) -> None:
    """Toggle NaN/Inf checking on every op output."""
    global _debug
    _debug = bool(flag)


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording; ops return constant tensors."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Record:
    """One executed primitive: inputs, the output's identity and the vector-Jacobian rule.

    Only the output's id is kept: a strong reference would form a
    tensor <-> record cycle and leave every activation to the cyclic GC.
    """

    __slots__ = ("seq", "op", "inputs", "output_id", "output_shape", "vjp")

    def __init__(self, op: str, inputs: tuple, output: "Tensor", vjp: Callable):
        self.seq = next(_counter)
        self.op = op
        self.inputs = inputs
        self.output_id = id(output)
        self.output_shape = output.shape
        self.vjp = vjp

    def __repr__(self) -> str:
        return f"Record({self.op}, seq={self.seq}, out={self.output_shape})"


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_record", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._record: Optional[Record] = None
        self.name = name

    # basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # operator sugar; implementations live in ops ------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis, keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make_output(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap ``data`` and, if any input is tracked, record the primitive.

    ``vjp(g)`` must return one gradient (or None) per input.
    """
    if _debug and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._record = Record(op, tuple(inputs), out, vjp)
    return out


class Tape:
    """The ordered records that produced ``output``.

    Records appear in execution order, so every record's inputs were made by
    an earlier record or are leaves.
    """

    def __init__(self, records: list):
        self.records = records

    @classmethod
    def from_output(cls, output: Tensor) -> "Tape":
        seen = set()
        records = []
        stack = [output]
        while stack:
            t = stack.pop()
            rec = t._record
            if rec is None or id(rec) in seen:
                continue
            seen.add(id(rec))
            records.append(rec)
            stack.extend(rec.inputs)
        records.sort(key=lambda r: r.seq)
        return cls(records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def backward(self, output: Tensor, seed: Optional[np.ndarray] = None) -> int:
        """Propagate from ``output``; returns the number of records visited."""
        grads = {id(output): np.ones_like(output.data) if seed is None else seed}
        visited = 0
        for rec in reversed(self.records):
            g = grads.pop(rec.output_id, None)
            if g is None:
                continue
            visited += 1
            in_grads = rec.vjp(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t._record is None:
                    _accumulate_leaf(t, gi)
                else:
                    key = id(t)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi
        if output._record is None and output.requires_grad:
            _accumulate_leaf(output, grads.get(id(output), np.ones_like(output.data)))
        return visited


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.shape:
        g = np.broadcast_to(g, t.shape)
    g = g.astype(t.dtype, copy=False)
    if t.grad is None:
        t.grad = np.array(g, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tracked leaf that ``loss`` depends on.

    Gradients accumulate across calls; reset with ``zero_grad``.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor with requires_grad")
    Tape.from_output(loss).backward(loss)
