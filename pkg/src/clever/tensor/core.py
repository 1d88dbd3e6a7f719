"""Tensor values, the recording tape, and the backward pass."""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import ContractError, NumericError, ShapeError, UnsupportedOp

_ids = itertools.count(1)
_local = threading.local()

# op name -> primitive object exposing forward(*arrays, **params) and backward(ctx, grad)
OPS: dict[str, Any] = {}


def register(name: str):
    def deco(cls):
        cls.name = name
        OPS[name] = cls()
        return cls

    return deco


def get_op(name: str):
    try:
        return OPS[name]
    except KeyError:
        raise UnsupportedOp(f"unknown primitive {name!r}") from None


class Tensor:
    """An n-d float array with an optional gradient slot.

    ``data`` is never written in place by this package; updates rebind it to a
    fresh array so that arrays captured by a tape stay valid.
    """

    __slots__ = ("data", "requires_grad", "node_id", "grad", "name", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_ids) if requires_grad else None
        self.grad = None
        self.name = name
        self._tape = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

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

    # arithmetic sugar; every method routes through forward()
    def __add__(self, other):
        return forward("add", [self, _wrap(other, self)])

    def __radd__(self, other):
        return forward("add", [_wrap(other, self), self])

    def __sub__(self, other):
        return forward("sub", [self, _wrap(other, self)])

    def __rsub__(self, other):
        return forward("sub", [_wrap(other, self), self])

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return forward("mul", [self, other])
        return forward("scale", [self], c=float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return forward("div", [self, other])
        return forward("scale", [self], c=1.0 / float(other))

    def __neg__(self):
        return forward("scale", [self], c=-1.0)

    def __matmul__(self, other):
        return forward("matmul", [self, other])

    def sum(self, axis=None, keepdims=False):
        return forward("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return forward("mean", [self], axis=axis, keepdims=keepdims)

    def relu(self):
        return forward("relu", [self])

    def exp(self):
        return forward("exp", [self])

    def log(self, floor: float = 1e-12):
        return forward("log", [self], floor=floor)

    def abs(self):
        return forward("abs", [self])

    def sqrt(self):
        return forward("sqrt", [self])

    def softmax(self):
        return forward("softmax", [self])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return forward("reshape", [self], shape=shape)

    @property
    def T(self):
        return forward("transpose", [self])

    def __getitem__(self, key):
        # only contiguous slices over the last axis are supported
        if isinstance(key, tuple):
            head, key = key[:-1], key[-1]
            if not all(k is Ellipsis or k == slice(None) for k in head):
                raise ShapeError("only last-axis slicing is supported")
        if not isinstance(key, slice) or key.step not in (None, 1):
            raise ShapeError(f"unsupported index {key!r}; use a slice over the last axis")
        start, stop, _ = key.indices(self.shape[-1])
        return forward("slice", [self], start=start, stop=max(start, stop))

    def backward(self) -> dict:
        if self._tape is None:
            raise ContractError("tensor was not produced on a recording tape")
        return self._tape.backward(self)


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


@dataclass
class Node:
    op_kind: str
    parents: tuple  # node ids, or None for constant inputs
    params: dict
    ctx: Any
    out_id: int
    out: np.ndarray
    const_inputs: tuple = ()  # arrays of inputs that are not on the tape


@dataclass
class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; only operations executed inside ``with tape:``
    are recorded.  A tape belongs to the thread that created it.
    """

    nodes: list = field(default_factory=list)
    leaves: dict = field(default_factory=dict)  # node_id -> Tensor
    leaf_values: dict = field(default_factory=dict)  # node_id -> array at first use
    _index: dict = field(default_factory=dict, repr=False)  # out node_id -> position

    def __enter__(self):
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def record(self, op_kind, inputs, params, ctx, out: Tensor) -> None:
        parents = []
        consts = []
        for t in inputs:
            if t.requires_grad:
                if t.node_id not in self.leaves and not self._owns(t):
                    self.leaves[t.node_id] = t
                    self.leaf_values[t.node_id] = t.data
                parents.append(t.node_id)
                consts.append(None)
            else:
                parents.append(None)
                consts.append(t.data)
        node = Node(op_kind, tuple(parents), dict(params), ctx, out.node_id, out.data, tuple(consts))
        self._index[out.node_id] = len(self.nodes)
        self.nodes.append(node)
        out._tape = self

    def _owns(self, t: Tensor) -> bool:
        return t._tape is self and t.node_id in self._index

    def backward(self, root: Tensor) -> dict:
        """Reverse sweep from a scalar root.

        Returns ``{node_id: Tensor}`` for every requires-grad leaf seen by the
        tape (zeros when the leaf does not reach ``root``) and accumulates the
        same values into ``leaf.grad``.
        """
        if root.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {root.shape}")
        if root._tape is not self or root.node_id not in self._index:
            raise ContractError("backward root is not on this tape")
        grads: dict[int, np.ndarray] = {root.node_id: np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = grads.pop(node.out_id, None)
            if g is None:
                continue
            op = OPS[node.op_kind]
            if getattr(op, "wants_mask", False):
                in_grads = op.backward(node.ctx, g, needs=tuple(p is not None for p in node.parents))
            else:
                in_grads = op.backward(node.ctx, g)
            for pid, ig in zip(node.parents, in_grads):
                if pid is None or ig is None:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + ig
                else:
                    grads[pid] = ig
        result = {}
        for lid, leaf in self.leaves.items():
            g = grads.get(lid)
            if g is None:
                g = np.zeros_like(leaf.data)
            g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
            leaf.grad = g if leaf.grad is None else leaf.grad + g
            result[lid] = Tensor(g)
        return result

    def replay(self) -> dict:
        """Recompute every node from the recorded leaf values.

        Returns ``{node_id: array}`` so callers can compare against the
        original forward values.
        """
        values = dict(self.leaf_values)
        for node in self.nodes:
            args = [values[p] if p is not None else c for p, c in zip(node.parents, node.const_inputs)]
            out, _ = OPS[node.op_kind].forward(*args, **node.params)
            values[node.out_id] = out
        return {n.out_id: values[n.out_id] for n in self.nodes}


def _tape_stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_record():
    """Temporarily suspend recording (teacher forward passes, evaluation)."""
    saved = list(_tape_stack())
    _local.tapes = []
    try:
        yield
    finally:
        _local.tapes = saved


def _strict() -> bool:
    return getattr(_local, "strict", False)


@contextmanager
def strict_mode(enabled: bool = True):
    """Raise NumericError when a primitive receives non-finite input."""
    prev = _strict()
    _local.strict = enabled
    try:
        yield
    finally:
        _local.strict = prev


def forward(op_kind: str, inputs, **params) -> Tensor:
    """Apply primitive ``op_kind`` to ``inputs``; record it when any input needs grad."""
    op = get_op(op_kind)
    inputs = [t if isinstance(t, Tensor) else Tensor(t) for t in inputs]
    arrays = [t.data for t in inputs]
    if _strict():
        for i, a in enumerate(arrays):
            if not np.all(np.isfinite(a)):
                raise NumericError(f"{op_kind}: input {i} contains non-finite values")
    out_data, ctx = op.forward(*arrays, **params)
    tape = current_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.record(op_kind, inputs, params, ctx, out)
    return out


def backward(tape: Tape, root: Tensor) -> dict:
    return tape.backward(root)
