"""Tensor type and the reverse-mode gradient machinery.

Every differentiable op records a :class:`Node` on its output holding the
parent tensors and a backward closure. Backward closures are written in terms
of :class:`Tensor` ops themselves, so running them with recording enabled
produces a differentiable graph of the gradient (double backprop).
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import NonFiniteError, RankError, TapeError

__all__ = [
    "Tensor",
    "Node",
    "backward",
    "grad",
    "no_grad",
    "enable_grad",
    "is_grad_enabled",
    "precision",
    "set_default_dtype",
    "get_default_dtype",
    "as_tensor",
]


class _State(threading.local):
    def __init__(self):
        self.grad_enabled = True
        self.dtype = np.dtype(np.float32)


_state = _State()


def get_default_dtype() -> np.dtype:
    return _state.dtype


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _state.dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default float type, e.g. ``precision("f64")``."""
    if isinstance(dtype, str):
        dtype = {"f32": np.float32, "f64": np.float64}.get(dtype, dtype)
    old = _state.dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


def is_grad_enabled() -> bool:
    return _state.grad_enabled


@contextlib.contextmanager
def no_grad():
    old = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


@contextlib.contextmanager
def enable_grad():
    old = _state.grad_enabled
    _state.grad_enabled = True
    try:
        yield
    finally:
        _state.grad_enabled = old


BackwardFn = Callable[["Tensor", Tuple[bool, ...]], Sequence[Optional["Tensor"]]]


class Node:
    """One recorded primitive: its inputs and how to pull a gradient back."""

    __slots__ = ("op", "parents", "backward_fn")

    def __init__(self, op: str, parents: Tuple["Tensor", ...], backward_fn: BackwardFn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn

    def __repr__(self):
        return f"Node({self.op})"


def _check_finite(data: np.ndarray, op: str) -> None:
    # sum is cheaper than isfinite().all(); a float overflow in the sum falls
    # through to the exact check
    if data.size and not np.isfinite(data.sum()):
        if not np.isfinite(data).all():
            raise NonFiniteError(f"non-finite value produced by op '{op}'")


class Tensor:
    """n-dimensional float array that can take part in gradient recording."""

    __slots__ = ("data", "requires_grad", "node", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or _state.dtype)
        _check_finite(arr, name or "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node: Optional[Node] = None
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, parents: Tuple["Tensor", ...], backward_fn: BackwardFn) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.name = None
        out.node = None
        out.requires_grad = False
        if _state.grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.node = Node(op, parents, backward_fn)
        return out

    # -- array-like surface -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
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
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operators delegate to ops ----------------------------------------
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

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _relevant_order(root: Tensor, targets: set) -> Tuple[List[Tensor], set]:
    """Topological order of the subgraph between ``root`` and ``targets``.

    Returns tensors in post-order (parents first) restricted to those that
    have a recorded path to at least one target, plus that id set.
    """
    order: List[Tensor] = []
    leads: Dict[int, bool] = {}
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        tid = id(t)
        if expanded:
            hit = tid in targets
            if t.node is not None:
                for p in t.node.parents:
                    if leads.get(id(p), False):
                        hit = True
            leads[tid] = hit
            if hit:
                order.append(t)
            continue
        if tid in leads:
            continue
        leads[tid] = False  # visiting marker, overwritten on exit
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if id(p) not in leads:
                    stack.append((p, False))
    relevant = {id(t) for t in order}
    return order, relevant


def backward(scalar: Tensor, wrt: Iterable[Tensor], create_graph: bool = False) -> Dict[Tensor, Tensor]:
    """Gradients of a rank-0 ``scalar`` with respect to each tensor in ``wrt``.

    With ``create_graph=True`` the returned gradients are themselves recorded,
    so they can be differentiated again. Tensors with no path from the scalar
    receive zero gradients.
    """
    if not isinstance(scalar, Tensor):
        raise TapeError("backward root must be a Tensor")
    if scalar.ndim != 0:
        raise RankError(f"backward root must be rank 0, got shape {scalar.shape}")
    if scalar.node is None and not scalar.requires_grad:
        raise TapeError("backward root is not on the gradient tape")
    wrt = list(wrt)
    targets = {id(t) for t in wrt}
    order, relevant = _relevant_order(scalar, targets)

    ctx = enable_grad() if create_graph else no_grad()
    grads: Dict[int, Tensor] = {}
    with ctx:
        grads[id(scalar)] = Tensor(np.ones((), dtype=scalar.dtype), dtype=scalar.dtype)
        for t in reversed(order):
            g = grads.get(id(t))
            if g is None or t.node is None:
                continue
            if id(t) not in targets:
                # free intermediate gradients as soon as they are consumed
                del grads[id(t)]
            parents = t.node.parents
            needs = tuple(id(p) in relevant for p in parents)
            parent_grads = t.node.backward_fn(g, needs)
            for p, pg, need in zip(parents, parent_grads, needs):
                if not need or pg is None:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else prev + pg
    out: Dict[Tensor, Tensor] = {}
    for t in wrt:
        g = grads.get(id(t))
        if g is None:
            g = Tensor(np.zeros(t.shape, dtype=t.dtype), dtype=t.dtype)
        out[t] = g
    return out


def grad(scalar: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> List[Tensor]:
    """List form of :func:`backward`, in the order of ``wrt``."""
    result = backward(scalar, wrt, create_graph=create_graph)
    return [result[t] for t in wrt]
