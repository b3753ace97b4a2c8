"""Differentiable primitives.

Backward rules are expressed with these same ops, so any gradient can be
recorded and differentiated again. The convolution family is closed under
differentiation: ``conv2d``, ``conv_transpose2d`` and ``conv2d_weight`` are
each other's adjoints in every argument.
"""

from __future__ import annotations

import builtins
from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import DimensionError, DomainError, GeometryError
from .tensor import Tensor, as_tensor

__all__ = [
    "add", "sub", "neg", "mul", "div", "scale", "square", "absolute",
    "log", "exp", "sigmoid", "softplus", "leaky_relu",
    "sum", "mean", "sum_to", "broadcast_to", "reshape", "transpose",
    "matmul", "getitem", "concat_channels", "concat",
    "avg_pool_2x_down", "nearest_2x_up", "resize",
    "conv2d", "conv_transpose2d", "conv2d_weight",
    "conv2d_downscale", "conv2d_upscale", "elementwise",
]


def _t(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


# --------------------------------------------------------------------------
# broadcasting helpers


def _reduce_to(arr: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if arr.shape == shape:
        return arr
    lead = arr.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and arr.shape[i + lead] != 1
    )
    out = arr.sum(axis=axes, keepdims=True)
    return out.reshape(shape)


def sum_to(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    x = _t(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape

    def bw(g, needs):
        return (broadcast_to(g, src),)

    return Tensor._from_op(_reduce_to(x.data, shape), "sum_to", (x,), bw)


def broadcast_to(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    x = _t(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape

    def bw(g, needs):
        return (sum_to(g, src),)

    return Tensor._from_op(np.broadcast_to(x.data, shape), "broadcast_to", (x,), bw)


def _check_operands(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_operands(a, b, "add")
    sa, sb = a.shape, b.shape

    def bw(g, needs):
        return (sum_to(g, sa) if needs[0] else None, sum_to(g, sb) if needs[1] else None)

    return Tensor._from_op(a.data + b.data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_operands(a, b, "sub")
    sa, sb = a.shape, b.shape

    def bw(g, needs):
        return (sum_to(g, sa) if needs[0] else None, sum_to(neg(g), sb) if needs[1] else None)

    return Tensor._from_op(a.data - b.data, "sub", (a, b), bw)


def neg(a) -> Tensor:
    a = _t(a)
    return Tensor._from_op(-a.data, "neg", (a,), lambda g, needs: (neg(g),))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_operands(a, b, "mul")
    sa, sb = a.shape, b.shape

    def bw(g, needs):
        ga = sum_to(mul(g, b), sa) if needs[0] else None
        gb = sum_to(mul(g, a), sb) if needs[1] else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, "mul", (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_operands(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    sa, sb = a.shape, b.shape

    def bw(g, needs):
        ga = sum_to(div(g, b), sa) if needs[0] else None
        gb = sum_to(neg(div(mul(g, a), mul(b, b))), sb) if needs[1] else None
        return ga, gb

    return Tensor._from_op(a.data / b.data, "div", (a, b), bw)


def scale(a, c: float) -> Tensor:
    """Multiply by a constant (non-differentiable) scalar."""
    a = _t(a)
    c = float(c)
    data = a.data * a.data.dtype.type(c)
    return Tensor._from_op(data, "scale", (a,), lambda g, needs: (scale(g, c),))


def square(a) -> Tensor:
    a = _t(a)

    def bw(g, needs):
        return (mul(g, scale(a, 2.0)),)

    return Tensor._from_op(a.data * a.data, "square", (a,), bw)


def absolute(a) -> Tensor:
    a = _t(a)
    sign = Tensor(np.sign(a.data), dtype=a.dtype)
    return Tensor._from_op(np.abs(a.data), "abs", (a,), lambda g, needs: (mul(g, sign),))


def log(a) -> Tensor:
    a = _t(a)
    if np.any(a.data <= 0):
        raise DomainError("log: input must be strictly positive")
    return Tensor._from_op(np.log(a.data), "log", (a,), lambda g, needs: (div(g, a),))


def exp(a) -> Tensor:
    a = _t(a)
    out_box = []

    def bw(g, needs):
        return (mul(g, out_box[0]),)

    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    out = Tensor._from_op(data, "exp", (a,), bw)
    out_box.append(out)
    return out


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _t(a)
    out_box = []

    def bw(g, needs):
        s = out_box[0]
        return (mul(g, mul(s, sub(1.0, s))),)

    out = Tensor._from_op(_np_sigmoid(a.data), "sigmoid", (a,), bw)
    out_box.append(out)
    return out


def softplus(a) -> Tensor:
    """log(1 + e^x), evaluated without overflow."""
    a = _t(a)
    x = a.data
    data = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return Tensor._from_op(data, "softplus", (a,), lambda g, needs: (mul(g, sigmoid(a)),))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _t(a)
    m = np.where(a.data > 0, a.dtype.type(1), a.dtype.type(slope))
    mask = Tensor._from_op(m, "leaky_relu_mask", (), None)
    data = a.data * m
    return Tensor._from_op(data, "leaky_relu", (a,), lambda g, needs: (mul(g, mask),))


def elementwise(a, kind: str, b=None, slope: float = 0.2, factor: float = 1.0) -> Tensor:
    """Dispatch by name; ``kind`` is one of leaky_relu, sigmoid, log, add, mul, scale."""
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "log":
        return log(a)
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    if kind == "scale":
        return scale(a, factor)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# --------------------------------------------------------------------------
# reductions and shape


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _t(a)
    src = a.shape
    axes = tuple(range(a.ndim)) if axis is None else ((axis,) if isinstance(axis, int) else tuple(axis))
    axes = tuple(ax % a.ndim for ax in axes) if a.ndim else ()
    kept = tuple(1 if i in axes else s for i, s in enumerate(src))
    data = np.sum(a.data, axis=axes, keepdims=keepdims)

    def bw(g, needs):
        if g.shape != kept:
            g = reshape(g, kept)
        return (broadcast_to(g, src),)

    return Tensor._from_op(np.asarray(data, dtype=a.dtype), "sum", (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = _t(a)
    src = a.shape
    data = a.data.reshape(shape)
    return Tensor._from_op(data, "reshape", (a,), lambda g, needs: (reshape(g, src),))


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = _t(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(a.data.transpose(axes), "transpose", (a,), lambda g, needs: (transpose(g, inv),))


def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g, needs):
        ga = matmul(g, transpose(b)) if needs[0] else None
        gb = matmul(transpose(a), g) if needs[1] else None
        return ga, gb

    return Tensor._from_op(a.data @ b.data, "matmul", (a, b), bw)


def _scatter(g: Tensor, shape: Tuple[int, ...], index) -> Tensor:
    """Adjoint of ``getitem``: place ``g`` into zeros of ``shape`` at ``index``."""

    def fwd():
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, index, g.data) if _has_advanced(index) else out.__setitem__(index, g.data)
        return out

    return Tensor._from_op(fwd(), "scatter", (g,), lambda gg, needs: (getitem(gg, index),))


def _has_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return builtins.any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(a, index) -> Tensor:
    a = _t(a)
    src = a.shape
    return Tensor._from_op(a.data[index], "getitem", (a,), lambda g, needs: (_scatter(g, src, index),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_t(t) for t in tensors]
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or builtins.any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != axis
        ):
            raise DimensionError(f"concat: shapes {[x.shape for x in tensors]} differ off axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g, needs):
        out = []
        for i, need in enumerate(needs):
            if not need:
                out.append(None)
                continue
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(bounds[i]), int(bounds[i + 1]))
            out.append(getitem(g, tuple(idx)))
        return out

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._from_op(data, "concat", tuple(tensors), bw)


def concat_channels(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.ndim != 4 or b.ndim != 4:
        raise DimensionError("concat_channels expects rank-4 tensors")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise DimensionError(f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}")
    return concat([a, b], axis=1)


# --------------------------------------------------------------------------
# resampling


def avg_pool_2x_down(a) -> Tensor:
    a = _t(a)
    n, c, h, w = a.shape
    if h % 2 or w % 2:
        raise GeometryError(f"avg_pool_2x_down needs even spatial dims, got {h}x{w}")
    data = a.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return Tensor._from_op(data, "avg_pool_2x_down", (a,), lambda g, needs: (scale(nearest_2x_up(g), 0.25),))


def nearest_2x_up(a) -> Tensor:
    a = _t(a)
    n, c, h, w = a.shape
    data = np.broadcast_to(a.data[:, :, :, None, :, None], (n, c, h, 2, w, 2)).reshape(n, c, 2 * h, 2 * w)
    return Tensor._from_op(data, "nearest_2x_up", (a,), lambda g, needs: (scale(avg_pool_2x_down(g), 4.0),))


def resize(a, mode: str) -> Tensor:
    if mode == "avg_pool_2x_down":
        return avg_pool_2x_down(a)
    if mode == "nearest_2x_up":
        return nearest_2x_up(a)
    raise ValueError(f"unknown resize mode {mode!r}")


# --------------------------------------------------------------------------
# convolution family (cross-correlation, NCHW, weights OIHW)


# Patch matrices are laid out [N, kh, kw, C, L] so each tap copy is one
# contiguous block; weights are permuted to (O, kh, kw, C) to match.


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    """Per-image patch matrices, shape [N, kh*kw*C, ho*wo]."""
    n, c, h, w = x.shape
    if pad:
        xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    cols = np.empty((n, kh, kw, c, ho, wo), dtype=x.dtype)
    for i in range(kh):
        hi = i + stride * (ho - 1) + 1
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i:hi:stride, j:j + stride * (wo - 1) + 1:stride]
    return cols.reshape(n, kh * kw * c, ho * wo)


def _col2im(cols: np.ndarray, c: int, h: int, w: int, kh: int, kw: int,
            stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back into images."""
    n = cols.shape[0]
    cols = cols.reshape(n, kh, kw, c, ho, wo)
    hp = builtins.max(h + 2 * pad, stride * (ho - 1) + kh)
    wp = builtins.max(w + 2 * pad, stride * (wo - 1) + kw)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        hi = i + stride * (ho - 1) + 1
        for j in range(kw):
            out[:, :, i:hi:stride, j:j + stride * (wo - 1) + 1:stride] += cols[:, i, j]
    if hp == h and wp == w:
        return out
    return np.ascontiguousarray(out[:, :, pad:pad + h, pad:pad + w])


def _out_size(h: int, k: int, stride: int, pad: int) -> int:
    return (h + 2 * pad - k) // stride + 1


def _is_pointwise(kh: int, kw: int, stride: int, pad: int) -> bool:
    return kh == kw == 1 and stride == 1 and pad == 0


def _wmat(w: np.ndarray) -> np.ndarray:
    """[A, B, kh, kw] -> [A, kh*kw*B] in patch order."""
    a = w.shape[0]
    return w.transpose(0, 2, 3, 1).reshape(a, -1)


def _conv2d_np(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho, wo = _out_size(h, kh, stride, pad), _out_size(wd, kw, stride, pad)
    if _is_pointwise(kh, kw, stride, pad):
        cols = x.reshape(n, c, h * wd)
    else:
        cols = _im2col(x, kh, kw, stride, pad, ho, wo)
    return np.matmul(_wmat(w), cols).reshape(n, o, ho, wo)


def _conv_transpose2d_np(y: np.ndarray, w: np.ndarray, stride: int, pad: int, out_hw: Tuple[int, int]) -> np.ndarray:
    n, o, ho, wo = y.shape
    _, c, kh, kw = w.shape
    h, wd = out_hw
    cols = np.matmul(_wmat(w).T, y.reshape(n, o, ho * wo))
    if _is_pointwise(kh, kw, stride, pad):
        return cols.reshape(n, c, ho, wo)
    return _col2im(cols, c, h, wd, kh, kw, stride, pad, ho, wo)


def _conv2d_weight_np(x: np.ndarray, gy: np.ndarray, stride: int, pad: int, ksize: Tuple[int, int]) -> np.ndarray:
    n, c, h, wd = x.shape
    _, o, ho, wo = gy.shape
    kh, kw = ksize
    if _is_pointwise(kh, kw, stride, pad):
        cols = x.reshape(n, c, h * wd)
    else:
        cols = _im2col(x, kh, kw, stride, pad, ho, wo)
    per_image = np.matmul(gy.reshape(n, o, ho * wo), cols.transpose(0, 2, 1))
    return per_image.sum(axis=0).reshape(o, kh, kw, c).transpose(0, 3, 1, 2).copy()


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` [N,Ci,H,W] with ``w`` [Co,Ci,k,k]."""
    x, w = _t(x), _t(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
    h, wd = x.shape[2:]
    ksize = w.shape[2:]

    def bw(g, needs):
        gx = conv_transpose2d(g, w, stride, padding, (h, wd)) if needs[0] else None
        gw = conv2d_weight(x, g, stride, padding, ksize) if needs[1] else None
        return gx, gw

    return Tensor._from_op(_conv2d_np(x.data, w.data, stride, padding), "conv2d", (x, w), bw)


def conv_transpose2d(y, w, stride: int = 1, padding: int = 0, out_hw: Optional[Tuple[int, int]] = None) -> Tensor:
    """Adjoint of :func:`conv2d` in its input.

    ``y`` is [N,Co,Ho,Wo] and ``w`` is [Co,Ci,k,k]; the result is [N,Ci,H,W].
    ``out_hw`` defaults to the smallest size that reaches every kernel tap.
    """
    y, w = _t(y), _t(w)
    if y.ndim != 4 or w.ndim != 4 or y.shape[1] != w.shape[0]:
        raise DimensionError(f"conv_transpose2d: input {y.shape} incompatible with weight {w.shape}")
    kh, kw = w.shape[2:]
    if out_hw is None:
        out_hw = ((y.shape[2] - 1) * stride - 2 * padding + kh, (y.shape[3] - 1) * stride - 2 * padding + kw)
    out_hw = (int(out_hw[0]), int(out_hw[1]))
    if _out_size(out_hw[0], kh, stride, padding) != y.shape[2] or _out_size(out_hw[1], kw, stride, padding) != y.shape[3]:
        raise GeometryError(f"conv_transpose2d: output size {out_hw} inconsistent with input {y.shape[2:]}")

    def bw(g, needs):
        gy = conv2d(g, w, stride, padding) if needs[0] else None
        gw = conv2d_weight(g, y, stride, padding, (kh, kw)) if needs[1] else None
        return gy, gw

    data = _conv_transpose2d_np(y.data, w.data, stride, padding, out_hw)
    return Tensor._from_op(data, "conv_transpose2d", (y, w), bw)


def conv2d_weight(x, gy, stride: int, padding: int, ksize: Tuple[int, int]) -> Tensor:
    """Gradient of ``<conv2d(x, w), gy>`` with respect to ``w``; bilinear in (x, gy)."""
    x, gy = _t(x), _t(gy)
    h, wd = x.shape[2:]

    def bw(g, needs):
        gx = conv_transpose2d(gy, g, stride, padding, (h, wd)) if needs[0] else None
        ggy = conv2d(x, g, stride, padding) if needs[1] else None
        return gx, ggy

    data = _conv2d_weight_np(x.data, gy.data, stride, padding, tuple(ksize))
    return Tensor._from_op(data, "conv2d_weight", (x, gy), bw)


def _add_bias(out: Tensor, bias) -> Tensor:
    if bias is None:
        return out
    bias = _t(bias)
    if bias.shape != (out.shape[1],):
        raise DimensionError(f"bias shape {bias.shape} does not match {out.shape[1]} channels")
    return add(out, reshape(bias, (1, -1, 1, 1)))


def conv2d_downscale(x, weight, bias=None) -> Tensor:
    """Stride-2 convolution with 'same' padding: [N,Ci,H,W] -> [N,Co,H/2,W/2]."""
    x, weight = _t(x), _t(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d_downscale: input {x.shape} incompatible with weight {weight.shape}")
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise GeometryError(f"conv2d_downscale needs even spatial dims, got {h}x{w}")
    k = weight.shape[2]
    if k % 2 == 0:
        raise GeometryError(f"conv2d_downscale needs an odd kernel, got {k}")
    return _add_bias(conv2d(x, weight, stride=2, padding=(k - 1) // 2), bias)


def conv2d_upscale(x, weight, bias=None) -> Tensor:
    """Stride-2 transposed convolution: [N,Ci,H,W] -> [N,Co,2H,2W], weight [Ci,Co,k,k]."""
    x, weight = _t(x), _t(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"conv2d_upscale: input {x.shape} incompatible with weight {weight.shape}")
    k = weight.shape[2]
    if k % 2:
        raise GeometryError(f"conv2d_upscale needs an even kernel, got {k}")
    h, w = x.shape[2:]
    return _add_bias(conv_transpose2d(x, weight, stride=2, padding=(k - 2) // 2, out_hw=(2 * h, 2 * w)), bias)
