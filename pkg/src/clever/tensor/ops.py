"""Primitive catalog.

Each primitive implements ``forward(*arrays, **params) -> (out, ctx)`` and
``backward(ctx, grad) -> tuple`` with one entry per input (``None`` where an
input is not differentiable).  Images inside the network use NHWC layout and
convolution weights are ``(out_channels, in_channels, 3, 3)``.
"""
from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import ShapeError
from .core import register

LOG_FLOOR = 1e-12


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


@register("add")
class Add:
    def forward(self, a, b):
        _broadcast_shape("add", a, b)
        return a + b, (a.shape, b.shape)

    def backward(self, ctx, g):
        sa, sb = ctx
        return _unbroadcast(g, sa), _unbroadcast(g, sb)


@register("sub")
class Sub:
    def forward(self, a, b):
        _broadcast_shape("sub", a, b)
        return a - b, (a.shape, b.shape)

    def backward(self, ctx, g):
        sa, sb = ctx
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)


@register("mul")
class Mul:
    def forward(self, a, b):
        _broadcast_shape("mul", a, b)
        return a * b, (a, b)

    def backward(self, ctx, g):
        a, b = ctx
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@register("div")
class Div:
    def forward(self, a, b):
        _broadcast_shape("div", a, b)
        return a / b, (a, b)

    def backward(self, ctx, g):
        a, b = ctx
        return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


@register("scale")
class Scale:
    def forward(self, a, c):
        return a * a.dtype.type(c), c

    def backward(self, ctx, g):
        return (g * g.dtype.type(ctx),)


@register("matmul")
class MatMul:
    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
        return a @ b, (a, b)

    def backward(self, ctx, g):
        a, b = ctx
        return g @ b.T, a.T @ g


@register("transpose")
class Transpose:
    def forward(self, a):
        if a.ndim != 2:
            raise ShapeError(f"transpose: expected 2-D input, got shape {a.shape}")
        return a.T.copy(), None

    def backward(self, ctx, g):
        return (g.T,)


@register("reshape")
class Reshape:
    def forward(self, a, shape):
        try:
            return a.reshape(shape), a.shape
        except ValueError:
            raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None

    def backward(self, ctx, g):
        return (g.reshape(ctx),)


@register("relu")
class Relu:
    def forward(self, a):
        mask = a > 0
        return np.where(mask, a, 0).astype(a.dtype, copy=False), mask

    def backward(self, ctx, g):
        return (g * ctx,)


@register("abs")
class Abs:
    def forward(self, a):
        return np.abs(a), np.sign(a)

    def backward(self, ctx, g):
        return (g * ctx,)


@register("exp")
class Exp:
    def forward(self, a):
        out = np.exp(a)
        return out, out

    def backward(self, ctx, g):
        return (g * ctx,)


@register("log")
class Log:
    """Natural log of ``max(x, floor)``; zero gradient where clamped."""

    def forward(self, a, floor=LOG_FLOOR):
        clamped = np.maximum(a, a.dtype.type(floor))
        return np.log(clamped), (clamped, a >= floor)

    def backward(self, ctx, g):
        clamped, live = ctx
        return (np.where(live, g / clamped, 0).astype(g.dtype, copy=False),)


@register("sqrt")
class Sqrt:
    def forward(self, a):
        out = np.sqrt(a)
        return out, out

    def backward(self, ctx, g):
        return (g / (2 * ctx),)


def _axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


@register("sum")
class Sum:
    def forward(self, a, axis=None, keepdims=False):
        return a.sum(axis=axis, keepdims=keepdims), (a.shape, _axes(axis, a.ndim), keepdims)

    def backward(self, ctx, g):
        shape, axes, keepdims = ctx
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)


@register("mean")
class Mean:
    def forward(self, a, axis=None, keepdims=False):
        axes = _axes(axis, a.ndim)
        count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
        return a.mean(axis=axis, keepdims=keepdims), (a.shape, axes, keepdims, count)

    def backward(self, ctx, g):
        shape, axes, keepdims, count = ctx
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / g.dtype.type(count), shape).copy(),)


@register("softmax")
class Softmax:
    """Softmax over the last axis."""

    def forward(self, a):
        z = a - a.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        return p, p

    def backward(self, ctx, g):
        p = ctx
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)


@register("sq_norm")
class SqNorm:
    """Sum of squares, over everything (``axis=None``) or the last axis."""

    def forward(self, a, axis=None):
        if axis is None:
            return np.sum(a * a), (a, None)
        return np.sum(a * a, axis=-1), (a, -1)

    def backward(self, ctx, g):
        a, axis = ctx
        if axis is None:
            return (2 * g * a,)
        return (2 * g[..., None] * a,)


@register("dot")
class Dot:
    """Inner product over the last axis; output drops that axis."""

    def forward(self, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"dot: shapes differ {a.shape} vs {b.shape}")
        return np.sum(a * b, axis=-1), (a, b)

    def backward(self, ctx, g):
        a, b = ctx
        g = np.asarray(g)[..., None]
        return g * b, g * a


@register("concat")
class Concat:
    """Concatenate any number of tensors over the last axis."""

    def forward(self, *arrays):
        lead = {a.shape[:-1] for a in arrays}
        if len(lead) != 1:
            raise ShapeError(f"concat: leading dims differ {sorted(lead)}")
        widths = [a.shape[-1] for a in arrays]
        return np.concatenate(arrays, axis=-1), widths

    def backward(self, ctx, g):
        bounds = np.cumsum([0] + ctx)
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(ctx)))


@register("slice")
class Slice:
    """Columns ``[start, stop)`` of the last axis."""

    def forward(self, a, start, stop):
        if not 0 <= start <= stop <= a.shape[-1]:
            raise ShapeError(f"slice: [{start}, {stop}) out of range for last dim {a.shape[-1]}")
        return a[..., start:stop].copy(), (a.shape, start, stop)

    def backward(self, ctx, g):
        shape, start, stop = ctx
        out = np.zeros(shape, dtype=g.dtype)
        out[..., start:stop] = g
        return (out,)


@register("rows")
class Rows:
    """Rows ``[start, stop)`` of the first axis (splits batched views)."""

    def forward(self, a, start, stop):
        if not 0 <= start <= stop <= a.shape[0]:
            raise ShapeError(f"rows: [{start}, {stop}) out of range for first dim {a.shape[0]}")
        return a[start:stop].copy(), (a.shape, start, stop)

    def backward(self, ctx, g):
        shape, start, stop = ctx
        out = np.zeros(shape, dtype=g.dtype)
        out[start:stop] = g
        return (out,)


@register("conv2d")
class Conv2d:
    """3x3 convolution, zero padding 1, stride 1 or 2 (NHWC input)."""

    wants_mask = True

    def forward(self, x, w, stride=1):
        if stride not in (1, 2):
            raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
        if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (3, 3) or w.shape[1] != x.shape[3]:
            raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
        N, H, W, C = x.shape
        cout = w.shape[0]
        cols = kernels.im2col_3x3(x, stride)
        Ho, Wo = cols.shape[1], cols.shape[2]
        # patches are ordered (kh, kw, C)
        wmat = w.transpose(0, 2, 3, 1).reshape(cout, 9 * C)
        out = cols.reshape(-1, 9 * C) @ wmat.T
        return out.reshape(N, Ho, Wo, cout), (cols, wmat, w.shape, (H, W), stride)

    def backward(self, ctx, g, needs=(True, True)):
        cols, wmat, wshape, (H, W), stride = ctx
        N, Ho, Wo = cols.shape[:3]
        C = cols.shape[5]
        cout = wshape[0]
        g2 = g.reshape(-1, cout)
        dw = None
        if needs[1]:
            dw = (g2.T @ cols.reshape(-1, 9 * C)).reshape(cout, 3, 3, C).transpose(0, 3, 1, 2)
        dx = None
        if needs[0]:
            dcols = (g2 @ wmat).reshape(N, Ho, Wo, 3, 3, C)
            dx = kernels.col2im_3x3(dcols, H, W, stride)
        return dx, dw


@register("gap")
class GlobalAvgPool:
    """``(N, H, W, C)`` -> ``(N, C)``."""

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"gap: expected NHWC input, got {x.shape}")
        return x.mean(axis=(1, 2)), x.shape

    def backward(self, ctx, g):
        N, H, W, C = ctx
        return (np.broadcast_to(g[:, None, None, :] / g.dtype.type(H * W), ctx).copy(),)


@register("grid_sample")
class GridSample:
    """Bilinear sampling of an ``(H, W, C)`` image at fixed source coordinates.

    The coordinate grid is a parameter, so no gradient flows to it.
    """

    def forward(self, img, sy, sx, fill=0.0):
        if img.ndim != 3:
            raise ShapeError(f"grid_sample: expected (H, W, C) image, got {img.shape}")
        sy = np.asarray(sy, dtype=np.float64)
        sx = np.asarray(sx, dtype=np.float64)
        if sy.shape != sx.shape:
            raise ShapeError(f"grid_sample: grid shapes differ {sy.shape} vs {sx.shape}")
        out = kernels.bilinear_sample(img, sy, sx, fill)
        return out.astype(img.dtype, copy=False), (sy, sx, img.shape)

    def backward(self, ctx, g):
        sy, sx, (H, W, _) = ctx
        return (kernels.bilinear_sample_adjoint(g, sy, sx, H, W).astype(g.dtype, copy=False),)


@register("argmax")
class Argmax:
    """Index of the largest entry along the last axis (not differentiable)."""

    differentiable = False

    def forward(self, a):
        return a.argmax(axis=-1).astype(np.float64), None

    def backward(self, ctx, g):
        return (None,)
