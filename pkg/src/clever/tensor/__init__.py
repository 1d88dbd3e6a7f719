"""Minimal reverse-mode automatic differentiation on numpy arrays."""
from . import ops as _ops  # noqa: F401  (registers primitives)
from .core import OPS, Tape, Tensor, backward, current_tape, forward, no_record, strict_mode
from .gradcheck import GradCheck, check_gradients, finite_diff_check


def concat(tensors):
    return forward("concat", list(tensors))


def dot(a, b):
    return forward("dot", [a, b])


def sq_norm(a, axis=None):
    return forward("sq_norm", [a], axis=axis)


def rows(a, start, stop):
    return forward("rows", [a], start=start, stop=stop)


def softmax(a):
    return forward("softmax", [a])


def conv2d(x, w, stride=1):
    return forward("conv2d", [x, w], stride=stride)


def gap(x):
    return forward("gap", [x])


def grid_sample(img, sy, sx, fill=0.0):
    return forward("grid_sample", [img], sy=sy, sx=sx, fill=fill)


def primitives() -> list[str]:
    return sorted(OPS)


__all__ = [
    "GradCheck",
    "OPS",
    "Tape",
    "Tensor",
    "backward",
    "check_gradients",
    "concat",
    "conv2d",
    "current_tape",
    "dot",
    "finite_diff_check",
    "forward",
    "gap",
    "grid_sample",
    "no_record",
    "primitives",
    "rows",
    "softmax",
    "sq_norm",
    "strict_mode",
]
