"""Central-difference validation of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, UnsupportedOp
from .core import Tape, Tensor, forward, get_op, no_record
from .ops import LOG_FLOOR


@dataclass
class GradCheck:
    max_rel_error: float
    checked: int
    clamped: int = 0

    @property
    def status(self) -> str:
        if self.checked == 0 and self.clamped:
            return "clamped"
        return "ok"


def _rel_err(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))


def check_gradients(fn, point, eps=1e-5, skip=None) -> list[GradCheck]:
    """Compare ``fn``'s tape gradient with central differences.

    ``fn`` maps a list of Tensors to a scalar Tensor.  ``skip(i, idx, x)``
    may flag coordinates where the function is not smooth at ``eps``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    arrays = [np.array(p.data if isinstance(p, Tensor) else p, dtype=np.float64) for p in point]
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ContractError("gradient check point must be finite")

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(leaves)
    if out.size != 1:
        raise ContractError(f"checked function must return a scalar, got shape {out.shape}")
    grads = tape.backward(out)

    def value(vals):
        with no_record():
            return float(fn([Tensor(v) for v in vals]).data)

    results = []
    for i, a in enumerate(arrays):
        analytic = grads[leaves[i].node_id].data
        worst, checked, clamped = 0.0, 0, 0
        for idx in np.ndindex(a.shape):
            if skip is not None and skip(i, idx, a):
                clamped += 1
                continue
            orig = a[idx]
            a[idx] = orig + eps
            up = value(arrays)
            a[idx] = orig - eps
            down = value(arrays)
            a[idx] = orig
            numeric = (up - down) / (2 * eps)
            worst = max(worst, float(_rel_err(analytic[idx], numeric)))
            checked += 1
        results.append(GradCheck(worst, checked, clamped))
    return results


def finite_diff_check(op_kind: str, point, eps: float = 1e-5, seed: int = 0, **params) -> list[GradCheck]:
    """Check one primitive at ``point`` (a list of input arrays).

    Non-scalar outputs are reduced with fixed random weights so that every
    output coordinate contributes.  For ``log`` the coordinates within ``eps``
    of the clamp floor are skipped and counted as clamped.
    """
    op = get_op(op_kind)
    if getattr(op, "differentiable", True) is False:
        raise UnsupportedOp(f"{op_kind} has no analytic gradient")
    arrays = [np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64) for p in point]
    with no_record():
        probe = forward(op_kind, [Tensor(a) for a in arrays], **params).data
    weights = Tensor(np.random.default_rng(seed).standard_normal(probe.shape))

    def fn(ts):
        out = forward(op_kind, ts, **params)
        if out.ndim == 0:
            return out * weights
        return forward("sum", [out * weights])

    skip = None
    if op_kind == "log":
        floor = params.get("floor", LOG_FLOOR)

        def skip(i, idx, a):
            return a[idx] - eps <= floor

    return check_gradients(fn, arrays, eps=eps, skip=skip)
