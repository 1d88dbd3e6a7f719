"""Training objectives.

All losses take and return :class:`~clever.tensor.Tensor` values so they can
be differentiated on a tape.  Teacher inputs are treated as constants.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ContractError, NumericError
from .model import param_sq_norm
from .tensor import Tensor, dot, forward, softmax, sq_norm
from .tensor.ops import LOG_FLOOR

ORTH_MODES = ("plain", "tempered", "raw")


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 0.001
    tau_s: float = 0.1
    tau_t: float = 0.04
    center_momentum: float = 0.9
    orth_mode: str = "plain"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.lam < 0:
            raise ConfigError("alpha, beta and lambda must be >= 0")
        if self.tau_s <= 0 or self.tau_t <= 0:
            raise ConfigError("temperatures must be > 0")
        if not 0 <= self.center_momentum < 1:
            raise ConfigError(f"center_momentum must lie in [0, 1), got {self.center_momentum}")
        if self.orth_mode not in ORTH_MODES:
            raise ConfigError(f"orth_mode must be one of {ORTH_MODES}, got {self.orth_mode!r}")


@dataclass
class LossBreakdown:
    l_cl: float
    l_orth: float
    l_preg: float
    l_total: float
    orth_skipped: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def _const(x, dtype=None):
    if isinstance(x, Tensor):
        return Tensor(x.data)
    return Tensor(np.asarray(x, dtype=dtype))


def teacher_targets(teacher_logits, center, tau_t):
    """Centered, sharpened teacher distributions (numpy, no gradient)."""
    out = []
    for t in teacher_logits:
        t = np.asarray(t.data if isinstance(t, Tensor) else t)
        z = (t - center) / tau_t
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        out.append((e / e.sum(axis=-1, keepdims=True)).astype(t.dtype, copy=False))
    return out


def cross_entropy(p_t, logp_s: Tensor) -> Tensor:
    """Batch mean of -sum_k p_t[k] log p_s[k]."""
    return -(forward("sum", [logp_s * _const(p_t)], axis=-1).mean())


def contrastive_loss(teacher_logits, student_logits, center, weights: LossWeights | None = None) -> Tensor:
    """Teacher/student cross-entropy averaged over pairs of distinct views.

    ``teacher_logits`` holds one entry per global view, ``student_logits`` one
    per view (global views first).
    """
    w = weights or LossWeights()
    n_t, n_s = len(teacher_logits), len(student_logits)
    pairs = [(g, v) for g in range(n_t) for v in range(n_s) if v != g]
    if n_t < 1 or n_s < 2 or not pairs:
        raise ContractError(f"contrastive loss needs at least 2 views, got {n_t} teacher / {n_s} student")
    targets = teacher_targets(teacher_logits, center, w.tau_t)
    logp = [softmax(s * (1.0 / w.tau_s)).log(LOG_FLOOR) for s in student_logits]
    total = None
    for g, v in pairs:
        term = cross_entropy(targets[g], logp[v])
        total = term if total is None else total + term
    return total * (1.0 / len(pairs))


def _orth_probs(logits, mode, tau):
    if mode == "raw":
        return logits
    if mode == "tempered":
        return softmax(logits * (1.0 / tau))
    return softmax(logits)


def orthogonal_loss(student_ef_logits, teacher_ef_logits, weights: LossWeights | None = None):
    """Mean over the cross pairs (1, 2) and (2, 1) of the EF distributions' dot product.

    Returns ``(loss, skipped)``; ``skipped`` is True when there is no EF branch.
    """
    w = weights or LossWeights()
    if student_ef_logits is None or teacher_ef_logits is None or len(student_ef_logits) == 0:
        return Tensor(0.0), True
    if len(student_ef_logits) < 2 or len(teacher_ef_logits) < 2:
        raise ContractError("orthogonal loss needs two global views")
    s = [_orth_probs(x, w.orth_mode, w.tau_s) for x in student_ef_logits[:2]]
    t = [_orth_probs(_const(x), w.orth_mode, w.tau_t) for x in teacher_ef_logits[:2]]
    loss = dot(s[0], t[1]).mean() + dot(s[1], t[0]).mean()
    return loss * 0.5, False


def preg_loss(head_ir, head_ef) -> Tensor:
    """|sum of squared EF-head params - sum of squared IR-head params|."""
    return (param_sq_norm(head_ef) - param_sq_norm(head_ir)).abs()


def total_loss(l_cl: Tensor, l_orth: Tensor, l_preg: Tensor, weights: LossWeights | None = None,
               orth_skipped: bool = False):
    """Weighted objective.  Returns ``(tensor, LossBreakdown)``.

    The breakdown's ``l_total`` is recombined in float64 from the float64
    component values.
    """
    w = weights or LossWeights()
    total = l_cl * w.alpha
    if w.beta and not orth_skipped:
        total = total + l_orth * w.beta
    if w.lam:
        total = total + l_preg * w.lam
    parts = [float(np.asarray(x.data if isinstance(x, Tensor) else x)) for x in (l_cl, l_orth, l_preg)]
    recombined = w.alpha * parts[0] + w.beta * parts[1] + w.lam * parts[2]
    return total, LossBreakdown(parts[0], parts[1], parts[2], recombined, orth_skipped)


COS_EPS = 1e-12


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity; raises NumericError on a zero-norm row."""
    na = sq_norm(a, axis=-1)
    nb = sq_norm(b, axis=-1)
    if np.any(np.sqrt(na.data) < COS_EPS) or np.any(np.sqrt(nb.data) < COS_EPS):
        raise NumericError("cosine similarity of a zero-norm projection")
    return dot(a, b) / (na * nb).sqrt()


def ddcl_losses(p_i, p_v, alpha: float = 1.0, beta: float = 1.0):
    """Two-view loss on raw projections.

    ``p_i`` and ``p_v`` are pairs of head outputs for the invariant and the
    equivariant branch.  Returns ``(total, l_i, l_v)`` where
    ``l_i = -mean cos(p_i[0], p_i[1])`` and ``l_v = mean dot(p_v[0], p_v[1])``.
    """
    l_i = -cosine(p_i[0], p_i[1]).mean()
    if p_v is None:
        l_v = Tensor(0.0)
        return l_i * alpha, l_i, l_v
    l_v = dot(p_v[0], p_v[1]).mean()
    return l_i * alpha + l_v * beta, l_i, l_v
