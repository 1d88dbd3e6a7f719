"""Pre-training loop, optimizer, schedules, collapse telemetry and checkpoints."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import container
from .errors import ConfigError, InputError, NumericError
from .model import HE_GAIN, ModelConfig, StudentTeacher, center_update, ema_update, mean_abs, split
from .objectives import LossWeights, contrastive_loss, ddcl_losses, orthogonal_loss, preg_loss, total_loss
from .rng import RngStream
from .tensor import Tape, Tensor, no_record, rows
from .vision import STRATEGIES, AugConfig, compose_strategy

log = logging.getLogger("clever.trainer")

CHECKPOINT_MAGIC = b"CLVR"
TRAIN_LOG_HEADER = ["step", "epoch", "lr", "l_cl", "l_orth", "l_preg", "l_total"]
COLLAPSE_HEADER = ["epoch", "log10_h_ir", "log10_h_ef", "log10_z_ir", "log10_z_ef"]
OBJECTIVES = ("clever", "ddcl")

# stream keys
_K_ORDER, _K_AUG, _K_INIT = 1, 2, 3


@dataclass
class TrainConfig:
    strategy: str = "CAug"
    objective: str = "clever"
    epochs: int = 100
    warmup_epochs: int = 10
    base_lr: float = 0.001
    scale_lr_by_batch: bool = True
    min_lr_ratio: float = 0.01
    weight_decay: float = 0.04
    momentum: float = 0.9
    batch_size: int = 128
    rho: float = 0.8
    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 0.001
    tau_s: float = 0.1
    tau_t: float = 0.04
    center_momentum: float = 0.9
    orth_mode: str = "plain"
    ema_momentum: float = 0.996
    encoder: str = "conv"
    D: int = 80
    K: int = 256
    hidden: int = 256
    init_gain: float = HE_GAIN
    head_norm: bool = True
    n_local: int = 4
    probe_batch: int = 256
    checkpoint_every: int = 0  # epochs; 0 = only the final checkpoint
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"warmup_epochs must satisfy 0 <= warmup_epochs < epochs, got {self.warmup_epochs}")
        for name in ("base_lr", "batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("weight_decay must be >= 0 and momentum in [0, 1)")
        if not 0 <= self.ema_momentum <= 1:
            raise ConfigError(f"ema_momentum must lie in [0, 1], got {self.ema_momentum}")
        if not 0 < self.min_lr_ratio <= 1:
            raise ConfigError(f"min_lr_ratio must lie in (0, 1], got {self.min_lr_ratio}")
        if self.n_local < 0:
            raise ConfigError("n_local must be >= 0")
        self.loss_weights()
        self.model_config(3)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.lam, self.tau_s, self.tau_t, self.center_momentum,
                           self.orth_mode)

    def model_config(self, in_channels: int, resolution: int = 64) -> ModelConfig:
        return ModelConfig(self.encoder, in_channels, resolution, self.D, self.K, self.rho, self.hidden,
                           init_gain=self.init_gain, head_norm=self.head_norm)

    def aug_config(self) -> AugConfig:
        return AugConfig(n_local=0 if self.objective == "ddcl" else self.n_local)

    @property
    def lr(self) -> float:
        return self.base_lr * (self.batch_size / 256.0 if self.scale_lr_by_batch else 1.0)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


def lr_schedule(step: int, total_steps: int, warmup_steps: int, base_lr: float, min_lr: float) -> float:
    """Linear warmup from 0 followed by cosine decay to ``min_lr``."""
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return min_lr + 0.5 * (base_lr - min_lr) * (1 + math.cos(math.pi * progress))


def sgd_step(params: dict, grads: dict, lr: float, momentum: float, weight_decay: float, velocity: dict,
             strict: bool = True) -> None:
    """``v <- momentum * v + g + wd * p``; ``p <- p - lr * v``.  Rebinds ``p.data``."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if strict and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        dt = p.data.dtype.type
        v = velocity.get(name)
        step = g + dt(weight_decay) * p.data if weight_decay else g
        v = step if v is None else dt(momentum) * v + step
        velocity[name] = v
        p.data = p.data - dt(lr) * v


def _log10(x: float) -> float:
    return float("-inf") if x == 0 else math.log10(x)


def collapse_monitor(pair: StudentTeacher, probe_images: np.ndarray, epoch: int = 0) -> dict:
    """log10 of mean |.| over each student head's parameters and each branch of z."""
    net = pair.student
    with no_record():
        rep = split(net.encode(probe_images), net.cfg.rho)
    return {
        "epoch": epoch,
        "log10_h_ir": _log10(mean_abs([t.data for t in net.head_params("ir").values()])),
        "log10_h_ef": _log10(mean_abs([t.data for t in net.head_params("ef").values()])),
        "log10_z_ir": _log10(mean_abs([rep.z_ir.data])),
        "log10_z_ef": _log10(mean_abs([rep.z_ef.data])),
    }


def fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def rows_to_csv(header, rows_) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows_:
        w.writerow([fmt(r[h]) for h in header])
    return buf.getvalue()


@dataclass
class TrainState:
    pair: StudentTeacher
    config: TrainConfig
    velocity: dict = field(default_factory=dict)
    step: int = 0
    train_log: list = field(default_factory=list)
    collapse_log: list = field(default_factory=list)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(state: TrainState, path) -> None:
    tensors = {}
    for k, v in state.pair.state().items():
        tensors[k] = np.asarray(v, dtype=np.float32)
    for k, v in state.velocity.items():
        tensors[f"velocity.{k}"] = np.asarray(v, dtype=np.float32)
    header = {
        "config": state.config.as_dict(),
        "model": asdict(state.pair.cfg),
        "rng": {"seed": state.config.seed, "kind": "philox-counter", "step": state.step},
        "step": state.step,
        "collapse_log": state.collapse_log,
    }
    container.save(path, container.Container(CHECKPOINT_MAGIC, header, tensors))


def load_checkpoint(path) -> TrainState:
    c = container.load(path, CHECKPOINT_MAGIC)
    h = c.header
    cfg = TrainConfig.from_dict(h["config"])
    mcfg = ModelConfig(**h["model"])
    pair = StudentTeacher(mcfg, RngStream(cfg.seed).child(_K_INIT), cfg.ema_momentum)
    pair.load_state({k: v for k, v in c.tensors.items() if not k.startswith("velocity.")})
    velocity = {k[9:]: v for k, v in c.tensors.items() if k.startswith("velocity.")}
    collapse = [{k: (float(v) if k != "epoch" else int(v)) for k, v in r.items()} for r in h.get("collapse_log", [])]
    return TrainState(pair, cfg, velocity, int(h["step"]), [], collapse)


# ---------------------------------------------------------------- views


def build_views(images, indices, cfg: TrainConfig, epoch: int, workers: int = 1):
    """Per-view stacked batches ``[(B, H, W, C), ...]``: globals first, then locals."""
    root = RngStream(cfg.seed).child(_K_AUG, epoch)
    aug = cfg.aug_config()

    def one(i):
        return compose_strategy(cfg.strategy, images[i], root.child(int(i)), aug, int(i))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            bundles = list(pool.map(one, indices))
    else:
        bundles = [one(i) for i in indices]
    n_views = len(bundles[0].all_views())
    return [np.stack([b.all_views()[v][0] for b in bundles]).astype(np.float32) for v in range(n_views)]


# ---------------------------------------------------------------- training


def _forward_views(net, views, batch):
    """Encode each group of same-size views in one pass; returns per-view reps."""
    reps = []
    groups = [views[:2], views[2:]]
    for group in groups:
        if not group:
            continue
        z = net.encode(np.concatenate(group, axis=0))
        for k in range(len(group)):
            reps.append(split(rows(z, k * batch, (k + 1) * batch) if len(group) > 1 else z, net.cfg.rho))
    return reps


def _clever_step(pair, views, cfg, weights):
    B = views[0].shape[0]
    net = pair.student
    reps = _forward_views(net, views, B)
    s_ir = [net.head_ir(r.z_ir) for r in reps]
    s_ef = [net.head_ef(r.z_ef) for r in reps[:2]] if net.head_ef is not None else None
    with no_record():
        t_reps = _forward_views(pair.teacher, views[:2], B)
        t_ir = [pair.teacher.head_ir(r.z_ir) for r in t_reps]
        t_ef = [pair.teacher.head_ef(r.z_ef) for r in t_reps] if pair.teacher.head_ef is not None else None
    l_cl = contrastive_loss(t_ir, s_ir, pair.center, weights)
    l_orth, skipped = orthogonal_loss(s_ef, t_ef, weights)
    l_preg = preg_loss(net.head_ir, net.head_ef) if net.head_ef is not None else Tensor(0.0)
    total, bd = total_loss(l_cl, l_orth, l_preg, weights, skipped)
    return total, bd, t_ir


def _ddcl_step(pair, views, cfg, weights):
    B = views[0].shape[0]
    net = pair.student
    reps = _forward_views(net, views[:2], B)
    p_i = [net.head_ir(r.z_ir) for r in reps]
    p_v = [net.head_ef(r.z_ef) for r in reps] if net.head_ef is not None else None
    _, l_i, l_v = ddcl_losses(p_i, p_v, 1.0, 1.0)
    l_preg = preg_loss(net.head_ir, net.head_ef) if net.head_ef is not None else Tensor(0.0)
    total, bd = total_loss(l_i, l_v, l_preg, weights, p_v is None)
    return total, bd, None


def train(cfg: TrainConfig, images: np.ndarray, workers: int = 1, resume: TrainState | None = None,
          callback=None, stop_after_step: int | None = None) -> TrainState:
    """Pre-train on ``images`` ``(N, H, W, C)``.

    ``callback(state)`` runs after every optimizer step.  ``stop_after_step``
    ends training early (used to produce resumable checkpoints).
    """
    images = np.asarray(images)
    if images.ndim != 4 or len(images) == 0:
        raise InputError("training dataset is empty")
    N, H, W, C = images.shape
    B = min(cfg.batch_size, N)
    steps_per_epoch = N // B
    total_steps = steps_per_epoch * cfg.epochs
    warmup_steps = steps_per_epoch * cfg.warmup_epochs
    base_lr = cfg.lr
    min_lr = base_lr * cfg.min_lr_ratio
    weights = cfg.loss_weights()

    if resume is None:
        pair = StudentTeacher(cfg.model_config(C, H), RngStream(cfg.seed).child(_K_INIT), cfg.ema_momentum)
        state = TrainState(pair, cfg)
    else:
        state = resume
        state.config = cfg
    pair = state.pair
    params = pair.student.parameters()
    probe = images[:min(cfg.probe_batch, N)].astype(np.float32)
    if resume is None:
        state.collapse_log.append(collapse_monitor(pair, probe, 0))

    step_fn = _clever_step if cfg.objective == "clever" else _ddcl_step
    t0 = time.perf_counter()
    while state.step < total_steps:
        epoch, b = divmod(state.step, steps_per_epoch)
        order = RngStream(cfg.seed).child(_K_ORDER, epoch).generator().permutation(N)
        idx = order[b * B:(b + 1) * B]
        views = build_views(images, idx, cfg, epoch, workers)
        lr = lr_schedule(state.step, total_steps, warmup_steps, base_lr, min_lr)
        with Tape() as tape:
            total, bd, t_ir = step_fn(pair, views, cfg, weights)
        if not math.isfinite(bd.l_total):
            raise NumericError(f"non-finite loss at step {state.step}: {bd}")
        grads_by_id = tape.backward(total)
        grads = {name: grads_by_id[p.node_id].data for name, p in params.items() if p.node_id in grads_by_id}
        for p in params.values():
            p.grad = None
        sgd_step(params, grads, lr, cfg.momentum, cfg.weight_decay, state.velocity)
        ema_update(pair)
        if t_ir is not None:
            center_update(pair, t_ir, weights.center_momentum)
        state.step += 1
        state.train_log.append({"step": state.step, "epoch": epoch, "lr": lr, "l_cl": bd.l_cl,
                                "l_orth": bd.l_orth, "l_preg": bd.l_preg, "l_total": bd.l_total})
        if callback is not None:
            callback(state)
        if state.step % steps_per_epoch == 0:
            row = collapse_monitor(pair, probe, epoch + 1)
            state.collapse_log.append(row)
            log.info("epoch %d/%d step %d loss %.4f h_ir %.2f h_ef %.2f (%.0fs)", epoch + 1, cfg.epochs,
                     state.step, bd.l_total, row["log10_h_ir"], row["log10_h_ef"], time.perf_counter() - t0)
        if stop_after_step is not None and state.step >= stop_after_step:
            break
    return state
