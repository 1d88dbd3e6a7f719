"""Encoders, projection heads, the invariant/equivariant split and the EMA pair."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .rng import RngStream
from .tensor import Tensor, concat, conv2d, forward, gap, sq_norm

ENCODERS = ("conv", "mlp")
CONV_CHANNELS = (16, 32, 64, 128)
HE_GAIN = math.sqrt(6.0)  # uniform bound sqrt(6 / fan_in): variance-preserving through relu
NORM_EPS = 1e-12


@dataclass
class ModelConfig:
    encoder: str = "conv"
    in_channels: int = 3
    resolution: int = 64  # only used by the MLP encoder
    D: int = 80
    K: int = 256
    rho: float = 0.8
    hidden: int = 256
    mlp_hidden: int = 256
    dtype: str = "float32"
    init_gain: float = HE_GAIN  # 1.0 gives the plain 1/sqrt(fan_in) bound
    head_norm: bool = True  # L2-normalize head outputs; False gives raw logits

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if not 0 < self.rho <= 1:
            raise ConfigError(f"rho must lie in (0, 1], got {self.rho}")
        if self.D < 1 or self.K < 1:
            raise ConfigError("D and K must be positive")
        if not self.init_gain > 0:
            raise ConfigError(f"init_gain must be > 0, got {self.init_gain}")
        split_widths(self.D, self.rho)

    @property
    def d_ir(self) -> int:
        return split_widths(self.D, self.rho)[0]

    @property
    def d_ef(self) -> int:
        return split_widths(self.D, self.rho)[1]


def split_widths(D: int, rho: float) -> tuple[int, int]:
    if not 0 < rho <= 1:
        raise ConfigError(f"rho must lie in (0, 1], got {rho}")
    # the epsilon keeps floor(0.8 * 10) at 8 despite binary rounding
    d_ir = int(math.floor(rho * D + 1e-9))
    if d_ir == 0:
        raise ConfigError(f"floor(rho * D) = 0 for rho={rho}, D={D}: the invariant branch would be empty")
    return d_ir, D - d_ir


class Module:
    """Ordered collection of named parameter tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name, array, dtype):
        t = Tensor(np.asarray(array, dtype=dtype), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def __getattr__(self, name):
        # only reached when normal lookup fails: expose params as attributes
        params = self.__dict__.get("_params", {})
        if name in params:
            return params[name]
        raise AttributeError(name)

    def swap_parameters(self, mapping: dict[str, Tensor]) -> dict[str, Tensor]:
        """Replace parameters by dotted name; returns the displaced tensors."""
        old = {}
        for key, t in mapping.items():
            owner, _, leaf = key.rpartition(".")
            mod = self
            for part in filter(None, owner.split(".")):
                mod = mod._children[part]
            old[key] = mod._params[leaf]
            mod._params[leaf] = t
        return old

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self._params.items()}
        for cname, child in self._children.items():
            out.update(child.parameters(f"{prefix}{cname}."))
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.parameters().items()}

    def load_state(self, state: dict) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise ConfigError(f"state is missing parameters: {sorted(missing)}")
        for k, t in params.items():
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ShapeError(f"{k}: expected shape {t.shape}, got {arr.shape}")
            t.data = arr.astype(t.dtype, copy=True)

    def freeze(self) -> None:
        for t in self.parameters().values():
            t.requires_grad = False
            t.node_id = None


def _uniform(gen, shape, fan_in, gain=1.0):
    bound = gain / math.sqrt(fan_in)
    return gen.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in, n_out, gen, dtype, gain=1.0):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.add_param("w", _uniform(gen, (n_in, n_out), max(n_in, 1), gain), dtype)
        self.add_param("b", np.zeros(n_out), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class ConvTiny(Module):
    """Four stride-2 3x3 conv blocks, global average pool, linear to D."""

    def __init__(self, in_channels, D, gen, dtype, channels=CONV_CHANNELS, gain=1.0):
        super().__init__()
        self.blocks = []
        c_in = in_channels
        for i, c in enumerate(channels):
            blk = Module()
            blk.add_param("w", _uniform(gen, (c, c_in, 3, 3), 9 * c_in, gain), dtype)
            blk.add_param("b", np.zeros(c), dtype)
            self.blocks.append(self.add_child(f"conv{i}", blk))
            c_in = c
        self.fc = self.add_child("fc", Linear(c_in, D, gen, dtype, gain))
        self.in_channels = in_channels

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(f"ConvTiny expects (N, H, W, {self.in_channels}) input, got {x.shape}")
        for blk in self.blocks:
            x = (conv2d(x, blk.w, stride=2) + blk.b).relu()
        return self.fc(gap(x))


class MlpTiny(Module):
    """Flatten, two hidden relu layers, linear to D."""

    def __init__(self, in_channels, resolution, D, gen, dtype, hidden=256, gain=1.0):
        super().__init__()
        self.n_in = in_channels * resolution * resolution
        self.l0 = self.add_child("l0", Linear(self.n_in, hidden, gen, dtype, gain))
        self.l1 = self.add_child("l1", Linear(hidden, hidden, gen, dtype, gain))
        self.l2 = self.add_child("l2", Linear(hidden, D, gen, dtype, gain))

    def __call__(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        if x.size != n * self.n_in:
            raise ShapeError(f"MlpTiny expects {self.n_in} inputs per sample, got shape {x.shape}")
        x = x.reshape(n, self.n_in)
        return self.l2(self.l1(self.l0(x).relu()).relu())


class ProjectionHead(Module):
    """Two relu hidden layers then a linear map to K logits.

    With ``norm`` the logits are scaled to unit L2 norm, which bounds the
    tempered softmax inputs by ``1 / tau``.
    """

    def __init__(self, n_in, K, gen, dtype, hidden=256, gain=1.0, norm=False):
        super().__init__()
        self.n_in = n_in
        self.norm = norm
        self.l0 = self.add_child("l0", Linear(n_in, hidden, gen, dtype, gain))
        self.l1 = self.add_child("l1", Linear(hidden, hidden, gen, dtype, gain))
        self.l2 = self.add_child("l2", Linear(hidden, K, gen, dtype, gain))

    def __call__(self, z: Tensor) -> Tensor:
        return project(self, z)


def project(head: ProjectionHead, z: Tensor) -> Tensor:
    if z.ndim != 2 or z.shape[1] != head.n_in:
        raise ShapeError(f"head expects (batch, {head.n_in}) input, got {z.shape}")
    out = head.l2(head.l1(head.l0(z).relu()).relu())
    if head.norm:
        out = out / ((out * out).sum(axis=-1, keepdims=True) + NORM_EPS).sqrt()
    return out


@dataclass
class SplitRepresentation:
    z_ir: Tensor
    z_ef: Tensor

    @property
    def d_ir(self) -> int:
        return self.z_ir.shape[1]

    @property
    def d_ef(self) -> int:
        return self.z_ef.shape[1]


def split(z: Tensor, rho: float) -> SplitRepresentation:
    d_ir, _ = split_widths(z.shape[1], rho)
    return SplitRepresentation(z[..., :d_ir], z[..., d_ir:])


def joint_feature(rep: SplitRepresentation) -> Tensor:
    if rep.d_ef == 0:
        return rep.z_ir
    return concat([rep.z_ir, rep.z_ef])


class CleverNet(Module):
    """Encoder plus the IR head and, when ``rho < 1``, the EF head."""

    def __init__(self, cfg: ModelConfig, rng: RngStream):
        super().__init__()
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype)
        gen = rng.generator()
        g = cfg.init_gain
        if cfg.encoder == "conv":
            enc = ConvTiny(cfg.in_channels, cfg.D, gen, dtype, gain=g)
        else:
            enc = MlpTiny(cfg.in_channels, cfg.resolution, cfg.D, gen, dtype, cfg.mlp_hidden, g)
        self.encoder = self.add_child("encoder", enc)
        self.head_ir = self.add_child("head_ir", ProjectionHead(cfg.d_ir, cfg.K, gen, dtype, cfg.hidden, g,
                                                                cfg.head_norm))
        self.head_ef = None
        if cfg.d_ef > 0:
            self.head_ef = self.add_child("head_ef", ProjectionHead(cfg.d_ef, cfg.K, gen, dtype, cfg.hidden, g,
                                                                    cfg.head_norm))

    def encode(self, images) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.cfg.dtype))
        return self.encoder(x)

    def encode_and_split(self, images) -> SplitRepresentation:
        return split(self.encode(images), self.cfg.rho)

    def head_params(self, which: str) -> dict[str, Tensor]:
        head = self.head_ir if which == "ir" else self.head_ef
        return {} if head is None else head.parameters()


def encode_and_split(net: CleverNet, images, rho: float | None = None) -> SplitRepresentation:
    z = net.encode(images)
    return split(z, net.cfg.rho if rho is None else rho)


def param_sq_norm(head: Module | None) -> Tensor:
    """Differentiable sum of squares over every weight and bias of ``head``."""
    if head is None:
        return Tensor(0.0)
    total = None
    for t in head.parameters().values():
        s = sq_norm(t)
        total = s if total is None else total + s
    return total


def mean_abs(arrays) -> float:
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    n = sum(a.size for a in arrays)
    if n == 0:
        return 0.0
    return float(sum(np.abs(a).sum() for a in arrays) / n)


class StudentTeacher:
    """Student network, its EMA teacher and the teacher-logit center."""

    def __init__(self, cfg: ModelConfig, rng: RngStream, ema_momentum: float = 0.996):
        self.cfg = cfg
        self.student = CleverNet(cfg, rng)
        self.teacher = copy.deepcopy(self.student)
        self.teacher.freeze()
        # fresh arrays so no storage is shared with the student
        for t in self.teacher.parameters().values():
            t.data = t.data.copy()
        self.ema_momentum = float(ema_momentum)
        self.center = np.zeros(cfg.K, dtype=np.dtype(cfg.dtype))

    def state(self) -> dict[str, np.ndarray]:
        out = {f"student.{k}": v for k, v in self.student.state().items()}
        out.update({f"teacher.{k}": v for k, v in self.teacher.state().items()})
        out["center"] = self.center
        return out

    def load_state(self, state: dict) -> None:
        self.student.load_state({k[8:]: v for k, v in state.items() if k.startswith("student.")})
        self.teacher.load_state({k[8:]: v for k, v in state.items() if k.startswith("teacher.")})
        self.center = np.asarray(state["center"]).astype(self.center.dtype, copy=True)


def ema_update(pair: StudentTeacher, m: float | None = None) -> StudentTeacher:
    """teacher <- m * teacher + (1 - m) * student, elementwise."""
    m = pair.ema_momentum if m is None else float(m)
    if not 0.0 <= m <= 1.0:
        raise ConfigError(f"EMA momentum must lie in [0, 1], got {m}")
    s_params = pair.student.parameters()
    for name, t in pair.teacher.parameters().items():
        s = s_params[name].data
        if m == 1.0:
            continue
        if m == 0.0:
            t.data = s.copy()
            continue
        old = t.data
        new = old + t.dtype.type(1.0 - m) * (s - old)
        # the exact result lies between old and s; undo any rounding overshoot
        t.data = np.clip(new, np.minimum(old, s), np.maximum(old, s))
    return pair


def center_update(pair: StudentTeacher, teacher_logits, m_c: float = 0.9) -> None:
    """center <- m_c * center + (1 - m_c) * batch mean of teacher IR logits."""
    if not 0.0 <= m_c < 1.0:
        raise ConfigError(f"center momentum must lie in [0, 1), got {m_c}")
    logits = [np.asarray(t.data if isinstance(t, Tensor) else t) for t in teacher_logits]
    batch_mean = np.concatenate(logits, axis=0).mean(axis=0)
    pair.center = (m_c * pair.center + (1 - m_c) * batch_mean).astype(pair.center.dtype)
