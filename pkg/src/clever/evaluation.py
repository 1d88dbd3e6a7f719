"""Frozen-encoder evaluation: linear probes, perturbation suites and
equivariance diagnostics.

Every routine reads the network without modifying it.  Randomness (probe
shuffling, perturbation draws) comes from :class:`RngStream` children keyed
by the evaluation seed and the sample index, so results do not depend on
batch sizes or worker counts.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .model import CleverNet
from .rng import RngStream
from .tensor import no_record
from .vision import SUITES, AugConfig, color_jitter, elastic_transform, perturbation_suite, rotate

SOURCES = ("ir", "ef", "joint")
FAMILIES = ("rotation", "elastic", "jitter", "identity")
DEFAULT_BINS = {"rotation": 8, "elastic": 2, "jitter": 4, "identity": 2}
ROTATION_RANGES = {"Orig": 0.0, "Ro(90)": 90.0, "Ro(180)": 180.0}

# stream keys
_K_SHUFFLE, _K_SUITE, _K_DIAG, _K_ROT4, _K_ROTINV = 11, 12, 13, 14, 15


@dataclass
class ProbeConfig:
    source: str = "joint"
    epochs: int = 50
    lr: float = 0.002
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("probe epochs and batch_size must be >= 1")
        if self.lr <= 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("probe lr must be > 0, momentum in [0, 1), weight_decay >= 0")


@dataclass
class LinearProbe:
    W: np.ndarray
    b: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    def logits(self, feats):
        return ((feats - self.mean) / self.scale) @ self.W + self.b

    def predict(self, feats):
        return self.logits(feats).argmax(axis=1)

    def accuracy(self, feats, labels) -> float:
        labels = np.asarray(labels)
        if len(labels) == 0:
            raise InputError("accuracy of an empty evaluation set")
        return float(np.mean(self.predict(feats) == labels))


@dataclass
class RobustnessReport:
    columns: tuple = SUITES
    rows: list = field(default_factory=list)  # (label, {suite: accuracy})

    def add(self, label, cells: dict):
        self.rows.append((label, dict(cells)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", *self.columns])
        for label, cells in self.rows:
            w.writerow([label, *(repr(float(cells[c])) for c in self.columns)])
        return buf.getvalue()


@dataclass
class EquivarianceDiagnostics:
    family: str
    bins: int
    residual_ir: float
    residual_ef: float
    predictability_ir: float
    predictability_ef: float

    @property
    def chance(self) -> float:
        return 1.0 / self.bins


# ------------------------------------------------------------------ features


def _check_source(net: CleverNet, source: str):
    if source not in SOURCES:
        raise ConfigError(f"source must be one of {SOURCES}, got {source!r}")
    if source == "ef" and net.cfg.d_ef == 0:
        raise ConfigError("EF-only features requested but rho = 1 leaves the EF branch empty")


def extract_features(net: CleverNet, images, source: str = "joint", batch: int = 256) -> np.ndarray:
    """Frozen encoder features as float64, ``(N, width)``."""
    _check_source(net, source)
    images = np.asarray(images)
    d_ir = net.cfg.d_ir
    out = []
    with no_record():
        for i in range(0, len(images), batch):
            z = net.encode(images[i:i + batch].astype(net.cfg.dtype)).data.astype(np.float64)
            out.append(z)
    z = np.concatenate(out) if out else np.zeros((0, net.cfg.D))
    if source == "ir":
        return z[:, :d_ir]
    if source == "ef":
        return z[:, d_ir:]
    return z


def train_probe(feats, labels, n_classes: int, cfg: ProbeConfig | None = None) -> LinearProbe:
    """Softmax regression by SGD with momentum on standardized features."""
    cfg = cfg or ProbeConfig()
    X = np.asarray(feats, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(X) != len(y) or len(X) == 0:
        raise InputError(f"probe needs matching non-empty features and labels, got {len(X)} / {len(y)}")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Xs = (X - mean) / scale
    n, d = Xs.shape
    W = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    vW, vb = np.zeros_like(W), np.zeros_like(b)
    onehot = np.eye(n_classes)[y]
    root = RngStream(cfg.seed).child(_K_SHUFFLE)
    for epoch in range(cfg.epochs):
        order = root.child(epoch).generator().permutation(n)
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            logits = Xs[idx] @ W + b
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            g = (p - onehot[idx]) / len(idx)
            gW = Xs[idx].T @ g + cfg.weight_decay * W
            gb = g.sum(axis=0)
            vW = cfg.momentum * vW + gW
            vb = cfg.momentum * vb + gb
            W = W - cfg.lr * vW
            b = b - cfg.lr * vb
    return LinearProbe(W, b, mean, scale)


def _n_classes(*label_sets) -> int:
    return int(max(int(np.max(l)) for l in label_sets if len(l)) + 1)


def linear_probe(net: CleverNet, train_images, train_labels, test_images, test_labels,
                 cfg: ProbeConfig | None = None):
    """Held-out top-1 of a linear layer on frozen features.  Returns ``(accuracy, probe)``."""
    cfg = cfg or ProbeConfig()
    _check_source(net, cfg.source)
    f_tr = extract_features(net, train_images, cfg.source)
    f_te = extract_features(net, test_images, cfg.source)
    probe = train_probe(f_tr, train_labels, _n_classes(train_labels, test_labels), cfg)
    return probe.accuracy(f_te, test_labels), probe


# ------------------------------------------------------------------ robustness


def perturb_images(images, suite: str, seed: int, cfg: AugConfig | None = None) -> np.ndarray:
    """Apply ``suite`` to every image; sample i uses its own stream."""
    if suite not in SUITES:
        raise ConfigError(f"unknown perturbation suite {suite!r}; expected one of {SUITES}")
    if suite == "Orig":
        return np.asarray(images)
    root = RngStream(seed).child(_K_SUITE, SUITES.index(suite))
    return np.stack([perturbation_suite(suite, img, root.child(i), cfg)[0] for i, img in enumerate(images)])


def robustness_eval(net: CleverNet, train_images, train_labels, test_images, test_labels,
                    suites=SUITES, cfg: ProbeConfig | None = None, label: str | None = None,
                    seed: int = 0, report: RobustnessReport | None = None) -> RobustnessReport:
    """Train one probe on clean features, then score it on each perturbed test set."""
    cfg = cfg or ProbeConfig()
    for s in suites:
        if s not in SUITES:
            raise ConfigError(f"unknown perturbation suite {s!r}; expected one of {SUITES}")
    _, probe = linear_probe(net, train_images, train_labels, test_images, test_labels, cfg)
    cells = {}
    for s in suites:
        feats = extract_features(net, perturb_images(test_images, s, seed), cfg.source)
        cells[s] = probe.accuracy(feats, test_labels)
    report = report or RobustnessReport(columns=tuple(suites))
    report.add(label or cfg.source, cells)
    return report


# ------------------------------------------------------------------ equivariance


def transform_bins(family: str, bins: int, image, bin_index: int, rng: RngStream, cfg: AugConfig | None = None):
    """Apply a member of ``family`` falling in bin ``bin_index``."""
    cfg = cfg or AugConfig()
    gen = rng.generator()
    if family == "identity":
        return np.asarray(image)
    if family == "rotation":
        width = 360.0 / bins
        deg = -180.0 + width * (bin_index + gen.uniform())
        return rotate(image, deg)[0]
    if family == "elastic":
        if bin_index == 0:
            return np.asarray(image)
        return elastic_transform(image, cfg.elastic_alpha, rng.child(1), sigma=cfg.elastic_sigma)[0]
    if family == "jitter":
        lo, hi = 1 - cfg.brightness, 1 + cfg.brightness
        width = (hi - lo) / bins
        f_b = lo + width * (bin_index + gen.uniform())
        return color_jitter(image, f_b, 1.0, 1.0, 0.0, rng=rng.child(1), cfg=cfg)[0]
    raise ConfigError(f"unknown transform family {family!r}; expected one of {FAMILIES}")


def _residual(a, b) -> float:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ok = (na > 1e-12) & (nb > 1e-12)
    cos = np.ones(len(a))
    cos[ok] = np.einsum("ij,ij->i", a[ok], b[ok]) / (na[ok] * nb[ok])
    return float(np.mean(1.0 - np.clip(cos, -1.0, 1.0))) if len(a) else 0.0


def equivariance_diagnostics(net: CleverNet, images, family: str = "rotation", bins: int | None = None,
                             seed: int = 0, cfg: ProbeConfig | None = None,
                             test_fraction: float = 0.2) -> EquivarianceDiagnostics:
    """Invariance residual and transform-bin predictability per branch.

    Sample i is assigned bin ``i % bins``.  The bin probe sees the feature
    displacement ``z(t x) - z(x)`` of one branch; a branch that ignores the
    transform therefore sits at chance.
    """
    if family not in FAMILIES:
        raise ConfigError(f"unknown transform family {family!r}; expected one of {FAMILIES}")
    bins = DEFAULT_BINS[family] if bins is None else int(bins)
    if bins < 2:
        raise ConfigError(f"equivariance diagnostics need at least 2 bins, got {bins}")
    if net.cfg.d_ef == 0:
        raise ConfigError("equivariance diagnostics compare branches; rho = 1 has no EF branch")
    images = np.asarray(images)
    n = len(images)
    labels = np.arange(n) % bins
    root = RngStream(seed).child(_K_DIAG, FAMILIES.index(family))
    moved = np.stack([transform_bins(family, bins, img, int(labels[i]), root.child(i))
                      for i, img in enumerate(images)])
    z0 = extract_features(net, images, "joint")
    z1 = extract_features(net, moved, "joint")
    d = net.cfg.d_ir
    cut = int(round(n * (1 - test_fraction)))
    base = cfg or ProbeConfig()
    out = {}
    for name, sl in (("ir", slice(0, d)), ("ef", slice(d, None))):
        a, b = z0[:, sl], z1[:, sl]
        out[f"residual_{name}"] = _residual(a, b)
        delta = b - a
        probe = train_probe(delta[:cut], labels[:cut], bins,
                            ProbeConfig("joint", base.epochs, base.lr, base.momentum, base.weight_decay,
                                        base.batch_size, base.seed))
        out[f"predictability_{name}"] = probe.accuracy(delta[cut:], labels[cut:])
    return EquivarianceDiagnostics(family, bins, **out)


# ------------------------------------------------------------------ rotation tasks


def _rot4(images, seed):
    root = RngStream(seed).child(_K_ROT4)
    ks = np.array([int(root.child(i).generator().integers(4)) for i in range(len(images))], dtype=np.int64)
    out = np.stack([np.rot90(img, k, axes=(0, 1)) for img, k in zip(images, ks)]) if len(images) else images
    return np.ascontiguousarray(out), ks


def rotation_sensitivity_task(net: CleverNet, train_images, test_images, cfg: ProbeConfig | None = None,
                              seed: int = 0) -> float:
    """Four-way rotation prediction (0, 90, 180, 270 degrees) from frozen features."""
    cfg = cfg or ProbeConfig()
    x_tr, y_tr = _rot4(train_images, seed)
    x_te, y_te = _rot4(test_images, seed + 1)
    acc, _ = linear_probe(net, x_tr, y_tr, x_te, y_te, cfg)
    return acc


def rotational_invariance_eval(net: CleverNet, train_images, train_labels, test_images, test_labels,
                               cfg: ProbeConfig | None = None, seed: int = 0) -> dict:
    """Clean-trained probe scored on test sets rotated uniformly within +-90 and +-180 degrees."""
    cfg = cfg or ProbeConfig()
    _, probe = linear_probe(net, train_images, train_labels, test_images, test_labels, cfg)
    out = {}
    for j, (name, span) in enumerate(ROTATION_RANGES.items()):
        if span == 0:
            moved = np.asarray(test_images)
        else:
            root = RngStream(seed).child(_K_ROTINV, j)
            moved = np.stack([rotate(img, rng=root.child(i), degree_range=(-span, span))[0]
                              for i, img in enumerate(test_images)])
        out[name] = probe.accuracy(extract_features(net, moved, cfg.source), test_labels)
    return out


def chance_band(n: int, p: float, z: float = 3.0) -> tuple[float, float]:
    """Binomial acceptance band for an accuracy of ``n`` trials at chance ``p``."""
    half = z * math.sqrt(p * (1 - p) / n)
    return p - half, p + half
