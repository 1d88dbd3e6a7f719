"""Dataset loading (IDX, binary PPM/PGM), synthetic shapes and the dataset cache."""
from __future__ import annotations

import hashlib
import math
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import container
from .errors import ConfigError, FormatError, InputError
from .rng import RngStream

SHAPES = ("circle", "square", "triangle", "cross", "ring", "star")
DATASET_MAGIC = b"CLVD"


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, C) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64, dense in [0, C)
    class_names: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)  # name -> (N, ...) array
    log: list = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise InputError(f"images must be (N, H, W, C), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise InputError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names) if self.class_names else int(self.labels.max()) + 1 if len(self) else 0

    @property
    def shape(self) -> tuple:
        return self.images.shape[1:]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        meta = {k: np.asarray(v)[idx] for k, v in self.metadata.items()}
        return Dataset(self.images[idx], self.labels[idx], list(self.class_names), meta, list(self.log))


# ---------------------------------------------------------------- IDX

IDX_IMAGES, IDX_LABELS = 2051, 2049


def _read_idx(path, expect_magic, ndim):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 + 4 * ndim:
        raise FormatError(f"{path}: file too short for an IDX header ({len(buf)} bytes)")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expect_magic:
        raise FormatError(f"{path}: bad IDX magic {magic}, expected {expect_magic}")
    dims = struct.unpack(f">{ndim}I", buf[4:4 + 4 * ndim])
    start = 4 + 4 * ndim
    expected = int(np.prod(dims, dtype=np.int64))
    actual = len(buf) - start
    if actual != expected:
        raise FormatError(f"{path}: IDX payload is {actual} bytes, expected {expected}")
    return np.frombuffer(buf, dtype=np.uint8, offset=start).reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Load an unsigned-byte IDX image file (N, rows, cols) and its label file."""
    pix = _read_idx(images_path, IDX_IMAGES, 3)
    lab = _read_idx(labels_path, IDX_LABELS, 1)
    if len(pix) != len(lab):
        raise FormatError(f"{images_path} has {len(pix)} images but {labels_path} has {len(lab)} labels")
    labels = lab.astype(np.int64)
    uniq = np.unique(labels)
    dense = np.searchsorted(uniq, labels)
    images = pix.astype(np.float64)[..., None] / 255.0
    return Dataset(images, dense, [str(u) for u in uniq], log=[f"idx: {len(labels)} images from {images_path}"])


# ---------------------------------------------------------------- PPM / PGM


def _ppm_tokens(buf, count, path):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte ends the header


def read_pnm(path) -> np.ndarray:
    """Decode a binary P6 (RGB) or P5 (gray) file to ``(H, W, C)`` floats in [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported PNM variant {magic!r} (only binary P5/P6)")
    try:
        (w, h, maxval), pos = _ppm_tokens(buf[2:], 3, path)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise FormatError(f"{path}: malformed header") from None
    if not 0 < maxval < 65536 or w <= 0 or h <= 0:
        raise FormatError(f"{path}: invalid header values {w}x{h} maxval {maxval}")
    c = 3 if magic == b"P6" else 1
    dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * c * dt.itemsize
    body = buf[2 + pos:]
    if len(body) < need:
        raise FormatError(f"{path}: pixel payload is {len(body)} bytes, expected {need}")
    arr = np.frombuffer(body[:need], dtype=dt).reshape(h, w, c).astype(np.float64)
    return np.clip(arr / maxval, 0.0, 1.0)


def load_ppm_dir(root, resolution: int | None = None) -> Dataset:
    """One subdirectory per class (lexicographic rank = class id) of P5/P6 files.

    Images whose size differs from ``resolution`` (or from the first image
    when ``resolution`` is None) are bilinearly resized; gray images are
    broadcast to RGB when the directory mixes both.
    """
    from .vision import resize

    classes = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    if not classes:
        raise InputError(f"{root}: no class subdirectories")
    raw, labels, log = [], [], []
    for cid, cname in enumerate(classes):
        cdir = os.path.join(root, cname)
        for fname in sorted(os.listdir(cdir)):
            if fname.startswith("."):
                continue
            raw.append((os.path.join(cdir, fname), read_pnm(os.path.join(cdir, fname))))
            labels.append(cid)
    if not raw:
        raise InputError(f"{root}: no image files")
    size = resolution or raw[0][1].shape[0]
    channels = max(img.shape[2] for _, img in raw)
    images = []
    for path, img in raw:
        if img.shape[:2] != (size, size):
            log.append(f"resized {path} from {img.shape[0]}x{img.shape[1]} to {size}x{size}")
            img = resize(img, size)
        if img.shape[2] < channels:
            img = np.repeat(img, channels, axis=2)
        images.append(img)
    return Dataset(np.stack(images), np.array(labels), classes, log=log)


# ---------------------------------------------------------------- synthetic shapes


@dataclass
class SynthSpec:
    classes: tuple = SHAPES
    samples_per_class: int = 100
    resolution: int = 64
    channels: int = 3
    orientation_range: tuple = (-30.0, 30.0)
    scale_range: tuple = (0.55, 0.85)
    offset_range: float = 0.08  # centre jitter, fraction of the image size
    palette: str = "random"  # "random" or "fixed"
    noise_amplitude: float = 0.1
    shading: float = 0.25  # top-to-bottom brightness gradient of the background
    supersample: int = 4
    seed: int = 0

    def validate(self):
        if self.resolution < 16:
            raise ConfigError(f"resolution must be >= 16, got {self.resolution}")
        unknown = [c for c in self.classes if c not in SHAPES]
        if unknown or not self.classes:
            raise ConfigError(f"unknown shape classes {unknown}; choose from {SHAPES}")
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be >= 1")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        if self.palette not in ("random", "fixed"):
            raise ConfigError(f"palette must be 'random' or 'fixed', got {self.palette!r}")


def _star(n=5, inner=0.45):
    ang = np.pi / 2 + np.arange(2 * n) * np.pi / n
    rad = np.where(np.arange(2 * n) % 2 == 0, 1.0, inner)
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)


_POLYGONS = {
    "square": np.array([[-0.75, -0.75], [0.75, -0.75], [0.75, 0.75], [-0.75, 0.75]]),
    "triangle": np.array([[0.0, 1.0], [-math.sqrt(3) / 2, -0.5], [math.sqrt(3) / 2, -0.5]]),
    "cross": np.array([[-0.3, 1], [0.3, 1], [0.3, 0.3], [1, 0.3], [1, -0.3], [0.3, -0.3], [0.3, -1],
                       [-0.3, -1], [-0.3, -0.3], [-1, -0.3], [-1, 0.3], [-0.3, 0.3]]),
    "star": _star(),
}


def _inside_polygon(x, y, poly):
    inside = np.zeros(x.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xi)
    return inside


def shape_mask(kind, x, y):
    """Membership of canonical-frame points (x right, y up) in a unit-size shape."""
    if kind == "circle":
        return x * x + y * y <= 0.85 ** 2
    if kind == "ring":
        r2 = x * x + y * y
        return (r2 <= 0.95 ** 2) & (r2 >= 0.55 ** 2)
    return _inside_polygon(x, y, _POLYGONS[kind])


def _value_noise(gen, res, cells=4):
    grid = gen.uniform(-1.0, 1.0, size=(cells + 1, cells + 1))
    t = np.linspace(0, cells, res)
    i = np.minimum(t.astype(int), cells - 1)
    f = t - i
    f = f * f * (3 - 2 * f)
    rows = grid[i] * (1 - f)[:, None] + grid[i + 1] * f[:, None]
    return rows[:, i] * (1 - f)[None, :] + rows[:, i + 1] * f[None, :]


_FIXED_COLORS = np.array([[0.9, 0.2, 0.2], [0.2, 0.8, 0.2], [0.2, 0.3, 0.9],
                          [0.9, 0.8, 0.1], [0.8, 0.2, 0.8], [0.1, 0.8, 0.8]])


def render_shape(kind, res, orientation, scale, offset, fg, bg, noise, supersample=4):
    """Anti-aliased render of one shape.  ``orientation`` is counter-clockwise degrees."""
    ss = supersample
    coords = (np.arange(res * ss) + 0.5) / ss  # pixel-space sample positions
    py, px = np.meshgrid(coords, coords, indexing="ij")
    half = res / 2.0
    u = (px - half - offset[1] * res) / (scale * half)
    v = -(py - half - offset[0] * res) / (scale * half)
    th = math.radians(orientation)
    c, s = math.cos(th), math.sin(th)
    # inverse rotation into the canonical frame
    xc = c * u + s * v
    yc = -s * u + c * v
    cover = shape_mask(kind, xc, yc).reshape(res, ss, res, ss).mean(axis=(1, 3))
    return bg * (1 - cover[..., None]) + fg[None, None, :] * cover[..., None]


def synth_shapes(spec: SynthSpec) -> Dataset:
    """Render ``samples_per_class`` images of every class in ``spec.classes``.

    Samples are interleaved by class; sample ``i`` draws from stream ``i``.
    Metadata records orientation, scale, offset and foreground color.
    """
    spec.validate()
    root = RngStream(spec.seed).child(0x5EED)
    n_cls = len(spec.classes)
    n = n_cls * spec.samples_per_class
    res = spec.resolution
    images = np.empty((n, res, res, spec.channels))
    labels = np.arange(n) % n_cls
    meta = {k: np.empty(n) for k in ("orientation", "scale")}
    meta["offset"] = np.empty((n, 2))
    meta["color"] = np.empty((n, 3))
    ramp = np.linspace(spec.shading / 2, -spec.shading / 2, res)[:, None, None]
    for i in range(n):
        gen = root.child(i).generator()
        kind = spec.classes[labels[i]]
        orient = gen.uniform(*spec.orientation_range)
        scale = gen.uniform(*spec.scale_range)
        offset = gen.uniform(-spec.offset_range, spec.offset_range, size=2)
        base = gen.uniform(0.25, 0.55, size=3)
        if spec.palette == "fixed":
            fg = _FIXED_COLORS[labels[i] % len(_FIXED_COLORS)].copy()
        else:
            fg = gen.uniform(0.0, 1.0, size=3)
            # keep the shape distinguishable from the background
            while np.abs(fg - base).max() < 0.3:
                fg = gen.uniform(0.0, 1.0, size=3)
        bg = base[None, None, :] + ramp + spec.noise_amplitude * _value_noise(gen, res)[..., None]
        img = np.clip(render_shape(kind, res, orient, scale, offset, fg, bg, gen, spec.supersample), 0.0, 1.0)
        if spec.channels == 1:
            img = (0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2])[..., None]
        images[i] = img
        meta["orientation"][i] = orient
        meta["scale"][i] = scale
        meta["offset"][i] = offset
        meta["color"][i] = fg
    return Dataset(images, labels, list(spec.classes), meta, [f"synth_shapes: {asdict(spec)}"])


# ---------------------------------------------------------------- splits & cache


def split_indices(n: int, seed: int, test_fraction: float = 0.2):
    """Train/test indices; membership of sample ``i`` depends only on ``(seed, i)``."""
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    u = np.empty(n)
    for i in range(n):
        h = hashlib.blake2b(struct.pack("<qq", seed, i), digest_size=8).digest()
        u[i] = int.from_bytes(h, "little") / 2.0 ** 64
    test = u < test_fraction
    return np.flatnonzero(~test), np.flatnonzero(test)


def train_test_split(ds: Dataset, seed: int, test_fraction: float = 0.2):
    tr, te = split_indices(len(ds), seed, test_fraction)
    return ds.subset(tr), ds.subset(te)


def save_dataset(ds: Dataset, path) -> None:
    tensors = {"images": ds.images, "labels": ds.labels}
    tensors.update({f"meta.{k}": np.asarray(v, dtype=np.float64) for k, v in ds.metadata.items()})
    header = {"class_names": list(ds.class_names), "log": list(ds.log)}
    container.save(path, container.Container(DATASET_MAGIC, header, tensors))


def load_dataset(path) -> Dataset:
    c = container.load(path, DATASET_MAGIC)
    meta = {k[5:]: v for k, v in c.tensors.items() if k.startswith("meta.")}
    return Dataset(c.tensors["images"], c.tensors["labels"], c.header.get("class_names", []), meta,
                   c.header.get("log", []))
