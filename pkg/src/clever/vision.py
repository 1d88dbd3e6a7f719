"""Image augmentations, the BAug/CAug/CAug+ view generators and the
evaluation perturbation suites.

Images are float64 ``(H, W, C)`` arrays with values in ``[0, 1]``.  Every
random transform is split into a *sampling* step, which draws parameters from
an :class:`~clever.rng.RngStream` and stores them in a :class:`TransformRecord`,
and a deterministic *apply* step.  Replaying a record therefore reproduces the
original output exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, InputError
from .rng import RngStream

STRATEGIES = ("BAug", "CAug", "CAug+")
SUITES = ("Orig", "CJ", "CJ+Flip", "CJ+Ro", "CJ+Ro+ET")


@dataclass
class TransformRecord:
    op: str
    params: dict
    stream_id: int = 0
    skipped: bool = False


@dataclass
class ViewBundle:
    global_views: list  # [(image, [TransformRecord, ...]), ...]
    local_views: list
    source_index: int = -1

    def all_views(self) -> list:
        return self.global_views + self.local_views


@dataclass
class AugConfig:
    """Desk-scale multi-crop recipe.  Counts and ranges are configurable."""

    n_local: int = 4
    global_scale: tuple = (0.4, 1.0)
    local_scale: tuple = (0.05, 0.4)
    local_fraction: float = 3 / 8
    jitter_p: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    blur_p: tuple = (0.5, 0.1)  # global view 1, global view 2
    blur_p_local: float = 0.5
    blur_sigma: tuple = (0.1, 2.0)
    solarize_p: float = 0.2  # global view 2 only
    rotation_range: tuple = (-90.0, 90.0)
    elastic_p: float = 0.5
    elastic_alpha: float = 100.0
    elastic_sigma: float = 5.0


def _clip(img):
    return np.clip(img, 0.0, 1.0)


def _check_image(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise InputError(f"expected (H, W, 1|3) image, got shape {img.shape}")
    return img


def resize(img, size: int):
    """Bilinear resample of the whole image to ``size x size``."""
    img = _check_image(img)
    H, W, _ = img.shape
    return _crop_resize(img, (0.0, 0.0, float(H), float(W)), size)


def _crop_resize(img, box, size):
    top, left, h, w = box
    i = np.arange(size, dtype=np.float64)
    sy = top + (i + 0.5) * (h / size) - 0.5
    sx = left + (i + 0.5) * (w / size) - 0.5
    # replicate-pad the crop edges so interpolation never reaches the zero fill
    H, W, _ = img.shape
    sy = np.clip(sy, 0.0, H - 1.0)
    sx = np.clip(sx, 0.0, W - 1.0)
    gy, gx = np.meshgrid(sy, sx, indexing="ij")
    return _clip(kernels.bilinear_sample(img, gy, gx))


# ---------------------------------------------------------------- crop


def sample_crop_box(shape, scale, gen, ratio=(3 / 4, 4 / 3), attempts=10):
    H, W = shape[:2]
    lo, hi = scale
    area = H * W
    for _ in range(attempts):
        target = area * gen.uniform(lo, hi)
        r = math.exp(gen.uniform(math.log(ratio[0]), math.log(ratio[1])))
        w = math.sqrt(target * r)
        h = math.sqrt(target / r)
        if w <= W and h <= H:
            top = gen.uniform(0, H - h)
            left = gen.uniform(0, W - w)
            return (top, left, h, w)
    # fall back to a centred box with the image's aspect ratio
    s = math.sqrt(hi)
    h, w = H * s, W * s
    return ((H - h) / 2, (W - w) / 2, h, w)


def random_resized_crop(img, scale, size: int, rng: RngStream):
    """Crop a random box whose area fraction lies in ``scale``; resample to ``size``."""
    img = _check_image(img)
    if img.shape[0] < 4 or img.shape[1] < 4:
        raise InputError(f"image {img.shape[:2]} smaller than 4x4")
    lo, hi = scale
    if not 0 < lo <= hi <= 1:
        raise ConfigError(f"crop scale range must lie in (0, 1], got {scale}")
    if size < 4:
        raise ConfigError(f"crop target size must be >= 4, got {size}")
    box = sample_crop_box(img.shape, scale, rng.generator())
    rec = TransformRecord("crop", {"box": box, "size": int(size)}, rng.stream_id)
    return apply_record(img, rec), rec


# ---------------------------------------------------------------- pixel ops


def horizontal_flip(img):
    return _check_image(img)[:, ::-1, :].copy()


def gray(img):
    if img.shape[2] == 1:
        return img[:, :, 0]
    return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]


def adjust_brightness(img, f):
    return _clip(img * f)


def adjust_contrast(img, f):
    m = gray(img).mean()
    return _clip(m + f * (img - m))


def adjust_saturation(img, f):
    hsv = kernels.rgb_to_hsv(img)
    hsv[..., 1] = np.clip(hsv[..., 1] * f, 0.0, 1.0)
    return _clip(kernels.hsv_to_rgb(hsv))


def adjust_hue(img, shift):
    hsv = kernels.rgb_to_hsv(img)
    hsv[..., 0] = np.mod(hsv[..., 0] + shift, 1.0)
    return _clip(kernels.hsv_to_rgb(hsv))


_JITTER_OPS = ("brightness", "contrast", "saturation", "hue")


def _apply_jitter(img, params):
    skipped = []
    for name in params["order"]:
        f = params[name]
        if name == "brightness":
            img = adjust_brightness(img, f)
        elif name == "contrast":
            img = adjust_contrast(img, f)
        elif img.shape[2] == 1:
            skipped.append(name)
        elif name == "saturation":
            img = adjust_saturation(img, f)
        else:
            img = adjust_hue(img, f)
    return img, skipped


def sample_jitter(gen, brightness=0.4, contrast=0.4, saturation=0.4, hue=0.1):
    params = {
        "brightness": float(gen.uniform(max(0.0, 1 - brightness), 1 + brightness)),
        "contrast": float(gen.uniform(max(0.0, 1 - contrast), 1 + contrast)),
        "saturation": float(gen.uniform(max(0.0, 1 - saturation), 1 + saturation)),
        "hue": float(gen.uniform(-hue, hue)),
    }
    params["order"] = [_JITTER_OPS[i] for i in gen.permutation(4)]
    return params


def color_jitter(img, f_b=None, f_c=None, f_s=None, f_h=None, rng: RngStream | None = None, cfg=None):
    """Brightness/contrast/saturation/hue jitter in an rng-chosen order.

    Explicit factors override sampled ones.  On single-channel images the
    saturation and hue sub-ops are skipped and listed in the record.
    """
    img = _check_image(img)
    cfg = cfg or AugConfig()
    gen = (rng or RngStream(0)).generator()
    params = sample_jitter(gen, cfg.brightness, cfg.contrast, cfg.saturation, cfg.hue)
    for key, val in (("brightness", f_b), ("contrast", f_c), ("saturation", f_s), ("hue", f_h)):
        if val is not None:
            params[key] = float(val)
    if not -0.5 <= params["hue"] <= 0.5:
        raise ConfigError(f"hue shift must lie in [-0.5, 0.5], got {params['hue']}")
    rec = TransformRecord("jitter", params, rng.stream_id if rng else 0)
    out, skipped = _apply_jitter(img, params)
    rec.params["skipped_subops"] = skipped
    return out, rec


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img, sigma=None, rng: RngStream | None = None, sigma_range=(0.1, 2.0)):
    img = _check_image(img)
    if sigma is None:
        sigma = float((rng or RngStream(0)).generator().uniform(*sigma_range))
    rec = TransformRecord("blur", {"sigma": float(sigma)}, rng.stream_id if rng else 0)
    return apply_record(img, rec), rec


def solarize(img, threshold: float = 0.5):
    img = _check_image(img)
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"solarize threshold must lie in [0, 1], got {threshold}")
    return np.where(img >= threshold, 1.0 - img, img)


# ---------------------------------------------------------------- geometry

_EXACT = {0: (1.0, 0.0), 90: (0.0, 1.0), 180: (-1.0, 0.0), 270: (0.0, -1.0)}


def _cos_sin(degrees):
    d = float(degrees) % 360.0
    if d.is_integer() and int(d) in _EXACT:
        return _EXACT[int(d)]
    t = math.radians(degrees)
    return math.cos(t), math.sin(t)


def rotation_grid(H, W, degrees):
    """Source coordinates for a counter-clockwise rotation about the centre."""
    c, s = _cos_sin(degrees)
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64) - cy, np.arange(W, dtype=np.float64) - cx, indexing="ij")
    sx = cx + c * xx - s * yy
    sy = cy + s * xx + c * yy
    return sy, sx


def rotate(img, degrees=None, rng: RngStream | None = None, degree_range=(-90.0, 90.0)):
    """Rotate by ``degrees`` (sampled from ``degree_range`` when omitted).

    Bilinear sampling, zero fill outside the source, output size unchanged.
    """
    img = _check_image(img)
    if degrees is None:
        degrees = float((rng or RngStream(0)).generator().uniform(*degree_range))
    rec = TransformRecord("rotate", {"degrees": float(degrees)}, rng.stream_id if rng else 0)
    return apply_record(img, rec), rec


def elastic_field(shape, alpha, sigma, gen):
    H, W = shape[:2]
    noise = gen.uniform(-1.0, 1.0, size=(H, W, 2))
    smooth = kernels.blur_separable(noise, gaussian_kernel(sigma))
    scale = alpha / max(H, W)
    # normalised units span 2 across the image
    dy = smooth[..., 0] * scale * H / 2.0
    dx = smooth[..., 1] * scale * W / 2.0
    return dy, dx


def elastic_transform(img, alpha=100.0, rng: RngStream | None = None, sigma=5.0, field=None):
    """Warp by a smoothed random displacement field (or an explicit ``field``)."""
    img = _check_image(img)
    if alpha < 0:
        raise ConfigError(f"elastic alpha must be >= 0, got {alpha}")
    if field is None:
        field = elastic_field(img.shape, alpha, sigma, (rng or RngStream(0)).generator())
    rec = TransformRecord("elastic", {"alpha": float(alpha), "sigma": float(sigma), "field": field},
                          rng.stream_id if rng else 0)
    return apply_record(img, rec), rec


def _warp(img, dy, dx):
    H, W, _ = img.shape
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    return _clip(kernels.bilinear_sample(img, yy + dy, xx + dx, 0.0))


# ---------------------------------------------------------------- replay


def apply_record(img, rec: TransformRecord):
    """Deterministically apply one recorded transform."""
    img = _check_image(img)
    if rec.skipped:
        return img
    p = rec.params
    if rec.op == "crop":
        return _crop_resize(img, p["box"], p["size"])
    if rec.op == "flip":
        return horizontal_flip(img)
    if rec.op == "jitter":
        return _apply_jitter(img, p)[0]
    if rec.op == "blur":
        return _clip(kernels.blur_separable(img, gaussian_kernel(p["sigma"])))
    if rec.op == "solarize":
        return solarize(img, p["threshold"])
    if rec.op == "rotate":
        if p["degrees"] == 0:
            return img.copy()
        sy, sx = rotation_grid(img.shape[0], img.shape[1], p["degrees"])
        return _clip(kernels.bilinear_sample(img, sy, sx, 0.0))
    if rec.op == "elastic":
        if p["alpha"] == 0:
            return img.copy()
        dy, dx = p["field"]
        return _warp(img, dy, dx)
    raise ConfigError(f"unknown transform {rec.op!r}")


def replay(img, records):
    for rec in records:
        img = apply_record(img, rec)
    return img


# ---------------------------------------------------------------- strategies


def _maybe(gen, p):
    return bool(gen.uniform() < p)


def _view(img, rng: RngStream, *, size, scale, blur_p, solarize_p, rotate_first, elastic_first, cfg):
    gen = rng.generator()
    records = []

    def push(rec):
        nonlocal img
        records.append(rec)
        img = apply_record(img, rec)

    sid = rng.stream_id
    if rotate_first:
        push(TransformRecord("rotate", {"degrees": float(gen.uniform(*cfg.rotation_range))}, sid))
    if elastic_first:
        apply_it = _maybe(gen, cfg.elastic_p)
        field = elastic_field(img.shape, cfg.elastic_alpha, cfg.elastic_sigma, gen) if apply_it else None
        push(TransformRecord("elastic", {"alpha": cfg.elastic_alpha, "sigma": cfg.elastic_sigma, "field": field},
                             sid, skipped=not apply_it))
    push(TransformRecord("crop", {"box": sample_crop_box(img.shape, scale, gen), "size": int(size)}, sid))
    push(TransformRecord("flip", {}, sid, skipped=not _maybe(gen, 0.5)))
    apply_jitter = _maybe(gen, cfg.jitter_p)
    params = sample_jitter(gen, cfg.brightness, cfg.contrast, cfg.saturation, cfg.hue)
    if img.shape[2] == 1:
        params["skipped_subops"] = ["saturation", "hue"]
    push(TransformRecord("jitter", params, sid, skipped=not apply_jitter))
    apply_blur = _maybe(gen, blur_p)
    push(TransformRecord("blur", {"sigma": float(gen.uniform(*cfg.blur_sigma))}, sid, skipped=not apply_blur))
    if solarize_p > 0:
        push(TransformRecord("solarize", {"threshold": 0.5}, sid, skipped=not _maybe(gen, solarize_p)))
    return img, records


def compose_strategy(name: str, img, rng: RngStream, cfg: AugConfig | None = None, source_index: int = -1) -> ViewBundle:
    """Generate two global and ``cfg.n_local`` local views of ``img``.

    BAug is the multi-crop baseline; CAug rotates the full image before each
    view's pipeline; CAug+ additionally applies an elastic warp with
    probability ``cfg.elastic_p``.  Each view draws from its own sub-stream.
    """
    if name not in STRATEGIES:
        raise ConfigError(f"unknown augmentation strategy {name!r}; expected one of {STRATEGIES}")
    cfg = cfg or AugConfig()
    img = _check_image(img)
    H = img.shape[0]
    rot = name in ("CAug", "CAug+")
    ela = name == "CAug+"
    local_size = max(4, int(round(H * cfg.local_fraction)))
    globals_ = []
    for v in range(2):
        globals_.append(_view(img, rng.child(v), size=H, scale=cfg.global_scale, blur_p=cfg.blur_p[v],
                              solarize_p=cfg.solarize_p if v == 1 else 0.0,
                              rotate_first=rot, elastic_first=ela, cfg=cfg))
    locals_ = []
    for v in range(cfg.n_local):
        locals_.append(_view(img, rng.child(2 + v), size=local_size, scale=cfg.local_scale,
                             blur_p=cfg.blur_p_local, solarize_p=0.0,
                             rotate_first=rot, elastic_first=ela, cfg=cfg))
    return ViewBundle(globals_, locals_, source_index)


# ---------------------------------------------------------------- evaluation suites


def perturbation_suite(name: str, img, rng: RngStream, cfg: AugConfig | None = None):
    """Apply a named test-time perturbation.  Returns ``(image, records)``."""
    if name not in SUITES:
        raise ConfigError(f"unknown perturbation suite {name!r}; expected one of {SUITES}")
    cfg = cfg or AugConfig()
    img = _check_image(img)
    if name == "Orig":
        return img.copy(), []
    gen = rng.generator()
    records = [TransformRecord("jitter", sample_jitter(gen, cfg.brightness, cfg.contrast, cfg.saturation, cfg.hue),
                               rng.stream_id)]
    if name == "CJ+Flip":
        records.append(TransformRecord("flip", {}, rng.stream_id))
    if name in ("CJ+Ro", "CJ+Ro+ET"):
        records.append(TransformRecord("rotate", {"degrees": float(gen.uniform(*cfg.rotation_range))}, rng.stream_id))
    if name == "CJ+Ro+ET":
        field = elastic_field(img.shape, cfg.elastic_alpha, cfg.elastic_sigma, gen)
        records.append(TransformRecord("elastic", {"alpha": cfg.elastic_alpha, "sigma": cfg.elastic_sigma,
                                                   "field": field}, rng.stream_id))
    return replay(img, records), records
