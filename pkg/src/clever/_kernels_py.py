"""Pure-numpy implementations of the hot kernels.

These are the reference semantics; ``_kernels_cy`` must agree with them to
floating-point rounding.  All image kernels take float64 ``(H, W, C)`` arrays.
"""
from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def bilinear_sample(img, sy, sx, fill=0.0):
    """Sample ``img`` at fractional source coordinates ``(sy, sx)``.

    Pixel centres sit at integer coordinates.  Neighbours outside the image
    contribute ``fill``.  Returns an array of shape ``sy.shape + (C,)``.
    """
    img = np.asarray(img, dtype=np.float64)
    H, W, C = img.shape
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = sy - y0
    fx = sx - x0
    out = np.zeros(sy.shape + (C,), dtype=np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yy = y0 + dy
            xx = x0 + dx
            ok = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
            vals = np.full(sy.shape + (C,), fill, dtype=np.float64)
            vals[ok] = img[yy[ok], xx[ok]]
            out += (wy * wx)[..., None] * vals
    return out


def bilinear_sample_adjoint(grad_out, sy, sx, H, W):
    """Transpose of :func:`bilinear_sample` w.r.t. the image (fill is constant)."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    C = grad_out.shape[-1]
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = sy - y0
    fx = sx - x0
    grad_img = np.zeros((H, W, C), dtype=np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yy = y0 + dy
            xx = x0 + dx
            ok = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
            np.add.at(grad_img, (yy[ok], xx[ok]), (wy * wx)[ok][:, None] * grad_out[ok])
    return grad_img


def _reflect_index(idx, n):
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def blur_separable(img, kernel):
    """Convolve rows then columns with a symmetric 1-D kernel, reflect padding."""
    img = np.asarray(img, dtype=np.float64)
    H, W, _ = img.shape
    r = (len(kernel) - 1) // 2
    offsets = np.arange(-r, r + 1)
    cols = _reflect_index(np.arange(W)[:, None] + offsets[None, :], W)
    tmp = np.einsum("hwkc,k->hwc", img[:, cols, :], kernel)
    rows = _reflect_index(np.arange(H)[:, None] + offsets[None, :], H)
    return np.einsum("hkwc,k->hwc", tmp[rows, :, :], kernel)


def rgb_to_hsv(img):
    img = np.asarray(img, dtype=np.float64)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    maxc = img.max(axis=-1)
    minc = img.min(axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, np.mod(h / 6.0, 1.0), 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv):
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = np.mod(h, 1.0) * 6.0
    i = np.floor(h6)
    f = h6 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def im2col_3x3(x, stride):
    """``(N, H, W, C)`` -> ``(N, Ho, Wo, 3, 3, C)`` patches, zero padding 1."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    return np.ascontiguousarray(win[:, ::stride, ::stride].transpose(0, 1, 2, 4, 5, 3))


def col2im_3x3(dcols, H, W, stride):
    """Scatter-add ``(N, Ho, Wo, 3, 3, C)`` patch gradients into ``(N, H, W, C)``."""
    N, Ho, Wo = dcols.shape[:3]
    C = dcols.shape[5]
    out = np.zeros((N, H + 2, W + 2, C), dtype=dcols.dtype)
    for i in range(3):
        for j in range(3):
            out[:, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride, :] += dcols[:, :, :, i, j, :]
    return out[:, 1:H + 1, 1:W + 1, :]
