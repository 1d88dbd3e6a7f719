# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fmod

cnp.import_array()

BACKEND = "cython"

ctypedef fused real:
    float
    double


def bilinear_sample(img, sy, sx, double fill=0.0):
    cdef double[:, :, ::1] src = np.ascontiguousarray(img, dtype=np.float64)
    oshape = np.shape(sy)
    cdef double[::1] ys = np.ascontiguousarray(sy, dtype=np.float64).ravel()
    cdef double[::1] xs = np.ascontiguousarray(sx, dtype=np.float64).ravel()
    cdef Py_ssize_t H = src.shape[0], W = src.shape[1], C = src.shape[2]
    cdef Py_ssize_t n = ys.shape[0]
    out_arr = np.empty((n, C), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t k, c, y0, x0, yy, xx, dy, dx
    cdef double fy, fx, wy, wx, w, v
    with nogil:
        for k in range(n):
            y0 = <Py_ssize_t>floor(ys[k])
            x0 = <Py_ssize_t>floor(xs[k])
            fy = ys[k] - y0
            fx = xs[k] - x0
            for c in range(C):
                out[k, c] = 0.0
            for dy in range(2):
                wy = fy if dy else 1.0 - fy
                yy = y0 + dy
                for dx in range(2):
                    wx = fx if dx else 1.0 - fx
                    xx = x0 + dx
                    w = wy * wx
                    if yy >= 0 and yy < H and xx >= 0 and xx < W:
                        for c in range(C):
                            out[k, c] += w * src[yy, xx, c]
                    else:
                        for c in range(C):
                            out[k, c] += w * fill
    return out_arr.reshape(tuple(oshape) + (C,))


def bilinear_sample_adjoint(grad_out, sy, sx, Py_ssize_t H, Py_ssize_t W):
    grad_out = np.asarray(grad_out)
    cdef Py_ssize_t C = grad_out.shape[grad_out.ndim - 1]
    cdef double[:, ::1] g = np.ascontiguousarray(grad_out, dtype=np.float64).reshape(-1, C)
    cdef double[::1] ys = np.ascontiguousarray(sy, dtype=np.float64).ravel()
    cdef double[::1] xs = np.ascontiguousarray(sx, dtype=np.float64).ravel()
    res = np.zeros((H, W, C), dtype=np.float64)
    cdef double[:, :, ::1] acc = res
    cdef Py_ssize_t n = ys.shape[0]
    cdef Py_ssize_t k, c, y0, x0, yy, xx, dy, dx
    cdef double fy, fx, wy, wx, w
    with nogil:
        for k in range(n):
            y0 = <Py_ssize_t>floor(ys[k])
            x0 = <Py_ssize_t>floor(xs[k])
            fy = ys[k] - y0
            fx = xs[k] - x0
            for dy in range(2):
                wy = fy if dy else 1.0 - fy
                yy = y0 + dy
                for dx in range(2):
                    wx = fx if dx else 1.0 - fx
                    xx = x0 + dx
                    if yy >= 0 and yy < H and xx >= 0 and xx < W:
                        w = wy * wx
                        for c in range(C):
                            acc[yy, xx, c] += w * g[k, c]
    return res


cdef inline Py_ssize_t _reflect(Py_ssize_t i, Py_ssize_t n) nogil:
    cdef Py_ssize_t period
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = i % period
    if i < 0:
        i += period
    if i >= n:
        i = period - i
    return i


def blur_separable(img, kernel):
    cdef double[:, :, ::1] src = np.ascontiguousarray(img, dtype=np.float64)
    cdef double[::1] k = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef Py_ssize_t H = src.shape[0], W = src.shape[1], C = src.shape[2]
    cdef Py_ssize_t r = (k.shape[0] - 1) // 2
    tmp_arr = np.empty((H, W, C), dtype=np.float64)
    out_arr = np.empty((H, W, C), dtype=np.float64)
    cdef double[:, :, ::1] tmp = tmp_arr
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t y, x, c, t, j
    cdef double acc
    with nogil:
        for y in range(H):
            for x in range(W):
                for c in range(C):
                    acc = 0.0
                    for t in range(-r, r + 1):
                        j = _reflect(x + t, W)
                        acc = acc + src[y, j, c] * k[t + r]
                    tmp[y, x, c] = acc
        for y in range(H):
            for x in range(W):
                for c in range(C):
                    acc = 0.0
                    for t in range(-r, r + 1):
                        j = _reflect(y + t, H)
                        acc = acc + tmp[j, x, c] * k[t + r]
                    out[y, x, c] = acc
    return out_arr


def rgb_to_hsv(img):
    cdef double[:, :, ::1] src = np.ascontiguousarray(img, dtype=np.float64)
    cdef Py_ssize_t H = src.shape[0], W = src.shape[1]
    out_arr = np.empty((H, W, 3), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t y, x
    cdef double r, g, b, maxc, minc, delta, h, s, rc, gc, bc
    with nogil:
        for y in range(H):
            for x in range(W):
                r = src[y, x, 0]
                g = src[y, x, 1]
                b = src[y, x, 2]
                maxc = r
                if g > maxc:
                    maxc = g
                if b > maxc:
                    maxc = b
                minc = r
                if g < minc:
                    minc = g
                if b < minc:
                    minc = b
                delta = maxc - minc
                s = delta / maxc if maxc > 0 else 0.0
                h = 0.0
                if delta > 0:
                    rc = (maxc - r) / delta
                    gc = (maxc - g) / delta
                    bc = (maxc - b) / delta
                    if r == maxc:
                        h = bc - gc
                    elif g == maxc:
                        h = 2.0 + rc - bc
                    else:
                        h = 4.0 + gc - rc
                    h = fmod(h / 6.0, 1.0)
                    if h < 0:
                        h += 1.0
                out[y, x, 0] = h
                out[y, x, 1] = s
                out[y, x, 2] = maxc
    return out_arr


def hsv_to_rgb(hsv):
    cdef double[:, :, ::1] src = np.ascontiguousarray(hsv, dtype=np.float64)
    cdef Py_ssize_t H = src.shape[0], W = src.shape[1]
    out_arr = np.empty((H, W, 3), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t y, x, i
    cdef double h, s, v, h6, f, p, q, t, fi
    with nogil:
        for y in range(H):
            for x in range(W):
                h = fmod(src[y, x, 0], 1.0)
                if h < 0:
                    h += 1.0
                s = src[y, x, 1]
                v = src[y, x, 2]
                h6 = h * 6.0
                fi = floor(h6)
                f = h6 - fi
                i = (<Py_ssize_t>fi) % 6
                p = v * (1.0 - s)
                q = v * (1.0 - s * f)
                t = v * (1.0 - s * (1.0 - f))
                if i == 0:
                    out[y, x, 0] = v; out[y, x, 1] = t; out[y, x, 2] = p
                elif i == 1:
                    out[y, x, 0] = q; out[y, x, 1] = v; out[y, x, 2] = p
                elif i == 2:
                    out[y, x, 0] = p; out[y, x, 1] = v; out[y, x, 2] = t
                elif i == 3:
                    out[y, x, 0] = p; out[y, x, 1] = q; out[y, x, 2] = v
                elif i == 4:
                    out[y, x, 0] = t; out[y, x, 1] = p; out[y, x, 2] = v
                else:
                    out[y, x, 0] = v; out[y, x, 1] = p; out[y, x, 2] = q
    return out_arr


def _im2col(real[:, :, :, ::1] x, real[:, :, :, :, :, ::1] out, Py_ssize_t stride):
    cdef Py_ssize_t N = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t Ho = out.shape[1], Wo = out.shape[2]
    cdef Py_ssize_t n, oy, ox, c, i, j, y, xx
    with nogil:
        for n in range(N):
            for oy in range(Ho):
                for ox in range(Wo):
                    for i in range(3):
                        y = oy * stride + i - 1
                        for j in range(3):
                            xx = ox * stride + j - 1
                            if y >= 0 and y < H and xx >= 0 and xx < W:
                                for c in range(C):
                                    out[n, oy, ox, i, j, c] = x[n, y, xx, c]
                            else:
                                for c in range(C):
                                    out[n, oy, ox, i, j, c] = 0


def im2col_3x3(x, Py_ssize_t stride):
    x = np.ascontiguousarray(x)
    N, H, W, C = x.shape
    out = np.empty((N, (H - 1) // stride + 1, (W - 1) // stride + 1, 3, 3, C), dtype=x.dtype)
    _im2col(x, out, stride)
    return out


def _col2im(real[:, :, :, :, :, ::1] d, real[:, :, :, ::1] out, Py_ssize_t stride):
    cdef Py_ssize_t N = d.shape[0], Ho = d.shape[1], Wo = d.shape[2], C = d.shape[5]
    cdef Py_ssize_t n, oy, ox, c, i, j, y, x
    with nogil:
        for n in range(N):
            for oy in range(Ho):
                for ox in range(Wo):
                    for i in range(3):
                        y = oy * stride + i
                        for j in range(3):
                            x = ox * stride + j
                            for c in range(C):
                                out[n, y, x, c] += d[n, oy, ox, i, j, c]


def col2im_3x3(dcols, Py_ssize_t H, Py_ssize_t W, Py_ssize_t stride):
    dcols = np.ascontiguousarray(dcols)
    N, C = dcols.shape[0], dcols.shape[5]
    out = np.zeros((N, H + 2, W + 2, C), dtype=dcols.dtype)
    _col2im(dcols, out, stride)
    return out[:, 1:H + 1, 1:W + 1, :]
