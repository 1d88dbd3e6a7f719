"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--size S]

Prints one line per kernel: best-of-N milliseconds for each backend and the speed-up.
"""
import argparse
import timeit

import numpy as np

from clever import _kernels_py as ref
from clever.vision import gaussian_kernel

try:
    from clever import _kernels_cy as cy
except ImportError:  # extension not built
    cy = None


def cases(size):
    gen = np.random.default_rng(0)
    img = gen.random((size, size, 3))
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij")
    sy, sx = yy + gen.uniform(-1.5, 1.5, yy.shape), xx + gen.uniform(-1.5, 1.5, xx.shape)
    grad = gen.normal(size=(size, size, 3))
    kernel = gaussian_kernel(1.5)
    batch = gen.normal(size=(32, size // 2, size // 2, 16)).astype(np.float32)
    cols = ref.im2col_3x3(batch, 1)
    return {
        "bilinear_sample": lambda k: k.bilinear_sample(img, sy, sx, 0.0),
        "bilinear_sample_adjoint": lambda k: k.bilinear_sample_adjoint(grad, sy, sx, size, size),
        "blur_separable": lambda k: k.blur_separable(img, kernel),
        "rgb_to_hsv": lambda k: k.rgb_to_hsv(img),
        "hsv_to_rgb": lambda k: k.hsv_to_rgb(img),
        "im2col_3x3": lambda k: k.im2col_3x3(batch, 1),
        "col2im_3x3": lambda k: k.col2im_3x3(cols, size // 2, size // 2, 1),
    }


def best_ms(fn, repeat):
    fn()  # warm up
    n = 3
    return 1e3 * min(timeit.repeat(fn, number=n, repeat=repeat)) / n


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timing repeats (best is reported)")
    ap.add_argument("--size", type=int, default=64, help="image side in pixels")
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled extension not built; only the numpy backend is available")
    print(f"{'kernel':<26}{'numpy ms':>10}{'cython ms':>11}{'speed-up':>10}")
    for name, fn in cases(args.size).items():
        t_np = best_ms(lambda: fn(ref), args.repeat)
        if cy is None:
            print(f"{name:<26}{t_np:>10.3f}{'-':>11}{'-':>10}")
            continue
        t_cy = best_ms(lambda: fn(cy), args.repeat)
        print(f"{name:<26}{t_np:>10.3f}{t_cy:>11.3f}{t_np / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
