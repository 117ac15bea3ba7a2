"""Time the compiled kernels against the numpy fallback on training-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 64]
"""

import argparse
import timeit

import numpy as np

from fixres_lab.kernels import _fallback

try:
    from fixres_lab.kernels import _native
except ImportError:  # pragma: no cover
    _native = None


def cases(batch):
    rng = np.random.default_rng(0)
    # stem conv at res 32 (padded 34), then a stride-2 conv at res 16 (padded 18)
    for chans, hp, stride in [(1, 34, 1), (16, 34, 1), (32, 18, 2)]:
        out = (hp - 3) // stride + 1
        xp = rng.standard_normal((batch, chans, hp, hp)).astype(np.float32)
        cols = rng.standard_normal((chans * 9, batch * out * out)).astype(np.float32)
        yield (f"im2col c={chans} {hp}px s{stride}", "im2col", (xp, 3, stride, out, out))
        yield (f"col2im c={chans} {hp}px s{stride}", "col2im", (cols, batch, chans, hp, hp, 3, stride, out, out))
    img = rng.integers(0, 256, (80, 80, 1), dtype=np.uint8)
    for roi, out in [(70, 32), (46, 32), (70, 64)]:
        yield (f"resize {roi}->{out}", "resize_bilinear_u8", (img, 5, 5, roi, roi, out, out))


def best_of(fn, args, repeat, number):
    return min(timeit.repeat(lambda: fn(*args), repeat=repeat, number=number)) / number


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--batch", type=int, default=64)
    args = parser.parse_args()
    if _native is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    print(f"{'kernel':28s} {'native ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for label, name, call in cases(args.batch):
        number = 200 if name == "resize_bilinear_u8" else 5
        t_nat = best_of(getattr(_native, name), call, args.repeat, number)
        t_py = best_of(getattr(_fallback, name), call, args.repeat, number)
        print(f"{label:28s} {t_nat * 1e3:10.3f} {t_py * 1e3:10.3f} {t_py / t_nat:7.2f}x")


if __name__ == "__main__":
    main()
