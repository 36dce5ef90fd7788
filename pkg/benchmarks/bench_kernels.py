"""Compare the compiled kernels with the numpy/scipy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints the best-of-N wall time per kernel and backend, the speedup, and the
max abs difference between the two outputs.
"""
import argparse
import time

import numpy as np

from nasality_si import _fallback
from nasality_si import acoustic_frontend as af

try:
    from nasality_si import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    x51 = rng.standard_normal(51200 * 4)
    x16 = rng.standard_normal(af.SEGMENT_SAMPLES)
    n_blocks = -(-x51.size // 64)
    r = 0.99
    coefs = np.tile([1 - 2 * r * np.cos(0.1) + r * r, 0.0, 0.0, -2 * r * np.cos(0.1), r * r],
                    (n_blocks, 1))
    res = af.resonator_coefficients(af.channel_frequencies())
    pad = np.concatenate([np.zeros(120), x16, np.zeros(400 + 266 + 160)])
    starts = np.arange(200, dtype=np.int64) * 160
    return {
        "onepole (4 s @ 51.2 kHz)": lambda k: k.onepole(x51, 0.99998, 0.0),
        "biquad_blocks (4 s @ 51.2 kHz)": lambda k: k.biquad_blocks(x51, coefs, 64),
        "resonator_bank (one 2 s segment)": lambda k: k.resonator_bank(x16, res, np.exp(-1 / 128),
                                                                       128, 250),
        "frame_autocorr (2 s, 200 frames)": lambda k: k.frame_autocorr(pad, starts, 400, 40, 266),
    }


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':36s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn in cases(rng).items():
        tp, yp = best_of(lambda: fn(_fallback), args.repeat)
        if _kernels is None:
            print(f"{name:36s} {tp:10.4f} {'-':>10s} {'-':>8s} {'-':>10s}")
            continue
        tc, yc = best_of(lambda: fn(_kernels), args.repeat)
        diff = float(np.max(np.abs(np.asarray(yp) - np.asarray(yc))))
        print(f"{name:36s} {tp:10.4f} {tc:10.4f} {tp / tc:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
