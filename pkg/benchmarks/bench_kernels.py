#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

The two backends are bit-identical by contract; this script only measures
speed. Run from a checkout after an editable install:

    python3 benchmarks/bench_kernels.py
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from protoep._kernels import _py

try:
    from protoep._kernels import _fast
except ImportError:
    _fast = None


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench(batch: int, length: int, feat: int, window: int, repeats: int):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((batch, length, feat))
    grad_wc = rng.standard_normal((batch, length, feat * window))
    hidden = rng.standard_normal((batch, length, 230))
    lengths = rng.integers(1, length + 1, size=batch).astype(np.int64)
    grad_mm = rng.standard_normal((batch, 230))

    backends = [("python", _py)]
    if _fast is not None:
        backends.append(("compiled", _fast))
    else:
        print("compiled backend unavailable; showing python only")

    cases = {
        "window_concat fwd": lambda mod: mod.window_concat_forward(x, window),
        "window_concat bwd": lambda mod: mod.window_concat_backward(grad_wc, window, feat),
        "masked_max fwd": lambda mod: mod.masked_max_forward(hidden, lengths),
        "masked_max bwd": lambda mod: mod.masked_max_backward(
            grad_mm, mod.masked_max_forward(hidden, lengths)[1], length
        ),
    }

    print(f"batch={batch} length={length} feat={feat} window={window} (best of {repeats})")
    header = f"{'kernel':<20}" + "".join(f"{name:>12}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for label, call in cases.items():
        times = [_time(lambda mod=mod: call(mod), repeats) for _, mod in backends]
        row = f"{label:<20}" + "".join(f"{t * 1e3:>10.3f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.2f}x"
        print(row)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=50)
    parser.add_argument("--length", type=int, default=128)
    parser.add_argument("--feat", type=int, default=60)
    parser.add_argument("--window", type=int, default=3)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    bench(args.batch, args.length, args.feat, args.window, args.repeats)


if __name__ == "__main__":
    main()
