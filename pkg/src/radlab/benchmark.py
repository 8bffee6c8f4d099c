"""Kernel backend benchmark: ``python -m radlab.benchmark``.

Times the convolution kernels and the median pool in both the jitted
and the pure-numpy implementation on shapes representative of the
default experiment, and checks that the two agree.
"""

from __future__ import annotations

import time

import numpy as np

from . import kernels_numpy

try:
    from . import kernels_numba
except ImportError:
    kernels_numba = None

CASES = [
    # (name, batch, in_ch, out_ch, size, kernel, stride, pad)
    ("conv 64x64 nf16", 16, 1, 16, 64, 4, 2, 1),
    ("conv 32x32 c16->32", 16, 16, 32, 32, 4, 2, 1),
    ("conv 8x8 c64->128", 16, 64, 128, 8, 4, 2, 1),
]


def _time(fn, *args, repeats: int = 5) -> float:
    fn(*args)  # warm-up (numba compilation, cache effects)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def run(repeats: int = 5) -> list[dict]:
    rng = np.random.default_rng(0)
    rows = []
    impls = {"numpy": kernels_numpy}
    if kernels_numba is not None:
        impls["numba"] = kernels_numba
    for name, b, ci, co, size, k, stride, pad in CASES:
        x = rng.standard_normal((b, ci, size, size)).astype(np.float32)
        w = rng.standard_normal((co, ci, k, k)).astype(np.float32)
        out_size = (size + 2 * pad - k) // stride + 1
        dy = rng.standard_normal((b, co, out_size, out_size)).astype(np.float32)
        for op, call in (
            ("forward", lambda impl: impl.conv2d_forward(x, w, stride, pad)),
            ("backward_input", lambda impl: impl.conv2d_backward_input(
                dy, w, stride, pad, size, size)),
            ("backward_kernel", lambda impl: impl.conv2d_backward_kernel(
                dy, x, stride, pad, k)),
        ):
            row = {"case": f"{name} {op}"}
            outs = {}
            for label, impl in impls.items():
                row[label] = _time(lambda: call(impl), repeats=repeats)
                outs[label] = call(impl)
            if len(outs) == 2:
                row["max_abs_diff"] = float(
                    np.abs(outs["numpy"] - outs["numba"]).max())
            rows.append(row)
    hm = rng.standard_normal((64, 64)).astype(np.float32)
    row = {"case": "median_pool 64x64 k5"}
    outs = {}
    for label, impl in impls.items():
        row[label] = _time(lambda: impl.median_pool2d(hm, 5), repeats=repeats)
        outs[label] = impl.median_pool2d(hm, 5)
    if len(outs) == 2:
        row["max_abs_diff"] = float(np.abs(outs["numpy"] - outs["numba"]).max())
    rows.append(row)
    return rows


def main():
    rows = run()
    width = max(len(r["case"]) for r in rows)
    labels = [k for k in rows[0] if k not in ("case", "max_abs_diff")]
    header = f"{'kernel':<{width}}  " + "  ".join(f"{l:>10}" for l in labels)
    if "max_abs_diff" in rows[0]:
        header += f"  {'agree':>10}"
    print(header)
    for r in rows:
        line = f"{r['case']:<{width}}  " + "  ".join(
            f"{1e3 * r[l]:>8.2f}ms" for l in labels)
        if "max_abs_diff" in r:
            line += f"  {r['max_abs_diff']:>10.2e}"
        print(line)
    if kernels_numba is None:
        print("\nnumba unavailable; timed the numpy fallback only")


if __name__ == "__main__":
    main()
