#!/usr/bin/env python3
"""Compare the jitted and pure-numpy Monte-Carlo kernel paths.

Run directly:  python3 benchmarks/bench_kernels.py [n_samples]
The numpy path can also be forced globally via WLAN_LENS_NO_NUMBA=1.
"""

import sys
import time

from wlanlens import kernels


def _time(fn, *args, repeat=3, **kw):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args, **kw)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 2_000_000
    print(f"samples per call: {n:,}")
    print(f"numba available & enabled: {kernels.USING_NUMBA}")

    rows = []
    for name, joint, tx in (
        ("numpy", kernels._sample_joint_hb_numpy, kernels._sample_tx_count_numpy),
        ("numba", kernels._sample_joint_hb_numba, kernels._sample_tx_count_numba),
    ):
        if joint is None:
            print(f"{name:>6}: unavailable (numba not importable or disabled)")
            continue
        joint(4, 10_000, 1, 64)  # warm JIT / allocator
        tx(10_000, 1, 40)
        tj = _time(joint, 4, n, 1, 64)
        tt = _time(tx, n, 1, 40)
        rows.append((name, tj, tt))
        print(f"{name:>6}: joint(h,b) {tj * 1e3:8.1f} ms   tx-count {tt * 1e3:8.1f} ms")

    if len(rows) == 2:
        print(
            f"speedup (numpy/numba): joint {rows[0][1] / rows[1][1]:.2f}x, "
            f"tx-count {rows[0][2] / rows[1][2]:.2f}x"
        )


if __name__ == "__main__":
    main()
