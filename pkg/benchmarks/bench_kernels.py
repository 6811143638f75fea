"""Compare the compiled and NumPy kernel backends.

    python3 benchmarks/bench_kernels.py [--points 2001] [--steps 400] [--repeat 5]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from kpplab import kernels


def _profile(n: int) -> np.ndarray:
    x = np.linspace(-40.0, 40.0, n)
    return 0.5 * (1.0 - np.tanh(x))


def bench(name: str, kernel: str, n: int, steps: int, repeat: int) -> float:
    kernels.use_backend(name)
    u0 = _profile(n)
    dx = 80.0 / (n - 1)
    h = min(0.01, dx * dx)
    if kernel == "heat_cn":
        def run():
            kernels.heat_cn(u0.copy(), h, dx, steps, 1.0, 0.0)
    else:
        def run():
            kernels.strang_fkpp(u0.copy(), h, dx, steps, 1.0, 1.0, 0.0)
    run()  # warm caches
    return min(timeit.repeat(run, number=1, repeat=repeat))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=2001)
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    backends = kernels.available_backends()
    original = kernels.BACKEND
    print(f"grid={args.points} steps={args.steps} best of {args.repeat}")
    print(f"{'kernel':<12}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    try:
        for kernel in ("heat_cn", "strang_fkpp"):
            t = {b: bench(b, kernel, args.points, args.steps, args.repeat) for b in backends}
            line = f"{kernel:<12}" + "".join(f"{t[b] * 1e3:>10.2f}ms" for b in backends)
            if "compiled" in t:
                line += f"{t['python'] / t['compiled']:>9.1f}x"
            print(line)
    finally:
        kernels.use_backend(original)


if __name__ == "__main__":
    main()
