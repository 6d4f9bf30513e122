"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from decor import _kernels_py

try:
    from decor import _kernels
except ImportError:
    _kernels = None


def _time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _kernels is None:
        print("compiled kernels are not built; only the fallback can run")
        return
    rng = np.random.default_rng(0)
    x = rng.standard_normal(48000)
    step = 44100 / 48000
    out_len = round(len(x) / step)
    cases = {
        "backward_energy 48k": lambda k: k.backward_energy(x),
        "sinc_resample 48k": lambda k: k.sinc_resample(x, step, out_len, 0.95, 32, 8.0),
    }
    print(f"{'kernel':<24}{'cython ms':>12}{'python ms':>12}{'speedup':>10}{'max diff':>12}")
    for name, call in cases.items():
        fast = _time(lambda: call(_kernels), args.repeat) * 1e3
        slow = _time(lambda: call(_kernels_py), args.repeat) * 1e3
        diff = float(np.max(np.abs(np.asarray(call(_kernels)) - np.asarray(call(_kernels_py)))))
        print(f"{name:<24}{fast:>12.3f}{slow:>12.3f}{slow / fast:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
