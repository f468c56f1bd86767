"""Time the hot kernels with numba on and off.

Each mode runs in a fresh interpreter because ``ABLPATH_NO_NUMBA`` is read
at import time. Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--pixels 4096] [--T 32]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from ablpath import kernels
from ablpath.constraints import monotonise_paths, resample_constant_speed

repeat, pixels, T = (int(a) for a in sys.argv[1:4])
rng = np.random.default_rng(0)
side = int(round(pixels ** 0.5))
noisy = rng.random((T, side, side)) + np.linspace(0, 1, T)[:, None, None]
mono = np.cumsum(rng.random((T, side, side)) ** 3, axis=0)
mono = np.concatenate([np.zeros((1, side, side)), mono]) / mono[-1]

def best(fn):
    fn()  # warm-up, includes compilation when numba is on
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)

print(json.dumps({
    "numba": kernels.USE_NUMBA,
    "monotonise": best(lambda: monotonise_paths(noisy)),
    "resample": best(lambda: resample_constant_speed(mono, T)),
}))
"""


def run_mode(disable: bool, args) -> dict:
    env = dict(os.environ)
    env.pop("ABLPATH_NO_NUMBA", None)
    if disable:
        env["ABLPATH_NO_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", WORKER, str(args.repeat), str(args.pixels), str(args.T)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--pixels", type=int, default=4096, help="approximate number of pixels per mask")
    ap.add_argument("--T", type=int, default=32, help="time samples per path")
    args = ap.parse_args(argv)

    fast, slow = run_mode(False, args), run_mode(True, args)
    if not fast["numba"]:
        print("warning: numba is unavailable, both runs use the fallback", file=sys.stderr)
    print(f"{'kernel':<12}{'numba [ms]':>12}{'fallback [ms]':>15}{'speed-up':>10}")
    for name in ("monotonise", "resample"):
        a, b = fast[name] * 1e3, slow[name] * 1e3
        print(f"{name:<12}{a:>12.2f}{b:>15.2f}{b / a:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
