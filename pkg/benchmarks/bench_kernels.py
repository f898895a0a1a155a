"""Compiled vs numpy kernels, alone and inside analyze()/synthesize().

    python3 benchmarks/bench_kernels.py [--seconds 10] [--repeat 5] [--json out.json]

Kernel timings import both implementations directly.  End-to-end timings run
one subprocess per backend because the backend is fixed at import time
(``PPGVC_PURE_PYTHON=1`` forces numpy).
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from ppgvc.kernels import _pykernels

try:
    from ppgvc.kernels import _ckernels
except ImportError:
    _ckernels = None

FS = 16000
SHIFT = 160

END_TO_END = r"""
import json, sys, timeit
from ppgvc import kernels
from ppgvc.experiments import synthetic_vowel
from ppgvc.features import analyze
from ppgvc.vocoder import synthesize
seconds, repeat = float(sys.argv[1]), int(sys.argv[2])
w = synthetic_vowel(180.0, seconds)
p = analyze(w)
a = min(timeit.repeat(lambda: analyze(w), number=1, repeat=repeat))
s = min(timeit.repeat(lambda: synthesize(p), number=1, repeat=repeat))
print(json.dumps({"backend": kernels.BACKEND, "analyze": a, "synthesize": s}))
"""


def kernel_cases(seconds, rng):
    n = int(seconds * FS)
    x = rng.standard_normal(n + 2000)
    starts = np.arange(0, n - 1000, SHIFT, dtype=np.int64)
    frames = rng.standard_normal((n // SHIFT, 1024))
    f0 = np.where(rng.random(n) < 0.7, 180.0, 0.0)
    f0 = np.repeat(f0[::SHIFT], SHIFT)[:n]           # voiced/unvoiced runs at frame granularity
    return {
        "nccf": ((x, starts, 400, 38, 268), {}),
        "overlap_add": ((frames, np.arange(len(frames)) * SHIFT - 432, n), {}),
        "pulse_epochs": ((f0, float(FS)), {}),
    }


def best(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def end_to_end(pure, seconds, repeat):
    env = dict(os.environ, PPGVC_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", END_TO_END, str(seconds), str(repeat)], env=env,
                         check=True, capture_output=True, text=True)
    return json.loads(out.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seconds", type=float, default=10.0, help="audio duration per call")
    ap.add_argument("--repeat", type=int, default=5, help="best-of repeats")
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':<14}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>10}")
    for name, (a, _) in kernel_cases(args.seconds, rng).items():
        t_py = best(getattr(_pykernels, name), a, args.repeat)
        t_cy = best(getattr(_ckernels, name), a, args.repeat) if _ckernels else float("nan")
        rows.append({"name": name, "numpy": t_py, "cython": t_cy})
        print(f"{name:<14}{1e3 * t_py:>12.2f}{1e3 * t_cy:>13.2f}{t_py / t_cy:>9.1f}x")
    e_py = end_to_end(True, args.seconds, args.repeat)
    e_cy = end_to_end(False, args.seconds, args.repeat)
    for stage in ("analyze", "synthesize"):
        rows.append({"name": stage, "numpy": e_py[stage], "cython": e_cy[stage]})
        print(f"{stage:<14}{1e3 * e_py[stage]:>12.2f}{1e3 * e_cy[stage]:>13.2f}"
              f"{e_py[stage] / e_cy[stage]:>9.1f}x   (backend in subprocess: {e_cy['backend']})")
    if args.json:
        with open(args.json, "w") as f:
            json.dump({"seconds": args.seconds, "rows": rows}, f, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
