"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py --n 64 --repeat 5

Each kernel runs on identical inputs in both backends; the table reports the
best-of-repeat time per call and the speedup. A full solver step is timed by
re-running the step in a subprocess per backend, since the backend is fixed
at import.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from nudge3d import kernels
from nudge3d.spectral import GridSpec

STEP = """
import json, sys, timeit
from nudge3d import kernels
from nudge3d.dynamics import SolverConfig, _stepper
from nudge3d.scenarios import initial_field
from nudge3d.spectral import GridSpec
n, repeat = int(sys.argv[1]), int(sys.argv[2])
g = GridSpec(n)
cfg = SolverConfig(g, 0.05, 1e-3, 1.0, "IF-RK4")
u = initial_field(g, "random", seed=0).coeffs
st = _stepper(cfg)
st.step(u)
best = min(timeit.repeat(lambda: st.step(u), number=1, repeat=repeat))
print(json.dumps({"backend": kernels.BACKEND, "step": best}))
"""


def kernel_cases(n, rng):
    g = GridSpec(n)
    shape = g.spectral_shape
    v = np.ascontiguousarray(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    k = np.ascontiguousarray(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    a, b = (np.ascontiguousarray(x) for x in rng.standard_normal((2, 3, n, n, n)))
    mask = np.ones(shape[1:])
    E = np.ascontiguousarray(rng.random(shape[1:]))
    f = np.ascontiguousarray(rng.standard_normal((n, n, n)))
    cout, rout = np.empty_like(v), np.empty_like(a)
    return {
        "cross": lambda m: m.cross(a, b, rout),
        "project": lambda m: m.project(v, g.kx, g.kx, g.kz, g.inv_k2, mask, 1.0, cout),
        "curl": lambda m: m.curl(v, g.kx, g.kx, g.kz, cout),
        "if_stage": lambda m: m.if_stage(E, v, 0.5, k, cout),
        "block_mean": lambda m: m.block_mean(f, 4),
    }


def time_step(n, repeat, pure):
    env = dict(os.environ, NUDGE3D_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", STEP, str(n), str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout)["step"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write results here")
    args = ap.parse_args(argv)

    try:
        cy = kernels.backend_module("cython")
    except ImportError:
        sys.exit("compiled kernels are not built; run pip install -e . --no-build-isolation")
    py = kernels.backend_module("python")
    rng = np.random.default_rng(0)
    rows = []
    for name, call in kernel_cases(args.n, rng).items():
        tp = min(timeit.repeat(lambda: call(py), number=1, repeat=args.repeat))
        tc = min(timeit.repeat(lambda: call(cy), number=1, repeat=args.repeat))
        rows.append({"kernel": name, "python": tp, "cython": tc, "speedup": tp / tc})
    tp, tc = time_step(args.n, args.repeat, True), time_step(args.n, args.repeat, False)
    rows.append({"kernel": "IF-RK4 step", "python": tp, "cython": tc, "speedup": tp / tc})

    print(f"n = {args.n}, best of {args.repeat}")
    print(f"{'kernel':<14}{'python [ms]':>13}{'cython [ms]':>13}{'speedup':>9}")
    for r in rows:
        print(f"{r['kernel']:<14}{1e3 * r['python']:13.3f}{1e3 * r['cython']:13.3f}"
              f"{r['speedup']:9.2f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"n": args.n, "repeat": args.repeat, "rows": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
