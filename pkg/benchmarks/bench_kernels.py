"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is fixed at
import time by ADJOINTLAB_DISABLE_NUMBA.  Compile time is reported apart
from the steady-state timings.

    python3 benchmarks/bench_kernels.py --grids 100 1000 --repeat 3
"""
import argparse
import json
import os
import subprocess
import sys
import time


def measure(problem, scheme, grids, repeat):
    from adjointlab import (
        backend_name,
        backprop_gradient,
        discrete_gradient,
        gradient_integral,
        make_grid,
        solve_adjoint,
        solve_discrete_adjoint,
        solve_forward,
    )
    from adjointlab.harness.zoo import zoo

    vf, loss, theta, z0 = zoo(problem).build()

    def run_all(n):
        base = solve_forward(vf, theta, z0, make_grid(0, 1, n), scheme)
        return {
            "forward": lambda: solve_forward(vf, theta, z0, make_grid(0, 1, n), scheme),
            "backprop": lambda: backprop_gradient(vf, theta, base, loss),
            "discrete_adjoint": lambda: discrete_gradient(vf, theta, base, solve_discrete_adjoint(vf, theta, base, loss)),
            "cont_adjoint": lambda: gradient_integral(vf, theta, base, solve_adjoint(vf, theta, base, loss, scheme)),
        }

    start = time.perf_counter()
    for fn in run_all(min(grids)).values():
        fn()
    warmup = time.perf_counter() - start

    rows = []
    for n in grids:
        for name, fn in run_all(n).items():
            best = float("inf")
            for _ in range(repeat):
                t = time.perf_counter()
                fn()
                best = min(best, time.perf_counter() - t)
            rows.append({"n_steps": n, "pipeline": name, "seconds": best})
    return {"backend": backend_name(), "warmup": warmup, "rows": rows}


def run_backend(disable, args):
    env = dict(os.environ)
    env["ADJOINTLAB_DISABLE_NUMBA"] = "1" if disable else "0"
    cmd = [sys.executable, __file__, "--child", "--problem", args.problem, "--scheme", args.scheme,
           "--repeat", str(args.repeat), "--grids", *map(str, args.grids)]
    out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--problem", default="linear-system")
    parser.add_argument("--scheme", default="rk4")
    parser.add_argument("--grids", type=int, nargs="+", default=[100, 1000, 10000])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    if args.child:
        print(json.dumps(measure(args.problem, args.scheme, args.grids, args.repeat)))
        return 0

    fast = run_backend(False, args)
    slow = run_backend(True, args)
    print(f"{args.problem}, {args.scheme}; best of {args.repeat}")
    print(f"warmup (includes compilation): numba {fast['warmup']:.2f}s, numpy {slow['warmup']:.2f}s")
    print(f"{'n_steps':>8} {'pipeline':>17} {'numba [s]':>11} {'numpy [s]':>11} {'speedup':>8}")
    for a, b in zip(fast["rows"], slow["rows"]):
        print(f"{a['n_steps']:>8} {a['pipeline']:>17} {a['seconds']:>11.5f} {b['seconds']:>11.5f} "
              f"{b['seconds'] / a['seconds']:>8.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
