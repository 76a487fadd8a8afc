"""Compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--batch 100] [--repeat 20]

Times each pointwise kernel on a batch of quadrature-grid arrays, then one
full solver step per backend, and checks both backends agree.
"""

import argparse
import timeit

import numpy as np

from nematiq import _kernels_py, kernels
from nematiq.fields import SystemState, make_grid
from nematiq.integrator import System, smooth_director, step_arrays, taylor_green
from nematiq.operators import DirectorNoise, PolynomialF, VelocityNoise


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if kernels.BACKEND != "cython":
        print("compiled extension not built; only the numpy fallback is available")
        return
    from nematiq import _kernels as compiled

    rng = np.random.default_rng(0)
    shape = (args.batch, 3, 48, 48)
    a, b = rng.standard_normal(shape), rng.standard_normal(shape)
    u = rng.standard_normal((args.batch, 2, 48, 48))
    g = rng.standard_normal((args.batch, 3, 2, 48, 48))
    coeffs = (1.0, -1.0)
    cases = {
        "cross": (lambda m: m.cross(a, b)),
        "poly_f": (lambda m: m.poly_f(a, coeffs)),
        "advect": (lambda m: m.advect(u, g)),
    }
    print(f"{'kernel':<12}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}{'max diff':>12}")
    for name, call in cases.items():
        tp = best(lambda: call(_kernels_py), args.repeat)
        tc = best(lambda: call(compiled), args.repeat)
        diff = float(np.abs(call(_kernels_py) - call(compiled)).max())
        print(f"{name:<12}{1e3 * tp:>12.2f}{1e3 * tc:>12.2f}{tp / tc:>10.2f}{diff:>12.1e}")

    grid = make_grid(32, 32)
    poly = PolynomialF.gl(1.0)
    system = System(grid, poly, DirectorNoise.default(grid, 0.5), VelocityNoise.smoothed(grid, 1.0, 0.5, 8))
    st = SystemState(taylor_green(grid), smooth_director(grid))
    v = np.broadcast_to(st.v.coef, (args.batch,) + st.v.coef.shape).copy()
    n = np.broadcast_to(st.n.coef, (args.batch,) + st.n.coef.shape).copy()
    dw = rng.standard_normal((args.batch, 9)) * 0.03

    def one_step():
        return step_arrays(system, v, n, dw, 1e-3, "semi_implicit_em")

    saved = {k: getattr(kernels, k) for k in ("cross", "poly_f", "poly_eval", "advect")}
    tc = best(one_step, args.repeat)
    ref = one_step()
    for k in saved:
        setattr(kernels, k, getattr(_kernels_py, k))
    try:
        tp = best(one_step, args.repeat)
        alt = one_step()
    finally:
        for k, f in saved.items():
            setattr(kernels, k, f)
    diff = max(float(np.abs(x - y).max()) for x, y in zip(ref, alt))
    print(f"{'full step':<12}{1e3 * tp:>12.2f}{1e3 * tc:>12.2f}{tp / tc:>10.2f}{diff:>12.1e}")


if __name__ == "__main__":
    main()
