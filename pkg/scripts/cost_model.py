"""Measured sweep costs against the leading-order flop models.

    python3 scripts/cost_model.py --order 6 --size 16 --ranks 2 4
"""
import argparse

import numpy as np

from tenpert import tensor_core as tc
from tenpert.decomp_cp import init_factors, sweep_mttkrp_dt
from tenpert.decomp_tucker import TuckerModel, sweep_ttmc_dt
from tenpert.pp_engine import build_pp_operators_cp, build_pp_operators_tucker, pp_cp_sweep, pp_tucker_sweep


def flops(fn, *args):
    with tc.counting() as fc:
        out = fn(*args)
    return fc.flops, out


def orthonormal(rng, s, r):
    return np.linalg.qr(rng.standard_normal((s, r)))[0]


def measure(N, s, R, rng):
    X = rng.random((s,) * N)
    rows = []
    km = init_factors(X.shape, R, 0)
    f, _ = flops(sweep_mttkrp_dt, X, km)
    rows.append(("cp", "dt sweep", f, 4 * s**N * R))
    f, ops = flops(build_pp_operators_cp, X, km)
    rows.append(("cp", "pp build", f, 6 * s**N * R))
    factors = [A + 1e-3 * rng.standard_normal(A.shape) for A in km.factors]
    dA = [B - A for A, B in zip(km.factors, factors)]
    f, _ = flops(pp_cp_sweep, ops, factors, [A.T @ A for A in factors], dA)
    rows.append(("cp", "pp sweep", f, 2 * N * s**2 * R))

    tm = TuckerModel(np.zeros((R,) * N), [orthonormal(rng, s, R) for _ in range(N)])
    f, _ = flops(sweep_ttmc_dt, X, tm)
    rows.append(("tucker", "dt sweep", f, 4 * s**N * R))
    f, tops = flops(build_pp_operators_tucker, X, tm)
    rows.append(("tucker", "pp build", f, 6 * s**N * R))
    cur = TuckerModel(tm.core.copy(), [orthonormal(rng, s, R) for _ in range(N)])
    dA = [B - A for A, B in zip(tm.factors, cur.factors)]
    f, _ = flops(pp_tucker_sweep, tops, cur, dA)
    rows.append(("tucker", "pp sweep", f, 2 * N * s**2 * R ** (N - 1)))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--order", type=int, default=6)
    ap.add_argument("--size", type=int, default=16)
    ap.add_argument("--ranks", type=int, nargs="+", default=[2, 4])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'model':7} {'R':>3} {'kernel':9} {'flops':>14} {'model':>14} {'ratio':>7}")
    for R in args.ranks:
        for kind, kernel, f, ref in measure(args.order, args.size, R, rng):
            print(f"{kind:7} {R:3d} {kernel:9} {f:14d} {ref:14d} {f / ref:7.3f}")


if __name__ == "__main__":
    main()
