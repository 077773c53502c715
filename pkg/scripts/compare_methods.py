"""Exact ALS against pairwise perturbation over several seeds, from shared initial factors.

    python3 scripts/compare_methods.py --synth random-factor:N=4,s=20,R=4 --rank 4 --seeds 10
    python3 scripts/compare_methods.py --synth laplacian:N=4,n=6 --rank 2 --seeds 10
"""
import argparse
import time

import numpy as np

from tenpert.decomp_cp import cp_als_run, init_factors
from tenpert.pp_engine import PPRunConfig, pp_cp_run
from tenpert.synthgen import SynthSpec, generate


def dt_and_approx_flops(trace_als, trace_pp):
    dt = [f for f, p in zip(trace_als.sweep_flops(), trace_als.column("phase")) if p == "dt"]
    approx = [f for f, p in zip(trace_pp.sweep_flops(), trace_pp.column("phase")) if p == "pp-approx"]
    return float(np.median(dt)), approx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--synth", required=True, help="spec text; its seed is replaced per run")
    ap.add_argument("--rank", type=int, required=True)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--tol", type=float, default=1e-8)
    ap.add_argument("--pp-tol", type=float, default=0.01)
    ap.add_argument("--max-sweeps", type=int, default=500)
    args = ap.parse_args()
    base = SynthSpec.parse(args.synth)
    cfg = PPRunConfig(pp_tol=args.pp_tol, tol=args.tol, max_sweeps=args.max_sweeps)
    print(f"{'seed':>4} {'als_rel':>10} {'pp_rel':>10} {'gap':>9} {'als_sw':>6} {'pp_sw':>6} "
          f"{'builds':>6} {'approx/dt':>9} {'flops_pp/als':>12} {'wall_s':>7}")
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        X, _ = generate(base.with_seed(seed))
        init = init_factors(X.shape, args.rank, seed)
        _, ta = cp_als_run(X, args.rank, tol=cfg.tol, max_sweeps=cfg.max_sweeps, init=init.copy())
        _, tb = pp_cp_run(X, args.rank, cfg, init=init.copy())
        dt, approx = dt_and_approx_flops(ta, tb)
        ra, rb = ta.meta["final_rel_residual"], tb.meta["final_rel_residual"]
        ratio = max(approx) / dt if approx else float("nan")
        print(f"{seed:4d} {ra:10.3e} {rb:10.3e} {abs(ra - rb):9.2e} {len(ta):6d} {len(tb):6d} "
              f"{tb.meta['pp_builds']:6d} {ratio:9.4f} {tb.total_flops / ta.total_flops:12.3f} "
              f"{time.perf_counter() - t0:7.1f}")


if __name__ == "__main__":
    main()
