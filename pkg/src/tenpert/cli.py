"""Command-line runner: ``python -m tenpert {decompose,compare,condition,gen} ...``.

Exit codes: 0 success, 1 memory-guard refusal, 2 argument error, 3 IO error.
"""
from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import conditioning
from .decomp_cp import cp_als_run, init_factors
from .decomp_tucker import hosvd, tucker_als_run
from .pp_engine import DEFAULT_PP_TOL, MemoryBudgetError, PPRunConfig, pp_cp_run, pp_tucker_run
from .synthgen import SynthSpec, generate
from .tensor_io import TensorFileError, read_tensor, write_tensor
from .trace import CSV_COLUMNS, ConvergenceTrace

EXIT_OK, EXIT_MEMORY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
SEED_ENV = "TENPERT_SEED"
BUILTINS = {
    "givens": conditioning.givens_tensor,
    "quaternion": conditioning.quaternion_tensor,
    "octonion": conditioning.octonion_tensor,
}


class UsageError(Exception):
    pass


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _ranks(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(r) for r in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rank list {text!r}") from None


def _source(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--input", metavar="PATH", help="tensor file to read")
    g.add_argument("--synth", metavar="SPEC", help="synthetic spec, e.g. collinear:N=4,s=20,R=4")
    return g


def _run_flags(p):
    p.add_argument("--model", choices=("cp", "tucker"), default="cp")
    p.add_argument("--rank", type=int, help="CP rank, or common Tucker rank")
    p.add_argument("--ranks", type=_ranks, help="Tucker ranks R1,...,RN")
    p.add_argument("--tol", type=float, help="global stop tolerance (default 1e-8 CP, 1e-10 Tucker)")
    p.add_argument("--pp-tol", type=float, default=DEFAULT_PP_TOL, help="PP entry/exit threshold")
    p.add_argument("--max-sweeps", type=int, help="sweep cap (default 500 CP, 100 Tucker)")
    p.add_argument("--seed", type=int, help=f"init seed (default ${SEED_ENV} or 0)")
    p.add_argument("--out", metavar="PATH.csv", help="trace CSV path (stdout when omitted)")
    p.add_argument("--interlaced", type=_bool, default=True, help="interlaced HOSVD init for Tucker")
    p.add_argument("--mem-budget", type=int, metavar="BYTES", help="refuse PP builds above this size")
    _source(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tenpert", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="run one decomposition and write its trace")
    p.add_argument("--method", choices=("als", "pp"), default="als")
    _run_flags(p)

    p = sub.add_parser("compare", help="run two methods from the same initialisation")
    p.add_argument("--method-a", choices=("als", "pp"), default="als")
    p.add_argument("--method-b", choices=("als", "pp"), default="pp")
    _run_flags(p)

    p = sub.add_parser("condition", help="estimate a tensor condition number")
    g = _source(p)
    g.add_argument("--builtin", choices=sorted(BUILTINS))
    p.add_argument("--restarts", type=int, default=conditioning.DEFAULT_RESTARTS)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("gen", help="write a synthetic tensor to a file")
    p.add_argument("--synth", required=True, metavar="SPEC")
    p.add_argument("--out", required=True, metavar="PATH")
    return ap


def default_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None


def _spec(text: str) -> SynthSpec:
    try:
        return SynthSpec.parse(text)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad --synth spec: {exc}") from None


def load_tensor(args) -> np.ndarray:
    if getattr(args, "builtin", None):
        return BUILTINS[args.builtin]()
    if args.input is not None:
        return read_tensor(args.input)
    return generate(_spec(args.synth))[0]


def _ranks_for(args, shape):
    if args.model == "cp":
        if args.rank is None:
            raise UsageError("--rank is required for CP")
        if args.rank < 1:
            raise UsageError("--rank must be positive")
        return args.rank
    ranks = args.ranks if args.ranks is not None else ((args.rank,) * len(shape) if args.rank else None)
    if ranks is None:
        raise UsageError("--ranks (or --rank) is required for Tucker")
    if len(ranks) != len(shape) or any(not 1 <= r <= s for r, s in zip(ranks, shape)):
        raise UsageError(f"ranks {ranks} do not fit tensor shape {shape}")
    return ranks


def _config(args) -> PPRunConfig:
    cp = args.model == "cp"
    tol = args.tol if args.tol is not None else (1e-8 if cp else 1e-10)
    max_sweeps = args.max_sweeps if args.max_sweeps is not None else (500 if cp else 100)
    if max_sweeps < 0:
        raise UsageError("--max-sweeps must be >= 0")
    if args.pp_tol < 0:
        raise UsageError("--pp-tol must be >= 0")
    return PPRunConfig(pp_tol=args.pp_tol, tol=tol, max_sweeps=max_sweeps, mem_budget=args.mem_budget)


def run_method(X, args, method, init, seed):
    cfg = _config(args)
    if args.model == "cp":
        if method == "als":
            return cp_als_run(X, init.rank, tol=cfg.tol, max_sweeps=cfg.max_sweeps, seed=seed, init=init)
        return pp_cp_run(X, init.rank, cfg, seed=seed, init=init)
    if method == "als":
        return tucker_als_run(X, init.ranks, tol=cfg.tol, max_sweeps=cfg.max_sweeps,
                              interlaced_init=args.interlaced, init=init)
    return pp_tucker_run(X, init.ranks, cfg, interlaced_init=args.interlaced, init=init)


def _initial(X, args, seed):
    ranks = _ranks_for(args, X.shape)
    if args.model == "cp":
        return init_factors(X.shape, ranks, seed)
    return hosvd(X, ranks, args.interlaced)


def _write(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def joint_csv(traces: dict[str, ConvergenceTrace]) -> str:
    lines = [",".join(("method",) + CSV_COLUMNS)]
    for label, trace in traces.items():
        body = trace.to_csv().splitlines()[1:]
        lines.extend(f"{label},{row}" for row in body)
    return "\n".join(lines) + "\n"


def _summary(label, trace):
    return (f"{label}: sweeps={len(trace)} converged={trace.converged} "
            f"final_rel_residual={trace.meta['final_rel_residual']:.6e} total_flops={trace.total_flops}")


def cmd_decompose(args) -> int:
    seed = default_seed(args)
    X = load_tensor(args)
    init = _initial(X, args, seed)
    model, trace = run_method(X, args, args.method, init, seed)
    _write(trace.to_csv(), args.out)
    print(_summary(args.method, trace), file=sys.stderr if args.out is None else sys.stdout)
    return EXIT_OK


def max_factor_diff(ma, mb) -> float:
    return max(float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-300)) for a, b in zip(ma.factors, mb.factors))


def cmd_compare(args) -> int:
    seed = default_seed(args)
    X = load_tensor(args)
    init = _initial(X, args, seed)
    ma, ta = run_method(X, args, args.method_a, init.copy(), seed)
    mb, tb = run_method(X, args, args.method_b, init.copy(), seed)
    la, lb = f"a-{args.method_a}", f"b-{args.method_b}"
    _write(joint_csv({la: ta, lb: tb}), args.out)
    ratio = tb.total_flops / ta.total_flops if ta.total_flops else math.inf
    line = (f"summary: rel_residual_a={ta.meta['final_rel_residual']:.6e} "
            f"rel_residual_b={tb.meta['final_rel_residual']:.6e} flops_a={ta.total_flops} "
            f"flops_b={tb.total_flops} flop_ratio={ratio:.4f} factor_diff={max_factor_diff(ma, mb):.3e}")
    print(line, file=sys.stderr if args.out is None else sys.stdout)
    return EXIT_OK


def cmd_condition(args) -> int:
    X = load_tensor(args)
    est = conditioning.condition_number(X, restarts=args.restarts, seed=default_seed(args))
    print(f"shape={X.shape} sup_f={est.sup_f:.12g} inf_f={est.inf_f:.12g} kappa_estimate={est.kappa:.12g}"
          + (f" ({est.reason})" if est.reason else ""))
    return EXIT_OK


def cmd_gen(args) -> int:
    X, _ = generate(_spec(args.synth))
    write_tensor(args.out, X)
    print(f"wrote {X.shape} tensor to {args.out}")
    return EXIT_OK


COMMANDS = {"decompose": cmd_decompose, "compare": cmd_compare, "condition": cmd_condition, "gen": cmd_gen}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MemoryBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MEMORY
    except (OSError, TensorFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
