"""Pairwise perturbation (PP) operators and the PP-accelerated ALS drivers.

PP operators are partially contracted tensors that leave two modes open.
They are built once from a snapshot of the factors, then reused to form
first-order approximations of the MTTKRP / TTMc right-hand sides for as long
as every factor stays within a relative distance ``pp_tol`` of the snapshot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from . import tensor_core as tc
from .decomp_cp import (
    CpSweepState, DimensionTreeCP, KruskalModel, _check_model, _contract_rank_mode,
    als_sweep as cp_als_sweep, cp_residual, finish_meta, init_factors, update_mode,
)
from .decomp_tucker import (
    DimensionTreeTucker, TuckerModel, TuckerSweepState, _check_ranks,
    als_sweep as tucker_als_sweep, hosvd, set_mode_from, tucker_residual,
)
from .trace import ConvergenceTrace, TraceRecorder

DEFAULT_PP_TOL = 0.01
SWEPT_PP_TOLS = (0.002, 0.01, 0.05)  # tolerances worth sweeping in experiments


class MemoryBudgetError(MemoryError):
    """Raised before a PP build whose estimated footprint exceeds the budget."""


@dataclass
class PPRunConfig:
    pp_tol: float = DEFAULT_PP_TOL
    tol: float = 1e-8
    max_sweeps: int = 500
    mem_budget: int | None = None

    def __post_init__(self):
        if self.pp_tol < 0:
            raise ValueError("pp_tol must be >= 0")


@dataclass(frozen=True)
class PPTreeNode:
    modes: tuple[int, ...]  # uncontracted modes, ascending
    parent: tuple[int, ...]
    contracted: int
    level: int


def pp_tree(shape: Sequence[int]) -> list[list[PPTreeNode]]:
    """Levels ``1..N-2`` of the PP construction tree (the root is level 0).

    Tree positions ``1..N`` are assigned to modes in decreasing size, so the
    largest modes are contracted first.  Level ``l`` holds the nodes whose
    open positions are ``{i, j, l+3, ..., N}`` for ``i < j <= l+2``; the
    parent of such a node also keeps ``w = max({l, l+1, l+2} - {i, j})`` open.
    """
    N = len(shape)
    perm = sorted(range(N), key=lambda m: (-shape[m], m))  # position p is mode perm[p-1]

    def modes_of(positions):
        return tuple(sorted(perm[p - 1] for p in positions))

    levels = []
    for l in range(1, N - 1):
        tail = set(range(l + 3, N + 1))
        level = []
        for i, j in combinations(range(1, l + 3), 2):
            w = max({l, l + 1, l + 2} - {i, j})
            level.append(PPTreeNode(modes=modes_of({i, j} | tail), parent=modes_of({i, j, w} | tail),
                                    contracted=perm[w - 1], level=l))
        levels.append(level)
    return levels


def estimate_pp_bytes(shape: Sequence[int], ranks: Sequence[int], kind: str) -> int:
    """Peak bytes for a PP build: two adjacent tree levels plus the operators."""
    N = len(shape)
    R = ranks[0]

    def size(modes):
        if kind == "cp":
            return math.prod(shape[m] for m in modes) * R
        return math.prod(shape[m] if m in modes else ranks[m] for m in range(N))

    if N == 2:
        level_sizes = [size((0, 1))]
    else:
        level_sizes = [sum(size(node.modes) for node in level) for level in pp_tree(shape)]
    peak = max(a + b for a, b in zip(level_sizes, level_sizes[1:] + [0]))
    ops = level_sizes[-1] + sum(size((n,)) for n in range(N))
    return 8 * (peak + ops)


def _guard(shape, ranks, kind, budget):
    if budget is None:
        return
    need = estimate_pp_bytes(shape, ranks, kind)
    if need > budget:
        N = len(shape)
        raise MemoryBudgetError(
            f"PP {kind} build for shape {tuple(shape)} with ranks {tuple(ranks)} needs about "
            f"{need} bytes ({N * (N - 1) // 2} pairwise operators), budget is {budget} bytes")


# --------------------------------------------------------------------------- CP


@dataclass
class PPOperatorsCP:
    """Snapshot factors, pairwise operators ``(s_i, s_n, R)`` for ``i < n``, single-mode terms."""

    snapshot: list[np.ndarray]
    pairwise: dict[tuple[int, int], np.ndarray]
    single: list[np.ndarray]

    def op(self, i: int, n: int) -> np.ndarray:
        """``M_p^(i,n)`` indexed ``(x_i, x_n, k)``; ``(n, i)`` is read transposed."""
        if i < n:
            return self.pairwise[(i, n)]
        return self.pairwise[(n, i)].transpose(1, 0, 2)


def build_pp_operators_cp(X: np.ndarray, model: KruskalModel, mem_budget: int | None = None) -> PPOperatorsCP:
    _check_model(X, model)
    N, R = X.ndim, model.rank
    _guard(X.shape, [R] * N, "cp", mem_budget)
    A = model.factors
    root = tuple(range(N))
    if N == 2:
        pairwise = {(0, 1): np.ascontiguousarray(np.repeat(X[:, :, None], R, axis=2))}
    else:
        store = {root: X}
        for level in pp_tree(X.shape):
            produced = {}
            for node in level:
                T = store[node.parent]
                pos = node.parent.index(node.contracted)
                if node.parent == root:
                    tc.count(T.size * R)
                    C = np.tensordot(T, A[node.contracted], axes=([pos], [0]))
                else:
                    C = _contract_rank_mode(T, pos, A[node.contracted])
                produced[node.modes] = np.ascontiguousarray(C)
            store = produced
        pairwise = {key: store[key] for key in combinations(range(N), 2)}
    ops = PPOperatorsCP(snapshot=[a.copy() for a in A], pairwise=pairwise, single=[])
    for n in range(N):
        i = 1 if n == 0 else 0
        tc.count(ops.op(i, n).size)
        ops.single.append(np.einsum("xyk,xk->yk", ops.op(i, n), A[i]))
    return ops


def pp_mttkrp(ops: PPOperatorsCP, dA: Sequence[np.ndarray], n: int) -> np.ndarray:
    """First-order MTTKRP ``M_p^(n) + sum_i M_p^(i,n) x_i dA^(i)`` (columnwise)."""
    M = ops.single[n].copy()
    for i in range(len(ops.single)):
        if i != n:
            P = ops.op(i, n)
            tc.count(P.size)
            M += np.einsum("xyk,xk->yk", P, dA[i])
    return M


def pp_cp_sweep(ops: PPOperatorsCP, factors: list[np.ndarray], grams: list[np.ndarray],
                dA: list[np.ndarray]) -> CpSweepState:
    """One approximate sweep in place; ``dA`` tracks the drift from ``ops.snapshot``."""
    state = CpSweepState(grams=grams)
    for n in range(len(factors)):
        M = pp_mttkrp(ops, dA, n)
        update_mode(factors, grams, n, M, state)
        dA[n] = factors[n] - ops.snapshot[n]
        state.M_last = M
    return state


def _drift(dA, factors) -> list[float]:
    out = []
    for d, a in zip(dA, factors):
        nrm = np.linalg.norm(a)
        out.append(float(np.linalg.norm(d) / nrm) if nrm > 0 else math.inf)
    return out


@dataclass
class _Machine:
    """Restart logic shared by the CP and Tucker drivers."""

    config: PPRunConfig
    regular: Callable[[], tuple[float, list[float]]]
    build: Callable[[], None]
    approx: Callable[[str], tuple[float, list[float]]]
    sweeps: int = 0
    builds: int = 0
    stop: float = math.inf

    def run(self) -> bool:
        cfg = self.config
        change = [math.inf]
        while self.stop > cfg.tol and self.sweeps < cfg.max_sweeps:
            if all(c < cfg.pp_tol for c in change):
                self.build()
                self.builds += 1
                phase = "pp-build"
                while True:
                    self.stop, drift = self.approx(phase)
                    self.sweeps += 1
                    phase = "pp-approx"
                    if (self.stop <= cfg.tol or self.sweeps >= cfg.max_sweeps
                            or not all(d < cfg.pp_tol for d in drift)):
                        break
                if self.sweeps >= cfg.max_sweeps:
                    break
            # a regular sweep always follows a PP phase
            self.stop, change = self.regular()
            self.sweeps += 1
        return self.stop <= cfg.tol


SweepCallback = Callable[[int, str, object], None]


def pp_cp_run(X: np.ndarray, R: int, config: PPRunConfig | None = None, seed: int | None = 0,
              init: KruskalModel | None = None,
              on_sweep: SweepCallback | None = None) -> tuple[KruskalModel, ConvergenceTrace]:
    """CP-ALS alternating between dimension-tree sweeps and PP sweeps."""
    cfg = PPRunConfig() if config is None else config
    X = tc.as_tensor(X)
    model = init_factors(X.shape, R, seed) if init is None else init.copy()
    _check_model(X, model)
    fc = tc.counter()
    with fc.tagged("dt"):
        norm_x_sq = tc.frobenius_norm(X) ** 2
    rec = TraceRecorder(fc, math.sqrt(norm_x_sq),
                        meta={"model": "cp", "method": "pp", "rank": R, "tol": cfg.tol, "pp_tol": cfg.pp_tol,
                              "max_sweeps": cfg.max_sweeps, "seed": seed})
    factors = model.factors
    grams = [tc.gram(A) for A in factors]
    tree = DimensionTreeCP(X)
    box: dict = {}

    def finish(phase, state):
        res = cp_residual(X, model, state.M_last, grams, norm_x_sq)
        r = rec.record(phase, res, state.grad_norm_sum)
        if on_sweep is not None:
            on_sweep(r.sweep, phase, model)

    def regular():
        with fc.tagged("dt"):
            state = cp_als_sweep(tree, factors, grams)
            finish("dt", state)
        return state.grad_norm_sum, state.rel_changes

    def build():
        with fc.tagged("pp-build"):
            box["ops"] = build_pp_operators_cp(X, model, cfg.mem_budget)
        box["dA"] = [np.zeros_like(A) for A in factors]

    def approx(phase):
        with fc.tagged(phase):
            state = pp_cp_sweep(box["ops"], factors, grams, box["dA"])
            finish(phase, state)
        return state.grad_norm_sum, _drift(box["dA"], factors)

    machine = _Machine(cfg, regular, build, approx)
    rec.trace.meta["converged"] = machine.run()
    rec.trace.meta["pp_builds"] = machine.builds
    finish_meta(rec.trace, X, model, rec.norm_x)
    return model, rec.trace


# ----------------------------------------------------------------------- Tucker


@dataclass
class PPOperatorsTucker:
    """Snapshot factors, pairwise TTMc partials ``Y_p^(i,n)`` (``i < n``), and ``Y_p^(n)``.

    Every operator is a full-order tensor: open modes keep size ``s``, the
    others have size ``R``.  ``Y_p^(i,n)`` and ``Y_p^(n,i)`` are the same tensor.
    """

    snapshot: list[np.ndarray]
    pairwise: dict[tuple[int, int], np.ndarray]
    single: list[np.ndarray]

    def op(self, i: int, n: int) -> np.ndarray:
        return self.pairwise[(min(i, n), max(i, n))]


def build_pp_operators_tucker(X: np.ndarray, model: TuckerModel, mem_budget: int | None = None) -> PPOperatorsTucker:
    N = X.ndim
    if tuple(X.shape) != model.shape:
        raise ValueError(f"model shape {model.shape} does not match tensor shape {X.shape}")
    if N < 2:
        raise ValueError("PP needs a tensor of order >= 2")
    _guard(X.shape, model.ranks, "tucker", mem_budget)
    A = model.factors
    if N == 2:
        pairwise = {(0, 1): X}
    else:
        store = {tuple(range(N)): X}
        for level in pp_tree(X.shape):
            store = {node.modes: tc.mode_product(store[node.parent], A[node.contracted].T, node.contracted)
                     for node in level}
        pairwise = {key: store[key] for key in combinations(range(N), 2)}
    ops = PPOperatorsTucker(snapshot=[a.copy() for a in A], pairwise=pairwise, single=[])
    for n in range(N):
        i = 1 if n == 0 else 0
        ops.single.append(tc.mode_product(ops.op(i, n), A[i].T, i))
    return ops


def pp_ttmc(ops: PPOperatorsTucker, dA: Sequence[np.ndarray], n: int) -> np.ndarray:
    """First-order TTMc ``Y_p^(n) + sum_i Y_p^(i,n) x_i dA^(i)^T``."""
    Y = ops.single[n].copy()
    for i in range(len(ops.single)):
        if i != n:
            Y += tc.mode_product(ops.op(i, n), dA[i].T, i)
    return Y


def pp_tucker_sweep(ops: PPOperatorsTucker, model: TuckerModel, dA: list[np.ndarray]) -> TuckerSweepState:
    """One approximate HOOI sweep in place; the core is rebuilt from the last approximate TTMc."""
    factors, ranks = model.factors, model.ranks
    N = len(factors)
    state = TuckerSweepState(core=model.core, prev_core=model.core)
    Y = None
    for n in range(N):
        Y = pp_ttmc(ops, dA, n)
        set_mode_from(factors, n, Y, ranks[n], state)
        dA[n] = factors[n] - ops.snapshot[n]
    state.core = tc.mode_product(Y, factors[N - 1].T, N - 1)
    model.core = state.core
    return state


def pp_tucker_run(X: np.ndarray, ranks: Sequence[int], config: PPRunConfig | None = None,
                  interlaced_init: bool = True, init: TuckerModel | None = None,
                  on_sweep: SweepCallback | None = None) -> tuple[TuckerModel, ConvergenceTrace]:
    """Tucker-ALS alternating between dimension-tree sweeps and PP sweeps."""
    cfg = PPRunConfig(tol=1e-10, max_sweeps=100) if config is None else config
    X = tc.as_tensor(X)
    ranks = _check_ranks(X.shape, ranks)
    fc = tc.counter()
    with fc.tagged("hosvd"):
        norm_x_sq = tc.frobenius_norm(X) ** 2
        model = hosvd(X, ranks, interlaced_init) if init is None else init.copy()
    rec = TraceRecorder(fc, math.sqrt(norm_x_sq),
                        meta={"model": "tucker", "method": "pp", "ranks": list(ranks), "tol": cfg.tol,
                              "pp_tol": cfg.pp_tol, "max_sweeps": cfg.max_sweeps, "interlaced": interlaced_init})
    rec.record("hosvd", tucker_residual(norm_x_sq, model.core, X, model), math.inf, sweep=0,
               core_norm=float(np.linalg.norm(model.core)))
    tree = DimensionTreeTucker(X)
    box: dict = {}

    def finish(phase, state):
        r = rec.record(phase, tucker_residual(norm_x_sq, model.core, X, model), state.core_change_norm,
                       core_norm=float(np.linalg.norm(model.core)))
        if on_sweep is not None:
            on_sweep(r.sweep, phase, model)

    def regular():
        with fc.tagged("dt"):
            state = tucker_als_sweep(tree, model)
            finish("dt", state)
        return state.core_change_norm, state.rel_changes

    def build():
        with fc.tagged("pp-build"):
            box["ops"] = build_pp_operators_tucker(X, model, cfg.mem_budget)
        box["dA"] = [np.zeros_like(A) for A in model.factors]

    def approx(phase):
        with fc.tagged(phase):
            state = pp_tucker_sweep(box["ops"], model, box["dA"])
            finish(phase, state)
        return state.core_change_norm, _drift(box["dA"], model.factors)

    machine = _Machine(cfg, regular, build, approx)
    rec.trace.meta["converged"] = machine.run()
    rec.trace.meta["pp_builds"] = machine.builds
    finish_meta(rec.trace, X, model, rec.norm_x)
    return model, rec.trace
