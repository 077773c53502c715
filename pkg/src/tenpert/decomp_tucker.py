"""Tucker-ALS (HOOI) with HOSVD initialisation and dimension-tree TTMc."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import ceil
from typing import Iterator, Sequence

import numpy as np

from . import tensor_core as tc
from .decomp_cp import EXPLICIT_BELOW, explicit_residual, finish_meta
from .trace import ConvergenceTrace, TraceRecorder


@dataclass
class TuckerModel:
    """Core ``G`` (``R_1 x ... x R_N``) and factors with orthonormal columns."""

    core: np.ndarray
    factors: list[np.ndarray]

    def __post_init__(self):
        self.core = np.ascontiguousarray(self.core, dtype=np.float64)
        self.factors = [np.ascontiguousarray(A, dtype=np.float64) for A in self.factors]
        if self.core.ndim != len(self.factors):
            raise ValueError("core order must equal the number of factors")
        for n, A in enumerate(self.factors):
            if A.ndim != 2 or A.shape[1] != self.core.shape[n]:
                raise ValueError(f"factor {n} of shape {A.shape} does not match core mode size {self.core.shape[n]}")

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(self.core.shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(A.shape[0] for A in self.factors)

    def copy(self) -> "TuckerModel":
        return TuckerModel(self.core.copy(), [A.copy() for A in self.factors])

    def full(self) -> np.ndarray:
        out = self.core
        for n, A in enumerate(self.factors):
            out = tc.mode_product(out, A, n)
        return out

    def orthonormality_error(self) -> float:
        return max(float(np.linalg.norm(A.T @ A - np.eye(A.shape[1]))) for A in self.factors)


def _check_ranks(shape: Sequence[int], ranks: Sequence[int]) -> tuple[int, ...]:
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(shape):
        raise ValueError(f"need {len(shape)} ranks, got {len(ranks)}")
    for n, (r, s) in enumerate(zip(ranks, shape)):
        if not 1 <= r <= s:
            raise ValueError(f"rank {r} for mode {n} must lie in [1, {s}]")
    return ranks


def ttmc_naive(X: np.ndarray, model: TuckerModel, n: int) -> np.ndarray:
    """``X`` times every factor transpose except mode ``n``, one mode product at a time."""
    Y = X
    for m in range(X.ndim):
        if m != n:
            Y = tc.mode_product(Y, model.factors[m].T, m)
    return Y


class DimensionTreeTucker:
    """Same binary tree as the CP version; nodes are full-order TTMc partials."""

    def __init__(self, X: np.ndarray):
        self.X = X
        self.cache: dict[tuple[int, ...], np.ndarray] = {}

    def _contract(self, T, drop, factors):
        for m in sorted(drop, key=lambda m: (-self.X.shape[m], -m)):
            T = tc.mode_product(T, factors[m].T, m)
        return T

    def _visit(self, modes, T, factors) -> Iterator[tuple[int, np.ndarray]]:
        if len(modes) == 1:
            yield modes[0], T
            return
        h = ceil(len(modes) / 2)
        left, right = modes[:h], modes[h:]
        for child, drop in ((left, right), (right, left)):
            C = self._contract(T, drop, factors)
            self.cache[tuple(child)] = C
            yield from self._visit(child, C, factors)
            self.cache.pop(tuple(child), None)

    def sweep(self, factors: Sequence[np.ndarray]) -> Iterator[tuple[int, np.ndarray]]:
        self.cache.clear()
        if self.X.ndim == 1:
            yield 0, self.X
            return
        yield from self._visit(list(range(self.X.ndim)), self.X, factors)


def sweep_ttmc_dt(X: np.ndarray, model: TuckerModel, tree: DimensionTreeTucker | None = None) -> list[np.ndarray]:
    tree = DimensionTreeTucker(X) if tree is None else tree
    out: list[np.ndarray | None] = [None] * X.ndim
    for n, Y in tree.sweep(model.factors):
        out[n] = Y
    return out


def fix_signs(U: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def leading_left_singvecs(Y: np.ndarray, n: int, rank: int) -> np.ndarray:
    """Leading ``rank`` eigenvectors of ``W = Y_(n) Y_(n)^T``, sign-normalised."""
    s_n = Y.shape[n]
    if not 1 <= rank <= s_n:
        raise ValueError(f"rank {rank} must lie in [1, {s_n}] for mode {n}")
    axes = [m for m in range(Y.ndim) if m != n]
    tc.count(s_n * Y.size)
    W = np.tensordot(Y, Y, axes=(axes, axes))
    tc.count(tc.eigh_madds(s_n))
    _, V = np.linalg.eigh(W)
    return np.ascontiguousarray(fix_signs(V[:, ::-1][:, :rank]))


def hosvd(X: np.ndarray, ranks: Sequence[int], interlaced: bool = True) -> TuckerModel:
    """Classical or interlaced (sequentially truncated) HOSVD.

    The interlaced variant processes modes in ascending order, taking factor
    ``n`` from ``X`` already contracted with factors ``0..n-1``.
    """
    X = tc.as_tensor(X)
    ranks = _check_ranks(X.shape, ranks)
    factors = []
    if interlaced:
        Z = X
        for n in range(X.ndim):
            factors.append(leading_left_singvecs(Z, n, ranks[n]))
            Z = tc.mode_product(Z, factors[n].T, n)
        core = Z
    else:
        factors = [leading_left_singvecs(X, n, ranks[n]) for n in range(X.ndim)]
        core = X
        for n, A in enumerate(factors):
            core = tc.mode_product(core, A.T, n)
    return TuckerModel(core, factors)


@dataclass
class TuckerSweepState:
    core: np.ndarray
    prev_core: np.ndarray
    y_norms: list[float] = field(default_factory=list)
    rel_changes: list[float] = field(default_factory=list)

    @property
    def core_change(self) -> np.ndarray:
        return self.core - self.prev_core

    @property
    def core_change_norm(self) -> float:
        return float(np.linalg.norm(self.core - self.prev_core))


def _rel_change(new, old) -> float:
    nrm = np.linalg.norm(new)
    return float(np.linalg.norm(new - old) / nrm) if nrm > 0 else np.inf


def set_mode_from(factors: list[np.ndarray], n: int, Y: np.ndarray, rank: int, state: TuckerSweepState) -> None:
    A_new = leading_left_singvecs(Y, n, rank)
    state.rel_changes.append(_rel_change(A_new, factors[n]))
    state.y_norms.append(float(np.linalg.norm(Y)))
    factors[n] = A_new


def als_sweep(tree: DimensionTreeTucker, model: TuckerModel) -> TuckerSweepState:
    """One HOOI sweep in place; the core comes from the last TTMc, once per sweep."""
    factors, ranks = model.factors, model.ranks
    N = len(factors)
    state = TuckerSweepState(core=model.core, prev_core=model.core)
    Y_last = None
    for n, Y in tree.sweep(factors):
        set_mode_from(factors, n, Y, ranks[n], state)
        Y_last = Y
    state.core = tc.mode_product(Y_last, factors[N - 1].T, N - 1)
    model.core = state.core
    return state


def tucker_residual(norm_x_sq: float, core: np.ndarray, X: np.ndarray | None = None,
                    model: TuckerModel | None = None) -> float:
    """``||X - model||_F`` from ``||X||^2 - ||G||^2`` (orthonormal factors, projected core).

    Given ``X`` and ``model``, tiny values are recomputed by reconstruction as
    in :func:`cp_residual`.
    """
    res_sq = norm_x_sq - float(np.sum(core * core))
    if X is not None and model is not None and res_sq < EXPLICIT_BELOW**2 * norm_x_sq:
        return explicit_residual(X, model)
    return float(math.sqrt(max(res_sq, 0.0)))


def tucker_als_run(X: np.ndarray, ranks: Sequence[int], tol: float = 1e-10, max_sweeps: int = 100,
                   interlaced_init: bool = True, init: TuckerModel | None = None,
                   on_sweep=None) -> tuple[TuckerModel, ConvergenceTrace]:
    """HOSVD followed by HOOI sweeps until ``||G_new - G||_F <= tol``.

    The core change is taken as infinite before the first sweep, so at least
    one sweep runs whenever ``max_sweeps >= 1``.
    """
    X = tc.as_tensor(X)
    ranks = _check_ranks(X.shape, ranks)
    fc = tc.counter()
    with fc.tagged("hosvd"):
        norm_x_sq = tc.frobenius_norm(X) ** 2
        model = hosvd(X, ranks, interlaced_init) if init is None else init.copy()
    rec = TraceRecorder(fc, math.sqrt(norm_x_sq),
                        meta={"model": "tucker", "method": "als", "ranks": list(ranks), "tol": tol,
                              "max_sweeps": max_sweeps, "interlaced": interlaced_init})
    rec.record("hosvd", tucker_residual(norm_x_sq, model.core, X, model), math.inf, sweep=0,
               core_norm=float(np.linalg.norm(model.core)))
    tree = DimensionTreeTucker(X)
    converged = False
    for _ in range(max_sweeps):
        with fc.tagged("dt"):
            state = als_sweep(tree, model)
        r = rec.record("dt", tucker_residual(norm_x_sq, model.core, X, model), state.core_change_norm,
                       core_norm=float(np.linalg.norm(model.core)))
        if on_sweep is not None:
            on_sweep(r.sweep, "dt", model)
        if state.core_change_norm <= tol:
            converged = True
            break
    rec.trace.meta["converged"] = converged
    finish_meta(rec.trace, X, model, rec.norm_x)
    return model, rec.trace
