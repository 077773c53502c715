"""CP-ALS through the normal equations, with dimension-tree MTTKRP."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from math import ceil
from typing import Iterator, Sequence

import numpy as np

from . import tensor_core as tc
from .trace import ConvergenceTrace, TraceRecorder

PINV_RTOL = 1e-12
INIT_STREAM = 0x1417
EXPLICIT_BELOW = 1e-3


@dataclass
class KruskalModel:
    """Factor matrices ``A^(n)`` of shape ``(s_n, R)``; no weight vector."""

    factors: list[np.ndarray]

    def __post_init__(self):
        self.factors = [np.ascontiguousarray(A, dtype=np.float64) for A in self.factors]
        if not self.factors:
            raise ValueError("a Kruskal model needs at least one factor")
        ranks = {A.shape[1] for A in self.factors if A.ndim == 2}
        if len(ranks) != 1 or any(A.ndim != 2 for A in self.factors):
            raise ValueError("all factors must be matrices sharing a column count")

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(A.shape[0] for A in self.factors)

    @property
    def order(self) -> int:
        return len(self.factors)

    def copy(self) -> "KruskalModel":
        return KruskalModel([A.copy() for A in self.factors])

    def full(self) -> np.ndarray:
        """Materialise ``sum_k a_k^(1) o ... o a_k^(N)``."""
        tc.count(int(np.prod(self.shape)) * self.rank)
        out = self.factors[0]
        for A in self.factors[1:]:
            out = (out[..., None, :] * A.reshape((1,) * (out.ndim - 1) + A.shape))
        return np.ascontiguousarray(out.sum(axis=-1))


def init_factors(shape: Sequence[int], rank: int, seed: int | None) -> KruskalModel:
    """I.i.d. uniform [0, 1) factors, drawn mode by mode from one seeded stream.

    The stream is keyed apart from ``default_rng(seed)`` so that an init never
    coincides with a generator's ground truth built from the same seed.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    rng = np.random.default_rng(None if seed is None else [INIT_STREAM, int(seed)])
    return KruskalModel([rng.random((s, rank)) for s in shape])


def _check_model(X: np.ndarray, model: KruskalModel) -> None:
    if X.ndim < 2:
        raise ValueError("CP kernels need a tensor of order >= 2")
    if tuple(X.shape) != model.shape:
        raise ValueError(f"model shape {model.shape} does not match tensor shape {X.shape}")


def mttkrp_naive(X: np.ndarray, model: KruskalModel, n: int) -> np.ndarray:
    """``X_(n)`` times the Khatri-Rao product of every other factor.

    With Kolda column ordering the Khatri-Rao chain runs from the last mode
    down to the first, skipping ``n``.
    """
    _check_model(X, model)
    others = [model.factors[m] for m in reversed(range(X.ndim)) if m != n]
    P = reduce(tc.khatri_rao, others)
    Xn = tc.matricize(X, n)
    tc.count(Xn.shape[0] * Xn.shape[1] * model.rank)
    return Xn @ P


def _contract_rank_mode(T: np.ndarray, pos: int, A: np.ndarray) -> np.ndarray:
    """Contract axis ``pos`` of ``T`` (trailing axis = rank) with ``A`` column by column."""
    shape = T.shape
    a = int(np.prod(shape[:pos], dtype=np.int64))
    b = int(np.prod(shape[pos + 1:-1], dtype=np.int64))
    tc.count(T.size)
    out = np.einsum("asbr,sr->abr", T.reshape(a, shape[pos], b, shape[-1]), A, optimize=False)
    return out.reshape(shape[:pos] + shape[pos + 1:])


class DimensionTreeCP:
    """Binary dimension tree amortising all ``N`` MTTKRPs of one sweep.

    The root splits the modes into a leading half of ``ceil(N/2)`` modes and
    the rest; each internal node splits the same way.  A child is formed right
    before its subtree is visited, so factors updated earlier in the sweep are
    picked up (Gauss-Seidel order).  ``cache`` holds the partially contracted
    tensors of the current path, keyed by their uncontracted modes; each entry
    has the node's mode sizes plus a trailing rank axis.
    """

    def __init__(self, X: np.ndarray):
        if X.ndim < 2:
            raise ValueError("CP kernels need a tensor of order >= 2")
        self.X = X
        self.cache: dict[tuple[int, ...], np.ndarray] = {}

    def _contract(self, T: np.ndarray, modes: list[int], drop: list[int], factors, root: bool) -> np.ndarray:
        cur = list(modes)
        # largest dimensions first keeps the intermediates small
        for m in sorted(drop, key=lambda m: (-self.X.shape[m], -m)):
            pos = cur.index(m)
            if root:
                tc.count(T.size * factors[m].shape[1])
                T = np.tensordot(T, factors[m], axes=([pos], [0]))
                root = False
            else:
                T = _contract_rank_mode(T, pos, factors[m])
            cur.pop(pos)
        return np.ascontiguousarray(T)

    def _visit(self, modes: list[int], T: np.ndarray, factors, root: bool) -> Iterator[tuple[int, np.ndarray]]:
        if len(modes) == 1:
            yield modes[0], T
            return
        h = ceil(len(modes) / 2)
        left, right = modes[:h], modes[h:]
        for child, drop in ((left, right), (right, left)):
            C = self._contract(T, modes, drop, factors, root)
            self.cache[tuple(child)] = C
            yield from self._visit(child, C, factors, False)
            self.cache.pop(tuple(child), None)

    def sweep(self, factors: Sequence[np.ndarray]) -> Iterator[tuple[int, np.ndarray]]:
        """Yield ``(n, M^(n))`` for ``n = 0..N-1``.

        ``factors`` is read lazily; a caller may replace ``factors[n]`` after
        receiving ``M^(n)`` and later modes will see the new value.
        """
        self.cache.clear()
        yield from self._visit(list(range(self.X.ndim)), self.X, factors, True)


def sweep_mttkrp_dt(X: np.ndarray, model: KruskalModel, tree: DimensionTreeCP | None = None) -> list[np.ndarray]:
    """All ``N`` MTTKRPs for a fixed model via the dimension tree."""
    _check_model(X, model)
    tree = DimensionTreeCP(X) if tree is None else tree
    out: list[np.ndarray | None] = [None] * X.ndim
    for n, M in tree.sweep(model.factors):
        out[n] = M
    return out


def gamma(grams: Sequence[np.ndarray], n: int) -> np.ndarray:
    """Hadamard product of every Gram matrix except the ``n``-th."""
    others = [S for m, S in enumerate(grams) if m != n]
    if not others:
        R = grams[n].shape[0]
        return np.ones((R, R))
    return reduce(tc.hadamard, others)


def solve_normal(M: np.ndarray, Gamma: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    """``M Gamma^+`` with an eigendecomposition pseudo-inverse.

    Eigenvalues below ``rtol * lambda_max`` are dropped; ``Gamma = 0`` gives zero.
    """
    R = Gamma.shape[0]
    tc.count(tc.eigh_madds(R))
    lam, V = np.linalg.eigh(Gamma)
    lam_max = lam.max() if lam.size else 0.0
    if lam_max <= 0:
        return np.zeros_like(M, dtype=np.float64)
    keep = lam > rtol * lam_max
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / lam[keep]
    tc.count(2 * M.shape[0] * R * R)
    return ((M @ V) * inv) @ V.T


def cp_gradient(A: np.ndarray, A_new: np.ndarray, Gamma: np.ndarray) -> np.ndarray:
    tc.count(A.shape[0] * Gamma.shape[0] ** 2)
    return (A - A_new) @ Gamma


def cp_residual(X: np.ndarray, model: KruskalModel, M_last: np.ndarray | None = None,
                grams: Sequence[np.ndarray] | None = None, norm_x_sq: float | None = None) -> float:
    """``||X - [[A]]||_F`` through the normal-equation expansion.

    ``M_last`` is the MTTKRP of the last mode computed with the current
    factors of the other modes; it is recomputed when omitted.  The expansion
    cannot resolve residuals below about ``sqrt(eps) * ||X||``, so when it
    reports a relative residual under ``EXPLICIT_BELOW`` the value is
    recomputed by reconstruction.  That check is a diagnostic and is not
    counted as algorithm work.
    """
    N = model.order
    if M_last is None:
        M_last = mttkrp_naive(X, model, N - 1)
    if grams is None:
        grams = [tc.gram(A) for A in model.factors]
    if norm_x_sq is None:
        norm_x_sq = tc.frobenius_norm(X) ** 2
    A = model.factors[-1]
    cross = tc.inner(M_last, A)
    model_sq = float(np.sum(tc.hadamard(gamma(grams, N - 1), grams[N - 1])))
    res_sq = norm_x_sq - 2.0 * cross + model_sq
    if res_sq < EXPLICIT_BELOW**2 * norm_x_sq:
        return explicit_residual(X, model)
    return float(np.sqrt(res_sq))


@dataclass
class CpSweepState:
    """What one exact or approximate sweep leaves behind."""

    grams: list[np.ndarray]
    grad_norms: list[float] = field(default_factory=list)
    rel_changes: list[float] = field(default_factory=list)
    M_last: np.ndarray | None = None

    @property
    def grad_norm_sum(self) -> float:
        return float(sum(self.grad_norms))


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    nrm = np.linalg.norm(new)
    diff = np.linalg.norm(new - old)
    return float(diff / nrm) if nrm > 0 else (0.0 if diff == 0 else np.inf)


def update_mode(factors: list[np.ndarray], grams: list[np.ndarray], n: int, M: np.ndarray,
                state: CpSweepState) -> np.ndarray:
    """Normal-equation update of mode ``n`` from its right-hand side ``M``."""
    G_n = gamma(grams, n)
    A_new = solve_normal(M, G_n)
    state.grad_norms.append(float(np.linalg.norm(cp_gradient(factors[n], A_new, G_n))))
    state.rel_changes.append(_rel_change(A_new, factors[n]))
    factors[n] = A_new
    grams[n] = tc.gram(A_new)
    return A_new


def als_sweep(tree: DimensionTreeCP, factors: list[np.ndarray], grams: list[np.ndarray]) -> CpSweepState:
    """One exact CP-ALS sweep in place on ``factors``/``grams``."""
    state = CpSweepState(grams=grams)
    for n, M in tree.sweep(factors):
        update_mode(factors, grams, n, M, state)
        state.M_last = M
    return state


def explicit_residual(X: np.ndarray, model) -> float:
    """``||X - model||_F`` by reconstruction, outside the flop count.

    The expansion used per sweep cancels badly once the factors grow large
    (degenerate problems), so run summaries report this value instead.
    """
    with tc.counting():
        return float(np.linalg.norm(X - model.full()))


def finish_meta(trace: ConvergenceTrace, X: np.ndarray, model, norm_x: float) -> None:
    res = explicit_residual(X, model)
    trace.meta["final_residual"] = res
    trace.meta["final_rel_residual"] = res / norm_x if norm_x > 0 else 0.0


def cp_als_run(X: np.ndarray, R: int, tol: float = 1e-8, max_sweeps: int = 500, seed: int | None = 0,
               init: KruskalModel | None = None, on_sweep=None) -> tuple[KruskalModel, ConvergenceTrace]:
    """Dimension-tree CP-ALS until the gradient-norm sum drops to ``tol``.

    ``on_sweep(sweep, phase, model)`` is called after every sweep.
    """
    X = tc.as_tensor(X)
    model = init_factors(X.shape, R, seed) if init is None else init.copy()
    _check_model(X, model)
    fc = tc.counter()
    with fc.tagged("dt"):
        norm_x_sq = tc.frobenius_norm(X) ** 2
    rec = TraceRecorder(fc, float(np.sqrt(norm_x_sq)),
                        meta={"model": "cp", "method": "als", "rank": R, "tol": tol,
                              "max_sweeps": max_sweeps, "seed": seed})
    factors = model.factors
    grams = [tc.gram(A) for A in factors]
    tree = DimensionTreeCP(X)
    converged = False
    for _ in range(max_sweeps):
        with fc.tagged("dt"):
            state = als_sweep(tree, factors, grams)
            res = cp_residual(X, model, state.M_last, grams, norm_x_sq)
        r = rec.record("dt", res, state.grad_norm_sum)
        if on_sweep is not None:
            on_sweep(r.sweep, "dt", model)
        if state.grad_norm_sum <= tol:
            converged = True
            break
    rec.trace.meta["converged"] = converged
    finish_meta(rec.trace, X, model, rec.norm_x)
    return model, rec.trace


def pairwise_update_oracle(X: np.ndarray, model: KruskalModel, n: int, dA: np.ndarray) -> dict[int, np.ndarray]:
    """Exact right-hand-side updates ``H^(m,n)`` caused by changing ``A^(n)`` by ``dA``.

    ``H^(m,n)(x, k) = sum_y M^(m,n)(x, y, k) dA(y, k)``, with ``M^(m,n)``
    contracted afresh from ``X`` and the current factors.  Test oracle only.
    """
    _check_model(X, model)
    N = X.ndim
    letters = "abcdefghijklmnopqrstuvw"
    out = {}
    for m in range(N):
        if m == n:
            continue
        ops, subs = [X], [letters[:N]]
        for j in range(N):
            if j == m:
                continue
            ops.append(dA if j == n else model.factors[j])
            subs.append(letters[j] + "z")
        out[m] = np.einsum(",".join(subs) + "->" + letters[m] + "z", *ops, optimize=True)
    return out
