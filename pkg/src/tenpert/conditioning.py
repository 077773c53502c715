"""Tensor condition number estimates and perfectly conditioned constructions.

For ``T`` of order ``N`` the amplification function is

    f_T(x_2, ..., x_N) = ||T_(1) (x_2 o ... o x_N)|| / (||x_2|| ... ||x_N||)

and ``kappa(T) = sup f_T / inf f_T``.  Both extrema are found by alternating
optimisation over one vector at a time; with the others fixed, the problem is
an extremal singular value of a matrix.  The sup estimate is a lower bound and
the inf estimate an upper bound, so the reported ``kappa`` never exceeds the
true value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from . import tensor_core as tc
from .decomp_cp import KruskalModel, mttkrp_naive

INF_RTOL = 1e-12
DEFAULT_RESTARTS = 50
ROUNDING_SLACK = 1e-12

__all__ = [
    "ConditionEstimate", "amplification", "condition_number", "finite_kappa_orderings",
    "givens_tensor", "quaternion_tensor", "octonion_tensor", "orthogonal_transform",
    "householder_to_e1", "canonicalize_min_fiber", "CertificateReport", "cp_error_certificate",
]


@dataclass
class ConditionEstimate:
    """Estimated extrema of ``f_T``; ``kappa`` is a lower bound on the true value."""

    sup_f: float
    inf_f: float
    kappa: float
    sup_witness: list[np.ndarray] = field(default_factory=list)
    inf_witness: list[np.ndarray] = field(default_factory=list)
    reason: str = ""

    @property
    def finite(self) -> bool:
        return math.isfinite(self.kappa)


def amplification(T: np.ndarray, xs) -> float:
    """Exact ``f_T`` at ``xs = [x_2, ..., x_N]`` (the vectors need not be unit)."""
    T = np.asarray(T, dtype=np.float64)
    if len(xs) != T.ndim - 1:
        raise ValueError(f"need {T.ndim - 1} vectors, got {len(xs)}")
    scale = math.prod(float(np.linalg.norm(x)) for x in xs)
    if scale == 0:
        raise ValueError("amplification is undefined at a zero vector")
    g = tc.contract_vectors(T, {m + 1: np.asarray(x, dtype=np.float64) for m, x in enumerate(xs)})
    return float(np.linalg.norm(g)) / scale


def _inf_alternation(T, xs, tol, max_iter):
    """Alternating minimisation of ``f_T``; each step takes a smallest right singular vector."""
    N = T.ndim
    value = math.inf
    for _ in range(max_iter):
        for m in range(1, N):
            K = tc.contract_vectors(T, {j: xs[j] for j in range(1, N) if j != m})  # (s_1, s_m)
            _, _, vt = np.linalg.svd(K, full_matrices=False)
            xs[m] = vt[-1].copy()
        new = float(np.linalg.norm(tc.contract_vectors(T, {j: xs[j] for j in range(1, N)})))
        if abs(value - new) <= tol * max(value if math.isfinite(value) else new, 1e-300):
            value = new
            break
        value = new
    return value, xs


def _unit(v):
    return v / np.linalg.norm(v)


def condition_number(T: np.ndarray, restarts: int = DEFAULT_RESTARTS, tol: float = 1e-10,
                     seed: int = 0, max_iter: int = 500) -> ConditionEstimate:
    """Multi-start estimate of ``kappa(T)`` (deterministic per ``seed``).

    Returns infinity without iterating when some mode is longer than the
    first, and whenever ``inf_f <= 1e-12 * sup_f``.
    """
    T = tc.as_tensor(T)
    if not np.any(T):
        raise ValueError("condition number of the zero tensor is undefined")
    N = T.ndim
    if N == 1:
        nrm = float(np.linalg.norm(T))
        return ConditionEstimate(nrm, nrm, 1.0)
    sup, sup_xs = tc.best_rank1(T, restarts=restarts, tol=tol, max_iter=max_iter, seed=seed)
    if any(s > T.shape[0] for s in T.shape[1:]):
        return ConditionEstimate(sup, 0.0, math.inf, sup_xs, [],
                                 reason=f"first dimension {T.shape[0]} is not the largest of {T.shape}")
    rng = np.random.default_rng(seed + 1)
    best, best_xs = math.inf, None
    for r in range(max(restarts, 1)):
        if r == 0:
            # smallest singular directions of each unfolding, padded to unit vectors
            xs = [None] + [np.linalg.svd(tc.matricize(T, m), full_matrices=True)[0][:, -1] for m in range(1, N)]
        else:
            xs = [None] + [_unit(rng.standard_normal(T.shape[m])) for m in range(1, N)]
        value, xs = _inf_alternation(T, xs, tol, max_iter)
        if value < best:
            best, best_xs = value, [x.copy() for x in xs[1:]]
        if best <= INF_RTOL * sup:
            break
    if best <= INF_RTOL * sup:
        return ConditionEstimate(sup, best, math.inf, sup_xs, best_xs, reason="near-zero fiber found")
    return ConditionEstimate(sup, best, sup / best, sup_xs, best_xs)


def finite_kappa_orderings(shape) -> list[tuple[int, ...]]:
    """Mode permutations that put a largest mode first (the others give ``kappa = inf``)."""
    big = max(shape)
    return [p for p in permutations(range(len(shape))) if shape[p[0]] == big]


def givens_tensor() -> np.ndarray:
    """2x2x2 tensor whose mode-3 contraction with a unit vector is a Givens rotation."""
    T = np.zeros((2, 2, 2))
    T[:, :, 0] = [[1, 0], [0, 1]]
    T[:, :, 1] = [[0, 1], [-1, 0]]
    return T


def quaternion_tensor() -> np.ndarray:
    T = np.zeros((4, 4, 4))
    T[:, :, 0] = [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, -1]]
    T[:, :, 1] = [[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]]
    T[:, :, 2] = [[0, 0, 0, 1], [0, 0, 1, 0], [0, -1, 0, 0], [1, 0, 0, 0]]
    T[:, :, 3] = [[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, 1, 0, 0]]
    return T


_OCT_M = np.array([
    [1, 2, 3, 4, 5, 6, 7, 8],
    [2, 1, 4, 3, 6, 5, 8, 7],
    [3, 4, 1, 2, 7, 8, 5, 6],
    [4, 3, 2, 1, 8, 7, 6, 5],
    [5, 6, 7, 8, 1, 2, 3, 4],
    [6, 5, 8, 7, 2, 1, 4, 3],
    [7, 8, 5, 6, 3, 4, 1, 2],
    [8, 7, 6, 5, 4, 3, 2, 1],
])
_OCT_N = np.array([
    [1, 1, 1, 1, 1, 1, 1, 1],
    [-1, 1, 1, -1, 1, -1, -1, 1],
    [-1, -1, 1, 1, 1, 1, -1, -1],
    [-1, 1, -1, 1, 1, -1, 1, -1],
    [-1, -1, -1, -1, 1, 1, 1, 1],
    [-1, 1, -1, 1, -1, 1, -1, 1],
    [-1, 1, 1, -1, -1, 1, 1, -1],
    [-1, -1, 1, 1, -1, -1, 1, 1],
])


def octonion_tensor() -> np.ndarray:
    """8x8x8 tensor with nonzeros ``T[i, j, M[i, j] - 1] = N[i, j]``."""
    T = np.zeros((8, 8, 8))
    i, j = np.indices((8, 8))
    T[i, j, _OCT_M - 1] = _OCT_N
    return T


def _check_orthogonal(Q, tol=1e-10):
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {Q.shape}")
    if np.linalg.norm(Q.T @ Q - np.eye(Q.shape[0])) > tol * Q.shape[0]:
        raise ValueError("matrix is not orthogonal")
    return Q


def orthogonal_transform(T: np.ndarray, Q: np.ndarray, n: int) -> np.ndarray:
    """``T x_n Q^T``; leaves the condition number unchanged."""
    return tc.mode_product(T, _check_orthogonal(Q).T, n)


def householder_to_e1(x: np.ndarray) -> np.ndarray:
    """Symmetric orthogonal ``H`` with ``H x = e_1`` for a unit vector ``x``."""
    x = _unit(np.asarray(x, dtype=np.float64))
    u = x.copy()
    u[0] -= 1.0
    nu = float(u @ u)
    H = np.eye(x.size)
    if nu > 1e-30:
        H -= 2.0 * np.outer(u, u) / nu
    return H


def canonicalize_min_fiber(T: np.ndarray, restarts: int = DEFAULT_RESTARTS, seed: int = 0,
                           estimate: ConditionEstimate | None = None):
    """Rotate the inf witness onto ``e_1`` in every mode but the first.

    Returns ``(V, Hs, estimate)`` with ``V = T x_2 H_2 ... x_N H_N``; the fiber
    ``V[:, 0, ..., 0]`` equals ``T`` contracted with the inf witness, so its
    norm is ``sup_f / kappa``.
    """
    T = tc.as_tensor(T)
    est = condition_number(T, restarts=restarts, seed=seed) if estimate is None else estimate
    if len(est.inf_witness) != T.ndim - 1:
        raise ValueError("estimate carries no inf witness (first mode is not the largest)")
    Hs, V = [], T
    for m, x in enumerate(est.inf_witness, start=1):
        H = householder_to_e1(x)
        Hs.append(H)
        V = tc.mode_product(V, H, m)
    return V, Hs, est


@dataclass
class CertificateReport:
    """Measured columnwise PP error against ``C(N,2) kappa (1+eps)^(N-3) eps^2``."""

    mode: int
    eps: float
    kappa: float
    measured: np.ndarray  # relative error per column
    bound: float

    @property
    def holds(self) -> bool:
        # rounding slack: exact and PP paths sum in different orders
        return bool(np.all(self.measured <= self.bound + ROUNDING_SLACK))

    @property
    def ratio(self) -> float:
        if not math.isfinite(self.bound):
            return 0.0
        if self.bound == 0:
            return 0.0 if not np.any(self.measured) else math.inf
        return float(np.max(self.measured) / self.bound)


def cp_error_certificate(X: np.ndarray, ops, model: KruskalModel, modes=None,
                         restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> list[CertificateReport]:
    """Evaluate both sides of the columnwise PP error bound for each requested mode.

    ``eps`` is the largest measured ``||da_k|| / ||a_k||`` over all modes and
    columns; ``kappa`` is estimated for ``X`` with mode ``n`` moved to the front.
    """
    from .pp_engine import pp_mttkrp

    X = tc.as_tensor(X)
    N = X.ndim
    dA = [A - Ap for A, Ap in zip(model.factors, ops.snapshot)]
    col_eps = [np.linalg.norm(d, axis=0) / np.linalg.norm(A, axis=0) for d, A in zip(dA, model.factors)]
    eps = float(max(np.max(c) for c in col_eps))
    out = []
    for n in range(N) if modes is None else modes:
        Xn = np.moveaxis(X, n, 0)
        kappa = condition_number(Xn, restarts=restarts, seed=seed).kappa
        exact = mttkrp_naive(X, model, n)
        approx = pp_mttkrp(ops, dA, n)
        measured = np.linalg.norm(approx - exact, axis=0) / np.linalg.norm(exact, axis=0)
        bound = math.comb(N, 2) * kappa * (1 + eps) ** (N - 3) * eps**2 if math.isfinite(kappa) else math.inf
        out.append(CertificateReport(n, eps, kappa, measured, bound))
    return out
