"""Dense tensor kernels with multiply-add accounting.

Tensors are plain ``numpy.ndarray`` objects in C (row-major) order, so the
last mode varies fastest in memory.  Unfoldings use the Kolda column ordering:
among the flattened modes, the one with the smallest index varies fastest.

Every kernel here reports its multiply-add count to the active
:class:`FlopCounter`.  One multiply-add is two flops; the cost formulas in the
benchmarks are stated in flops.
"""
from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field
from math import prod
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "FlopCounter",
    "counter",
    "counting",
    "count",
    "eigh_madds",
    "as_tensor",
    "matricize",
    "multi_unfold",
    "fold",
    "mode_product",
    "khatri_rao",
    "hadamard",
    "gram",
    "frobenius_norm",
    "inner",
    "contract_vectors",
    "best_rank1",
    "spectral_norm",
]


@dataclass
class FlopCounter:
    """Monotone multiply-add accumulator with a per-phase breakdown."""

    multiply_adds: int = 0
    by_phase: dict[str, int] = field(default_factory=dict)
    phase: str = "untagged"

    def add(self, n: int) -> None:
        n = int(n)
        if n < 0:
            raise ValueError("multiply-add increments must be non-negative")
        self.multiply_adds += n
        self.by_phase[self.phase] = self.by_phase.get(self.phase, 0) + n

    @property
    def flops(self) -> int:
        return 2 * self.multiply_adds

    @contextlib.contextmanager
    def tagged(self, label: str) -> Iterator["FlopCounter"]:
        previous = self.phase
        self.phase = label
        try:
            yield self
        finally:
            self.phase = previous


_ACTIVE: contextvars.ContextVar[FlopCounter] = contextvars.ContextVar("tenpert_flops")
_ACTIVE.set(FlopCounter())


def counter() -> FlopCounter:
    """Return the counter kernels currently report to."""
    try:
        return _ACTIVE.get()
    except LookupError:  # fresh thread/context
        fc = FlopCounter()
        _ACTIVE.set(fc)
        return fc


@contextlib.contextmanager
def counting(fc: FlopCounter | None = None) -> Iterator[FlopCounter]:
    """Install ``fc`` (or a fresh counter) as the active counter for the block."""
    fc = FlopCounter() if fc is None else fc
    token = _ACTIVE.set(fc)
    try:
        yield fc
    finally:
        _ACTIVE.reset(token)


def count(n: int) -> None:
    counter().add(n)


def eigh_madds(n: int) -> int:
    # Nominal symmetric QR cost with eigenvectors, 9n^3 flops (Golub & Van Loan).
    return (9 * n**3) // 2


def as_tensor(values, dims: Sequence[int] | None = None) -> np.ndarray:
    """Build a float64 C-ordered tensor, validating dims against the payload."""
    arr = np.asarray(values, dtype=np.float64)
    if dims is not None:
        dims = tuple(int(d) for d in dims)
        if any(d < 1 for d in dims):
            raise ValueError(f"all dims must be >= 1, got {dims}")
        if arr.size != prod(dims):
            raise ValueError(f"{arr.size} values do not fill dims {dims}")
        arr = arr.reshape(dims)
    if arr.ndim < 1 or any(d < 1 for d in arr.shape):
        raise ValueError(f"invalid tensor shape {arr.shape}")
    return np.ascontiguousarray(arr)


def _check_mode(T: np.ndarray, n: int) -> int:
    if not 0 <= n < T.ndim:
        raise ValueError(f"mode {n} out of range for an order-{T.ndim} tensor")
    return n


def matricize(T: np.ndarray, n: int) -> np.ndarray:
    """Mode-``n`` unfolding, ``s_n x prod(other dims)``, Kolda column order.

    Modes are zero-based.
    """
    _check_mode(T, n)
    return np.moveaxis(T, n, 0).reshape(T.shape[n], -1, order="F")


def multi_unfold(T: np.ndarray, kept_modes: Sequence[int]) -> np.ndarray:
    """Keep ``kept_modes`` (in the given order) and flatten the rest into a last mode."""
    kept = [int(m) for m in kept_modes]
    if len(set(kept)) != len(kept):
        raise ValueError(f"duplicate modes in {kept}")
    for m in kept:
        _check_mode(T, m)
    rest = [m for m in range(T.ndim) if m not in kept]
    shape = tuple(T.shape[m] for m in kept) + (-1,)
    out = np.transpose(T, kept + rest).reshape(shape, order="F")
    return np.ascontiguousarray(out)


def fold(U: np.ndarray, kept_modes: Sequence[int], dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`multi_unfold` (and of :func:`matricize` for one mode)."""
    kept = [int(m) for m in kept_modes]
    dims = tuple(int(d) for d in dims)
    rest = [m for m in range(len(dims)) if m not in kept]
    order = kept + rest
    full = np.reshape(U, tuple(dims[m] for m in order), order="F")
    return np.ascontiguousarray(np.transpose(full, np.argsort(order)))


def mode_product(T: np.ndarray, M: np.ndarray, n: int) -> np.ndarray:
    """``T x_n M``: apply ``M`` (``J x s_n``) to mode ``n``."""
    _check_mode(T, n)
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[1] != T.shape[n]:
        raise ValueError(f"matrix of shape {M.shape} cannot act on mode {n} of size {T.shape[n]}")
    count(M.shape[0] * M.shape[1] * (T.size // T.shape[n]))
    out = np.tensordot(M, T, axes=([1], [n]))
    return np.ascontiguousarray(np.moveaxis(out, 0, n))


def khatri_rao(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Columnwise Kronecker product; column ``k`` is ``kron(A[:, k], B[:, k])``."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError(f"column counts differ: {A.shape} vs {B.shape}")
    count(A.shape[0] * B.shape[0] * A.shape[1])
    return (A[:, None, :] * B[None, :, :]).reshape(-1, A.shape[1])


def hadamard(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.shape != V.shape:
        raise ValueError(f"shape mismatch: {U.shape} vs {V.shape}")
    count(U.size)
    return U * V


def gram(A: np.ndarray) -> np.ndarray:
    """``A^T A``."""
    count(A.shape[0] * A.shape[1] ** 2)
    return A.T @ A


def frobenius_norm(T: np.ndarray) -> float:
    count(np.size(T))
    return float(np.sqrt(np.sum(np.square(T))))


def inner(T: np.ndarray, U: np.ndarray) -> float:
    if np.shape(T) != np.shape(U):
        raise ValueError(f"shape mismatch: {np.shape(T)} vs {np.shape(U)}")
    count(np.size(T))
    return float(np.sum(np.multiply(T, U)))


def contract_vectors(T: np.ndarray, vectors: dict[int, np.ndarray]) -> np.ndarray:
    """Contract ``T`` with one vector on each mode in ``vectors``.

    The remaining modes keep their relative order.
    """
    out = T
    for m in sorted(vectors, reverse=True):
        v = np.asarray(vectors[m], dtype=np.float64)
        if v.shape != (out.shape[m],):
            raise ValueError(f"vector of shape {v.shape} cannot contract mode {m}")
        count(out.size)
        out = np.tensordot(out, v, axes=([m], [0]))
    return np.asarray(out)


def _unit(v: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(v)
    return v / nrm if nrm > 0 else v


def _hopm(T: np.ndarray, xs: list[np.ndarray], tol: float, max_iter: int) -> tuple[float, list[np.ndarray]]:
    """Alternating power iteration on modes 1..N-1 of ``T``; returns the fit and vectors."""
    N = T.ndim
    value = 0.0
    for _ in range(max_iter):
        for m in range(1, N):
            others = {j: xs[j] for j in range(1, N) if j != m}
            K = contract_vectors(T, others)  # modes (0, m)
            count(K.size)
            # leading right singular vector of K maximises ||K x_m||
            _, _, vt = np.linalg.svd(K, full_matrices=False)
            xs[m] = vt[0].copy()
        g = contract_vectors(T, {j: xs[j] for j in range(1, N)})
        new = float(np.linalg.norm(g))
        if abs(new - value) <= tol * max(new, 1.0):
            value = new
            break
        value = new
    return value, xs


def best_rank1(
    T: np.ndarray,
    restarts: int = 20,
    tol: float = 1e-10,
    max_iter: int = 500,
    seed: int = 0,
) -> tuple[float, list[np.ndarray]]:
    """Best rank-1 fit found by multi-start alternating power iteration.

    Returns ``(value, [x_2, ..., x_N])``, the largest ``||T_(1)(x_2 o ... o x_N)||``
    seen over unit vectors.  The first start uses leading singular vectors of
    each unfolding; the remaining ``restarts - 1`` starts are Gaussian.
    """
    T = np.asarray(T, dtype=np.float64)
    N = T.ndim
    if N == 1:
        return float(np.linalg.norm(T)), []
    if not np.any(T):
        return 0.0, [np.eye(T.shape[m])[0] for m in range(1, N)]
    rng = np.random.default_rng(seed)
    best, best_xs = -1.0, None
    for r in range(max(restarts, 1)):
        if r == 0:
            xs = [None] + [np.linalg.svd(matricize(T, m), full_matrices=False)[0][:, 0] for m in range(1, N)]
        else:
            xs = [None] + [_unit(rng.standard_normal(T.shape[m])) for m in range(1, N)]
        value, xs = _hopm(T, xs, tol, max_iter)
        if value > best:
            best, best_xs = value, [x.copy() for x in xs[1:]]
    return best, best_xs


def spectral_norm(T: np.ndarray, restarts: int = 20, tol: float = 1e-10, seed: int = 0, max_iter: int = 500) -> float:
    """Lower-bound estimate of the tensor spectral norm (0 for the zero tensor)."""
    return best_rank1(T, restarts=restarts, tol=tol, max_iter=max_iter, seed=seed)[0]
