"""Index-loop reference implementations, deliberately slow and independent of the package kernels."""
import itertools

import numpy as np


def kolda_column(index, dims, n):
    col, stride = 0, 1
    for k, (i, s) in enumerate(zip(index, dims)):
        if k == n:
            continue
        col += i * stride
        stride *= s
    return col


def matricize_loop(T, n):
    dims = T.shape
    out = np.zeros((dims[n], T.size // dims[n]))
    for idx in itertools.product(*map(range, dims)):
        out[idx[n], kolda_column(idx, dims, n)] = T[idx]
    return out


def mode_product_loop(T, M, n):
    dims = list(T.shape)
    dims[n] = M.shape[0]
    out = np.zeros(dims)
    for idx in itertools.product(*map(range, dims)):
        acc = 0.0
        for j in range(T.shape[n]):
            src = list(idx)
            src[n] = j
            acc += M[idx[n], j] * T[tuple(src)]
        out[idx] = acc
    return out


def mttkrp_loop(X, factors, n):
    R = factors[0].shape[1]
    out = np.zeros((X.shape[n], R))
    for idx in itertools.product(*map(range, X.shape)):
        for k in range(R):
            w = X[idx]
            for m, A in enumerate(factors):
                if m != n:
                    w *= A[idx[m], k]
            out[idx[n], k] += w
    return out


def ttmc_loop(X, factors, n):
    """Contract every mode but ``n`` with the factor transposes, entry by entry."""
    out = X
    for m in reversed(range(X.ndim)):
        if m != n:
            out = mode_product_loop(out, factors[m].T, m)
    return out


def kruskal_loop(factors):
    shape = tuple(A.shape[0] for A in factors)
    R = factors[0].shape[1]
    out = np.zeros(shape)
    for idx in itertools.product(*map(range, shape)):
        for k in range(R):
            v = 1.0
            for m, A in enumerate(factors):
                v *= A[idx[m], k]
            out[idx] += v
    return out


def pair_operator_loop(X, factors, i, n):
    """``M^(i,n)(x, y, k)``: every mode except ``i`` and ``n`` contracted with its factor column."""
    R = factors[0].shape[1]
    out = np.zeros((X.shape[i], X.shape[n], R))
    for idx in itertools.product(*map(range, X.shape)):
        for k in range(R):
            w = X[idx]
            for m, A in enumerate(factors):
                if m not in (i, n):
                    w *= A[idx[m], k]
            out[idx[i], idx[n], k] += w
    return out


def rel(a, b):
    nb = np.linalg.norm(b)
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / (nb if nb > 0 else 1.0)
