import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tenpert import tensor_core as tc
from tenpert.decomp_tucker import (
    DimensionTreeTucker, TuckerModel, fix_signs, hosvd, leading_left_singvecs, sweep_ttmc_dt,
    ttmc_naive, tucker_als_run, tucker_residual,
)
from oracles import rel, ttmc_loop


def orthonormal(rng, s, r):
    return np.linalg.qr(rng.standard_normal((s, r)))[0]


def exact_tucker(rng, dims, ranks):
    G = rng.standard_normal(ranks)
    return TuckerModel(G, [orthonormal(rng, s, r) for s, r in zip(dims, ranks)])


def test_model_validates(rng):
    with pytest.raises(ValueError):
        TuckerModel(np.zeros((2, 2)), [np.eye(3)[:, :2], np.eye(3)[:, :3]])
    m = exact_tucker(rng, (4, 5, 3), (2, 2, 1))
    assert m.ranks == (2, 2, 1) and m.shape == (4, 5, 3)
    assert m.orthonormality_error() < 1e-12


def test_ttmc_identity_factors(rng):
    X = rng.standard_normal((3, 4, 2))
    m = TuckerModel(X, [np.eye(s) for s in X.shape])
    for n in range(3):
        np.testing.assert_array_equal(ttmc_naive(X, m, n), X)
        np.testing.assert_allclose(sweep_ttmc_dt(X, m)[n], X, rtol=0, atol=0)


def test_ttmc_matrix_case(rng):
    X = rng.standard_normal((4, 5))
    m = exact_tucker(rng, (4, 5), (2, 3))
    np.testing.assert_allclose(ttmc_naive(X, m, 0), X @ m.factors[1], rtol=1e-13)


def test_ttmc_matches_loop(rng):
    X = rng.standard_normal((3, 3, 3))
    m = exact_tucker(rng, (3, 3, 3), (2, 2, 2))
    for n in range(3):
        np.testing.assert_allclose(ttmc_naive(X, m, n), ttmc_loop(X, m.factors, n), rtol=1e-12)


@given(st.lists(st.integers(1, 5), min_size=2, max_size=5), st.integers(0, 2**31), st.data())
def test_dt_matches_naive(dims, seed, data):
    r = np.random.default_rng(seed)
    ranks = [data.draw(st.integers(1, s)) for s in dims]
    X = r.standard_normal(dims)
    m = exact_tucker(r, dims, ranks)
    for n, Y in enumerate(sweep_ttmc_dt(X, m)):
        assert rel(Y, ttmc_naive(X, m, n)) <= 1e-12


def test_dt_flops_leading_order():
    s, N, R = 16, 6, 2
    X = np.zeros((s,) * N)
    m = TuckerModel(np.zeros((R,) * N), [np.eye(s)[:, :R]] * N)
    with tc.counting() as fc:
        sweep_ttmc_dt(X, m)
    assert 4 * s**N * R <= fc.flops <= 6 * s**N * R


def test_singvecs_diagonal():
    Y = np.diag([3.0, 1.0])
    np.testing.assert_array_equal(leading_left_singvecs(Y, 0, 1), [[1.0], [0.0]])
    with pytest.raises(ValueError):
        leading_left_singvecs(Y, 0, 3)


def test_singvecs_span_matches_svd(rng):
    Y = rng.standard_normal((6, 3, 4))
    U = leading_left_singvecs(Y, 0, 3)
    V = np.linalg.svd(tc.matricize(Y, 0))[0][:, :3]
    np.testing.assert_allclose(U @ U.T, V @ V.T, atol=1e-10)
    assert np.linalg.norm(U.T @ U - np.eye(3)) < 1e-12


def test_singvecs_full_rank_projector(rng):
    Y = rng.standard_normal((4, 5, 2))
    U = leading_left_singvecs(Y, 0, 4)
    np.testing.assert_allclose(U @ U.T, np.eye(4), atol=1e-12)


def test_sign_convention():
    U = fix_signs(np.array([[0.1, -0.8], [-0.9, 0.2]]))
    assert U[1, 0] > 0 and U[0, 1] > 0


def test_hosvd_superdiagonal():
    X = np.zeros((2, 2, 2))
    X[0, 0, 0], X[1, 1, 1] = 3.0, 1.0
    for interlaced in (True, False):
        m = hosvd(X, (1, 1, 1), interlaced)
        for A in m.factors:
            np.testing.assert_allclose(A, [[1.0], [0.0]], atol=1e-14)
        assert m.core.item() == pytest.approx(3.0)


@pytest.mark.parametrize("interlaced", [True, False])
def test_hosvd_full_rank_exact(rng, interlaced):
    X = rng.standard_normal((3, 4, 2))
    m = hosvd(X, X.shape, interlaced)
    assert np.linalg.norm(X - m.full()) <= 1e-10 * np.linalg.norm(X)


def test_hosvd_rejects_large_rank(rng):
    with pytest.raises(ValueError):
        hosvd(rng.standard_normal((3, 3)), (4, 1))


def test_interlaced_step_norm_bound(rng):
    X = rng.standard_normal((4, 4, 4))
    R, s = 2, 4
    Z = X
    for n in range(3):
        A = leading_left_singvecs(Z, n, R)
        Znext = tc.mode_product(Z, A.T, n)
        assert np.linalg.norm(Znext) >= math.sqrt(R / s) * np.linalg.norm(Z) * (1 - 1e-12)
        Z = Znext


def test_als_exact_tucker_input(rng):
    m = exact_tucker(rng, (6, 5, 7), (2, 3, 2))
    X = m.full()
    _, trace = tucker_als_run(X, m.ranks, max_sweeps=3)
    assert trace.meta["final_residual"] < 1e-8
    assert len([r for r in trace if r.phase == "dt"]) <= 3


def test_als_full_rank_converges_at_init(rng):
    X = rng.standard_normal((3, 3, 2))
    _, trace = tucker_als_run(X, X.shape)
    assert trace.records[0].phase == "hosvd"
    assert trace.converged and len(trace) == 2  # init record plus one confirming sweep


def test_als_max_sweeps_zero_is_hosvd(rng):
    X = rng.standard_normal((4, 4, 4))
    model, trace = tucker_als_run(X, (2, 2, 2), max_sweeps=0)
    ref = hosvd(X, (2, 2, 2))
    np.testing.assert_array_equal(model.core, ref.core)
    assert [r.phase for r in trace] == ["hosvd"]


def test_core_norm_monotone_and_residual_identity(rng):
    X = rng.standard_normal((6, 6, 6))
    model, trace = tucker_als_run(X, (2, 3, 2), max_sweeps=30, tol=0)
    norms = trace.column("core_norm")
    assert all(b >= a * (1 - 1e-10) for a, b in zip(norms, norms[1:]))
    direct = np.linalg.norm(X - model.full()) ** 2
    ident = np.linalg.norm(X) ** 2 - np.linalg.norm(model.core) ** 2
    assert ident == pytest.approx(direct, rel=1e-9)
    assert tucker_residual(np.linalg.norm(X) ** 2, model.core) == pytest.approx(math.sqrt(direct), rel=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_orthonormal_product_keeps_spectral_norm(seed):
    r = np.random.default_rng(seed)
    G = r.standard_normal((3, 3, 3))
    M = orthonormal(r, 5, 3)
    a = tc.spectral_norm(tc.mode_product(G, M, 1))
    assert a == pytest.approx(tc.spectral_norm(G), rel=1e-8)


def test_tree_cache_keys(rng):
    X = rng.standard_normal((3, 3, 3, 3))
    m = exact_tucker(rng, X.shape, (2, 2, 2, 2))
    tree = DimensionTreeTucker(X)
    seen = []
    for n, _ in tree.sweep(m.factors):
        seen.append(sorted(tree.cache))
    assert seen[0] == [(0,), (0, 1)]
