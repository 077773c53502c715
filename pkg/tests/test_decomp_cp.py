import numpy as np
import pytest
from hypothesis import given, strategies as st

from tenpert import tensor_core as tc
from tenpert.decomp_cp import (
    DimensionTreeCP, KruskalModel, cp_als_run, cp_gradient, cp_residual, explicit_residual, gamma,
    init_factors, mttkrp_naive, pairwise_update_oracle, solve_normal, sweep_mttkrp_dt,
)
from tenpert.synthgen import SynthSpec, gen_random_factor
from oracles import kruskal_loop, mttkrp_loop, rel


def test_kruskal_model_validates():
    with pytest.raises(ValueError):
        KruskalModel([np.ones((2, 2)), np.ones((3, 3))])
    m = KruskalModel([np.ones((2, 1)), np.ones((3, 1))])
    assert (m.rank, m.shape, m.order) == (1, (2, 3), 2)


def test_full_matches_outer_product_loop(rng):
    m = init_factors((3, 4, 2), 3, 0)
    np.testing.assert_allclose(m.full(), kruskal_loop(m.factors), rtol=1e-13)


def test_init_is_seeded():
    a, b = init_factors((3, 3), 2, 5), init_factors((3, 3), 2, 5)
    assert all(np.array_equal(x, y) for x, y in zip(a.factors, b.factors))
    assert all(0 <= x.min() and x.max() < 1 for x in a.factors)
    with pytest.raises(ValueError):
        init_factors((3, 3), 0, 0)


def test_mttkrp_all_ones():
    m = KruskalModel([np.ones((2, 1))] * 3)
    np.testing.assert_array_equal(mttkrp_naive(np.ones((2, 2, 2)), m, 0), [[4.0], [4.0]])


def test_mttkrp_rank1_unit_factors(rng):
    vs = [v / np.linalg.norm(v) for v in (rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(2))]
    m = KruskalModel([v[:, None] for v in vs])
    X = m.full()
    for n in range(3):
        np.testing.assert_allclose(mttkrp_naive(X, m, n)[:, 0], vs[n], atol=1e-14)


def test_mttkrp_matches_loop(rng):
    X = rng.standard_normal((3, 3, 3))
    m = KruskalModel([rng.standard_normal((3, 2)) for _ in range(3)])
    for n in range(3):
        np.testing.assert_allclose(mttkrp_naive(X, m, n), mttkrp_loop(X, m.factors, n), rtol=1e-12)


def test_mttkrp_shape_mismatch(rng):
    with pytest.raises(ValueError):
        mttkrp_naive(np.zeros((2, 3)), KruskalModel([np.ones((2, 1)), np.ones((2, 1))]), 0)


def test_dt_matrix_case(rng):
    X = rng.standard_normal((4, 5))
    m = KruskalModel([rng.standard_normal((4, 3)), rng.standard_normal((5, 3))])
    M = sweep_mttkrp_dt(X, m)
    np.testing.assert_allclose(M[0], X @ m.factors[1], rtol=1e-13)
    np.testing.assert_allclose(M[1], X.T @ m.factors[0], rtol=1e-13)


@given(st.lists(st.integers(1, 5), min_size=2, max_size=5), st.integers(1, 4), st.integers(0, 2**31))
def test_dt_matches_naive(dims, R, seed):
    r = np.random.default_rng(seed)
    X = r.standard_normal(dims)
    m = KruskalModel([r.standard_normal((s, R)) for s in dims])
    for n, M in enumerate(sweep_mttkrp_dt(X, m)):
        assert rel(M, mttkrp_naive(X, m, n)) <= 1e-12


def test_dt_sweep_sees_updated_factors(rng):
    X = rng.standard_normal((3, 4, 2, 3))
    m = init_factors(X.shape, 2, 1)
    tree = DimensionTreeCP(X)
    for n, M in tree.sweep(m.factors):
        assert rel(M, mttkrp_naive(X, m, n)) <= 1e-12
        m.factors[n] = rng.standard_normal(m.factors[n].shape)


def test_dt_flops_leading_order():
    s, N, R = 16, 6, 4
    X = np.zeros((s,) * N)
    with tc.counting() as fc:
        sweep_mttkrp_dt(X, init_factors(X.shape, R, 0))
    assert 4 * s**N * R <= fc.flops <= 6 * s**N * R


def test_gamma_examples(rng):
    assert np.array_equal(gamma([np.eye(2)] * 3, 1), np.eye(2))
    assert gamma([np.array([[7.0]]), np.array([[3.0]]), np.array([[4.0]])], 0)[0, 0] == 12.0
    S = [rng.standard_normal((3, 3)) for _ in range(4)]
    loop = np.array([[S[0][i, j] * S[2][i, j] * S[3][i, j] for j in range(3)] for i in range(3)])
    np.testing.assert_allclose(gamma(S, 1), loop, rtol=1e-14)


def test_solve_normal_examples(rng):
    np.testing.assert_allclose(solve_normal(np.array([[4.0], [4.0]]), np.array([[4.0]])), [[1.0], [1.0]])
    assert not np.any(solve_normal(rng.standard_normal((3, 2)), np.zeros((2, 2))))
    B = rng.standard_normal((5, 3))
    G = B.T @ B + np.eye(3)
    M = rng.standard_normal((4, 3))
    np.testing.assert_allclose(solve_normal(M, G), np.linalg.solve(G, M.T).T, rtol=1e-10)


def test_solve_normal_singular_gamma_is_pinv(rng):
    v = rng.standard_normal((3, 1))
    G = v @ v.T
    M = rng.standard_normal((4, 3))
    np.testing.assert_allclose(solve_normal(M, G), M @ np.linalg.pinv(G), rtol=1e-8, atol=1e-12)


def test_gradient_examples(rng):
    A = rng.standard_normal((4, 3))
    G = rng.standard_normal((3, 3))
    assert not np.any(cp_gradient(A, A, G))
    B = rng.standard_normal((4, 3))
    np.testing.assert_allclose(cp_gradient(A, B, np.eye(3)), A - B)
    np.testing.assert_allclose(cp_gradient(A, B, G), (A - B) @ G, rtol=1e-14)


def test_residual_examples(rng):
    m = init_factors((3, 4, 5), 2, 0)
    X = m.full()
    assert cp_residual(X, m) <= 1e-10 * np.linalg.norm(X)
    zero = KruskalModel([np.zeros_like(A) for A in m.factors])
    assert cp_residual(X, zero) == pytest.approx(np.linalg.norm(X), rel=1e-12)
    Y = rng.standard_normal((3, 4, 5))
    assert cp_residual(Y, m) == pytest.approx(np.linalg.norm(Y - m.full()), rel=1e-10)
    assert explicit_residual(Y, m) == pytest.approx(np.linalg.norm(Y - m.full()), rel=1e-14)


def test_als_rank1_all_ones():
    _, trace = cp_als_run(np.ones((2, 2, 2)), 1, max_sweeps=5)
    assert min(trace.column("residual")) < 1e-8


def test_als_max_sweeps_zero_returns_init():
    X = np.random.default_rng(0).random((3, 3, 3))
    init = init_factors(X.shape, 2, 4)
    model, trace = cp_als_run(X, 2, max_sweeps=0, init=init)
    assert len(trace) == 0
    assert all(np.array_equal(a, b) for a, b in zip(model.factors, init.factors))


def test_als_recovers_random_factor_tensors():
    hits = 0
    for seed in range(10):
        X, _ = gen_random_factor(SynthSpec(kind="random-factor", N=3, s=10, R=3, seed=seed))
        _, trace = cp_als_run(X, 3, max_sweeps=500, seed=seed)
        hits += trace.meta["final_rel_residual"] < 1e-4
    assert hits >= 8


def test_als_trace_fields(rng):
    X = rng.random((4, 4, 4))
    _, trace = cp_als_run(X, 2, max_sweeps=7)
    assert [r.sweep for r in trace] == list(range(1, 8))
    assert set(trace.column("phase")) == {"dt"}
    flops = trace.column("flops_cum")
    assert all(a < b for a, b in zip(flops, flops[1:]))


def test_pairwise_oracle_zero_and_matrix(rng):
    X = rng.standard_normal((3, 4))
    m = init_factors(X.shape, 2, 0)
    H = pairwise_update_oracle(X, m, 0, np.zeros((3, 2)))
    assert not np.any(H[1])
    dA = rng.standard_normal((4, 2))
    np.testing.assert_allclose(pairwise_update_oracle(X, m, 1, dA)[0], X @ dA, rtol=1e-13)


def test_reinterpreted_sweep_matches_regular_sweep(rng):
    """Updating every other MTTKRP with H^(m,n) after each solve reproduces one ALS sweep."""
    X = rng.standard_normal((4, 3, 5, 3))
    start = init_factors(X.shape, 2, 3)
    N = X.ndim

    ref = start.copy()
    grams = [A.T @ A for A in ref.factors]
    for n in range(N):
        ref.factors[n] = solve_normal(mttkrp_naive(X, ref, n), gamma(grams, n))
        grams[n] = ref.factors[n].T @ ref.factors[n]

    alt = start.copy()
    grams = [A.T @ A for A in alt.factors]
    M = [mttkrp_naive(X, alt, n) for n in range(N)]
    for n in range(N):
        A_new = solve_normal(M[n], gamma(grams, n))
        H = pairwise_update_oracle(X, alt, n, A_new - alt.factors[n])
        alt.factors[n] = A_new
        grams[n] = A_new.T @ A_new
        for m, h in H.items():
            M[m] = M[m] + h
    for a, b in zip(ref.factors, alt.factors):
        assert rel(b, a) <= 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_als_residual_monotone(seed):
    X = np.random.default_rng(seed).random((5, 5, 5))
    _, trace = cp_als_run(X, 3, max_sweeps=60, seed=seed)
    res = trace.column("residual")
    slack = 1e-10 * np.linalg.norm(X)
    assert all(b <= a + slack for a, b in zip(res, res[1:]))
