import numpy as np
import pytest

from conftest import rel
from ttkalman.krp import (
    RankPolicy,
    krp_to_tt,
    numerical_rank,
    rowwise_kron,
    rowwise_kron_power,
    tt_svd_matrix,
)
from ttkalman.tt import BudgetExceededError, contract_full


def brute_power(U, d):
    # row-by-row np.kron, independent of rowwise_kron
    rows = []
    for u in np.atleast_2d(U):
        v = np.ones(1)
        for _ in range(d):
            v = np.kron(v, u)
        rows.append(v)
    return np.array(rows)


# -- rowwise_kron -----------------------------------------------------------------


def test_rowwise_kron_single_row():
    assert np.array_equal(rowwise_kron(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]])), [[3, 4, 6, 8]])


def test_rowwise_kron_identity():
    assert np.array_equal(rowwise_kron(np.eye(2), np.eye(2)), [[1, 0, 0, 0], [0, 0, 0, 1]])


def test_rowwise_kron_rows(rng):
    A = rng.standard_normal((3, 2))
    B = rng.standard_normal((3, 3))
    C = rowwise_kron(A, B)
    assert C.shape == (3, 6)
    for i in range(3):
        assert np.array_equal(C[i], np.kron(A[i], B[i]))


def test_rowwise_kron_row_mismatch():
    with pytest.raises(ValueError, match="row counts"):
        rowwise_kron(np.ones((2, 2)), np.ones((3, 2)))


# -- numerical_rank ---------------------------------------------------------------


def test_numerical_rank_examples(rng):
    assert numerical_rank([5, 3, 1e-20], RankPolicy(), (10, 10)) == 2
    for policy in (RankPolicy(), RankPolicy("rel", 0.5), RankPolicy("cap", 3)):
        assert numerical_rank([7.0], policy) == 1
    X = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 6))
    assert numerical_rank(np.linalg.svd(X, compute_uv=False), RankPolicy(), X.shape) == 2


def test_numerical_rank_policies():
    s = [10.0, 1.0, 1e-3, 1e-9]
    assert numerical_rank(s, RankPolicy("rel", 1e-2)) == 2
    assert numerical_rank(s, RankPolicy("rel", 1e-6)) == 3
    assert numerical_rank(s, RankPolicy("cap", 2)) == 2
    assert numerical_rank([0.0, 0.0]) == 1


def test_numerical_rank_empty():
    with pytest.raises(ValueError):
        numerical_rank([])


def test_rank_policy_parse_and_validation():
    assert RankPolicy.parse("eps") == RankPolicy()
    assert RankPolicy.parse("rel:1e-8") == RankPolicy("rel", 1e-8)
    assert RankPolicy.parse("cap:12") == RankPolicy("cap", 12.0)
    assert str(RankPolicy.parse("rel:1e-08")) == "rel:1e-08"
    for text in ("rel", "rel:x", "rel:0", "rel:-1", "foo:1", "cap:0"):
        with pytest.raises(ValueError):
            RankPolicy.parse(text)


# -- krp_to_tt ----------------------------------------------------------------------


def test_single_row_case():
    net = krp_to_tt(np.array([[1.0, 2.0]]), 2)
    assert net.ranks == [1, 1, 1]
    assert np.allclose(contract_full(net)[0, 0], [1, 2, 2, 4], rtol=0, atol=1e-15)


def test_identity_rows():
    net = krp_to_tt(np.eye(2), 2)
    assert net.ranks[1] == 2
    assert np.allclose(contract_full(net)[0], [[1, 0, 0, 0], [0, 0, 0, 1]], atol=1e-15)


def test_random_4x3_cubed(rng):
    U = rng.standard_normal((4, 3))
    net = krp_to_tt(U, 3)
    assert contract_full(net)[0].shape == (4, 27)
    assert rel(contract_full(net)[0], brute_power(U, 3)) <= 1e-12


def test_core_shapes(rng):
    U = rng.standard_normal((5, 3))
    net = krp_to_tt(U, 4)
    r = net.ranks
    assert net.cores[0].shape == (1, 5, 3, r[1])
    for k in range(1, 4):
        assert net.cores[k].shape == (r[k], 1, 3, r[k + 1])


def test_rank_bounds(rng):
    # core 0 also carries the m rows, so the left unfolding at bond k has
    # m * n^k rows and the right one n^(d-k) columns
    for m, n, d in [(8, 2, 5), (3, 4, 4), (20, 3, 4), (6, 6, 3)]:
        net = krp_to_tt(rng.standard_normal((m, n)), d)
        for k in range(1, d):
            assert net.ranks[k] <= min(m, m * n ** k, n ** (d - k))


def test_first_rank_can_exceed_mode_size(rng):
    # 8 rows, n=2, d=5: the bond after core 0 has rank 5 > n; TT-SVD agrees,
    # so this is the true rank of the (m n) x n^(d-1) unfolding
    U = rng.standard_normal((8, 2))
    net = krp_to_tt(U, 5)
    assert net.ranks[1] > 2
    assert net.ranks == tt_svd_matrix(brute_power(U, 5), 2, 5).ranks


def test_orientation_later_cores_carry_singular_values(rng):
    # U becomes the next iterate; S V^T is stored, so later cores are not orthonormal
    # while the transposed unfoldings of core 0 together with core 1's left factor are
    U = rng.standard_normal((4, 3))
    net = krp_to_tt(U, 2)
    c1 = net.cores[1].reshape(net.ranks[1], -1)
    gram = c1 @ c1.T
    assert np.allclose(gram, np.diag(np.diag(gram)), atol=1e-12)
    assert np.all(np.diff(np.diag(gram)) <= 1e-12)
    c0 = net.cores[0].reshape(4 * 3, -1)
    assert np.allclose(c0.T @ c0, np.eye(net.ranks[1]), atol=1e-12)


def test_distinct_factors(rng):
    Fs = [rng.standard_normal((4, n)) for n in (2, 3, 2)]
    net = krp_to_tt(Fs)
    assert net.in_dims == [2, 3, 2]
    assert rel(contract_full(net)[0], rowwise_kron(rowwise_kron(Fs[0], Fs[1]), Fs[2])) <= 1e-12


def test_d_one(rng):
    U = rng.standard_normal((3, 4))
    net = krp_to_tt(U, 1)
    assert net.ranks == [1, 1]
    assert np.array_equal(contract_full(net)[0], U)


def test_structured_svd_agrees(rng):
    U = rng.standard_normal((6, 3))
    a = krp_to_tt(U, 4, svd="dense")
    b = krp_to_tt(U, 4, svd="structured")
    assert a.ranks == b.ranks
    assert rel(contract_full(b)[0], brute_power(U, 4)) <= 1e-12


def test_degenerate_inputs():
    z = krp_to_tt(np.zeros((3, 2)), 3)
    assert z.ranks == [1, 1, 1, 1]
    assert not np.any(contract_full(z))
    e = krp_to_tt(np.zeros((0, 2)), 2)
    assert e.ranks == [1, 1, 1]
    assert not np.any(contract_full(e))


def test_argument_errors(rng):
    U = rng.standard_normal((2, 2))
    for d in (0, -1, 1.5):
        with pytest.raises(ValueError):
            krp_to_tt(U, d)
    with pytest.raises(ValueError, match="non-finite"):
        krp_to_tt(np.array([[1.0, np.inf]]), 2)
    with pytest.raises(ValueError):
        krp_to_tt(U)
    with pytest.raises(ValueError):
        krp_to_tt(U, 2, svd="random")


def test_truncating_policy_reduces_ranks(rng):
    U = rng.standard_normal((30, 3))
    exact = krp_to_tt(U, 4)
    capped = krp_to_tt(U, 4, RankPolicy("cap", 2))
    assert max(capped.ranks) <= 2 < max(exact.ranks)


# -- TT-SVD baseline --------------------------------------------------------------


def test_ttsvd_rank_one_row():
    net = tt_svd_matrix(np.array([[1.0, 2.0, 2.0, 4.0]]), 2, 2)
    assert net.ranks == [1, 1, 1]
    assert rel(contract_full(net)[0], [[1, 2, 2, 4]]) <= 1e-15


def test_ttsvd_matches_krp(rng):
    for m, n, d in [(3, 2, 2), (4, 3, 3), (5, 2, 4), (2, 3, 5)]:
        U = rng.standard_normal((m, n))
        C = brute_power(U, d)
        a = tt_svd_matrix(C, n, d)
        b = krp_to_tt(U, d)
        assert a.ranks == b.ranks
        assert rel(contract_full(a)[0], C) <= 1e-12
        assert rel(contract_full(a)[0], contract_full(b)[0]) <= 1e-11


def test_ttsvd_zero():
    net = tt_svd_matrix(np.zeros((2, 8)), 2, 3)
    assert net.ranks == [1, 1, 1, 1]
    assert not np.any(contract_full(net))


def test_ttsvd_budget_and_shape():
    with pytest.raises(BudgetExceededError):
        tt_svd_matrix(np.zeros((10, 100)), 10, 2, max_elements=100)
    with pytest.raises(ValueError):
        tt_svd_matrix(np.zeros((2, 7)), 2, 3)


def test_rowwise_kron_power_matches_brute(rng):
    U = rng.standard_normal((3, 2))
    assert np.array_equal(rowwise_kron_power([U] * 3), brute_power(U, 3))
