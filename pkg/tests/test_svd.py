import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from itercur.exceptions import DimensionError, SizeCapError
from itercur.matcore import LinearOperator, aslinearoperator, make_rng
from itercur.svd import (
    SvdConfig,
    dense_svd,
    krylov_schur_restart,
    lanczos_expand,
    spectral_norm,
    start_bidiag,
    svds,
    wedin_gap_stop,
)

from oracles import gram_singular_values


def _identity_residuals(A, st_):
    """Residuals of the two decomposition identities."""
    d = st_.dim
    V = st_.V[:, :d]
    fwd = A @ V - st_.U @ st_.B
    adj = A.T @ st_.U - V @ st_.B.T - st_.beta * np.outer(st_.V[:, d], st_.f)
    return np.abs(fwd).max(), np.abs(adj).max()


def _padded_diag(values, m, n):
    A = np.zeros((m, n))
    A[np.arange(len(values)), np.arange(len(values))] = values
    return A


class TestDenseSvd:
    def test_diagonal(self):
        res = dense_svd(np.diag([3.0, 2.0, 1.0]))
        assert_allclose(res.S, [3, 2, 1])
        assert_allclose(np.abs(res.U), np.eye(3), atol=1e-15)
        assert_allclose(np.abs(res.V), np.eye(3), atol=1e-15)

    def test_rank_one(self):
        rng = np.random.default_rng(0)
        u = rng.standard_normal(7)
        v = rng.standard_normal(4)
        A = 5.0 * np.outer(u / np.linalg.norm(u), v / np.linalg.norm(v))
        S = dense_svd(A).S
        assert S[0] == pytest.approx(5.0, rel=1e-14)
        assert np.all(S[1:] <= 1e-12)

    def test_gram_oracle(self):
        A = np.random.default_rng(2).standard_normal((30, 20))
        S = dense_svd(A).S
        assert_allclose(S, gram_singular_values(A), rtol=1e-8)
        # frozen from the Gram oracle
        assert_allclose(S[:3], [9.0968934, 8.58974514, 7.63750283], rtol=1e-8)

    def test_reconstruction_and_signs(self):
        A = np.random.default_rng(3).standard_normal((25, 12))
        res = dense_svd(A)
        assert np.linalg.norm(A - (res.U * res.S) @ res.V.T) <= 1e-10 * np.linalg.norm(A)
        lead = res.V[np.argmax(np.abs(res.V), axis=0), np.arange(res.V.shape[1])]
        assert np.all(lead > 0)

    def test_size_cap(self):
        with pytest.raises(SizeCapError):
            dense_svd(np.ones((20, 20)), size_cap=100)


class TestLanczos:
    def test_two_by_two(self):
        op = aslinearoperator(np.diag([2.0, 1.0]))
        st_ = lanczos_expand(op, start_bidiag(op, np.array([1.0, 1.0])), 2)
        assert_allclose(np.linalg.svd(st_.B, compute_uv=False), [2, 1], atol=1e-12)

    def test_orthogonality_and_identities(self):
        A = np.random.default_rng(4).standard_normal((50, 40))
        op = aslinearoperator(A)
        st_ = lanczos_expand(op, start_bidiag(op, np.ones(40)), 15)
        sigma1 = np.linalg.norm(A, 2)
        assert np.abs(st_.U.T @ st_.U - np.eye(15)).max() <= 1e-10
        assert np.abs(st_.V.T @ st_.V - np.eye(16)).max() <= 1e-10
        fwd, adj = _identity_residuals(A, st_)
        assert fwd <= 1e-8 * sigma1 and adj <= 1e-8 * sigma1

    def test_exhausted_on_low_rank(self):
        rng = np.random.default_rng(5)
        A = rng.standard_normal((12, 3)) @ rng.standard_normal((3, 8))
        op = aslinearoperator(A)
        st_ = lanczos_expand(op, start_bidiag(op, np.ones(8)), 8, make_rng(0))
        # the recurrence breaks down after 3 steps and continues on fresh vectors
        assert np.abs(st_.V[:, :8].T @ st_.V[:, :8] - np.eye(8)).max() <= 1e-10
        assert st_.exhausted
        assert_allclose(np.sort(np.linalg.svd(st_.B, compute_uv=False))[::-1][:3],
                        np.linalg.svd(A, compute_uv=False)[:3], rtol=1e-10)

    def test_rejects_bad_dimension(self):
        op = aslinearoperator(np.eye(3))
        with pytest.raises(DimensionError):
            lanczos_expand(op, start_bidiag(op, np.ones(3)), 4)


class TestRestart:
    def test_diag_cycle(self):
        A = np.diag([5.0, 4.0, 3.0, 2.0, 1.0])
        op = aslinearoperator(A)
        st_ = lanczos_expand(op, start_bidiag(op, np.ones(5)), 4)
        pre = max(_identity_residuals(A, st_))
        W = np.linalg.svd(st_.B)[0]
        out = krylov_schur_restart(st_, 2)
        kept = np.diag(out.B)
        assert np.count_nonzero(out.B - np.diag(kept)) == 0
        # kept Ritz values dominate the discarded ones and approximate (5, 4)
        assert kept[1] >= out.ritz[2]
        assert np.all(kept <= [5.0, 4.0] + np.array([1e-12, 1e-12]) * 5)
        assert kept[0] > 4.0
        # f is the last row of W restricted to the kept columns
        assert_allclose(np.abs(out.f), np.abs(W[-1, :2]), atol=1e-14)
        post = max(_identity_residuals(A, out))
        assert post <= pre + 1e-12 * 5.0

    def test_identities_through_cycles(self):
        A = np.random.default_rng(6).standard_normal((60, 45))
        op = aslinearoperator(A)
        st_ = start_bidiag(op, np.ones(45))
        sigma1 = np.linalg.norm(A, 2)
        for _ in range(4):
            st_ = lanczos_expand(op, st_, 12)
            st_ = krylov_schur_restart(st_, 4)
            fwd, adj = _identity_residuals(A, st_)
            assert fwd <= 1e-8 * sigma1 and adj <= 1e-8 * sigma1


class TestSvds:
    def test_padded_diagonal(self):
        A = _padded_diag([5.0, 4.0, 3.0, 2.0, 1.0], 100, 50)
        res = svds(A, SvdConfig(k=2, rtol=1e-12))
        assert_allclose(res.S, [5, 4], rtol=1e-10)
        assert res.converged.all()

    def test_rank_one_operator(self):
        rng = np.random.default_rng(7)
        u = rng.standard_normal(30)
        u /= np.linalg.norm(u)
        v = rng.standard_normal(20)
        v /= np.linalg.norm(v)
        op = LinearOperator((30, 20), lambda x: 3.0 * u * (v @ x), lambda y: 3.0 * v * (u @ y))
        res = svds(op, SvdConfig(k=1))
        assert res.S[0] == pytest.approx(3.0, rel=1e-12)
        assert abs(abs(res.U[:, 0] @ u) - 1) <= 1e-10
        assert abs(abs(res.V[:, 0] @ v) - 1) <= 1e-10

    def test_matches_dense(self):
        A = np.random.default_rng(8).standard_normal((300, 200))
        res = svds(A, SvdConfig(k=10, rtol=1e-10))
        assert_allclose(res.S, dense_svd(A).S[:10], rtol=1e-8)

    def test_residual_bounds_and_orthonormality(self):
        A = np.random.default_rng(9).standard_normal((120, 80))
        cfg = SvdConfig(k=6, rtol=1e-10)
        res = svds(A, cfg)
        tol = cfg.rtol * res.S[0]
        for i in np.flatnonzero(res.converged):
            u, s, v = res.U[:, i], res.S[i], res.V[:, i]
            assert np.linalg.norm(A @ v - s * u) <= 10 * tol
            assert np.linalg.norm(A.T @ u - s * v) <= 10 * tol + res.residual_norm
        assert np.abs(res.U.T @ res.U - np.eye(6)).max() <= 1e-10
        assert np.abs(res.V.T @ res.V - np.eye(6)).max() <= 1e-10
        assert np.all(np.diff(res.S) <= 0)

    def test_ritz_values_nondecreasing(self):
        A = np.random.default_rng(10).standard_normal((200, 150))
        res = svds(A, SvdConfig(k=5, kmax=12, rtol=1e-12))
        hist = np.array(res.ritz_history)
        assert hist.shape[0] > 2
        assert np.all(np.diff(hist, axis=0) >= -1e-12 * hist[-1, 0])

    def test_operator_only_access(self):
        A = np.random.default_rng(11).standard_normal((90, 70))
        calls = {"fwd": 0, "adj": 0}

        def fwd(x):
            calls["fwd"] += 1
            return A @ x

        def adj(y):
            calls["adj"] += 1
            return A.T @ y

        res = svds(LinearOperator(A.shape, fwd, adj), SvdConfig(k=4))
        assert calls["fwd"] + calls["adj"] == res.matvec_count > 0
        assert_allclose(res.S, np.linalg.svd(A, compute_uv=False)[:4], rtol=1e-8)

    def test_nonconvergence_reported(self):
        A = np.random.default_rng(12).standard_normal((200, 150))
        res = svds(A, SvdConfig(k=5, kmax=7, rtol=1e-14, max_restarts=1))
        assert not res.converged.all()
        assert res.restarts == 1

    def test_decay_gating(self):
        A = _padded_diag([10.0, 9.5, 9.0, 3.0, 2.0, 1.0, 0.5], 40, 30)
        res = svds(A, SvdConfig(k=5, delta=0.8, ell=5, rtol=1e-12))
        assert_allclose(res.S, [10.0, 9.5, 9.0], rtol=1e-10)
        capped = svds(A, SvdConfig(k=5, delta=0.8, ell=2, rtol=1e-12))
        assert capped.rank == 2

    def test_delta_one_single_triplet(self):
        A = np.random.default_rng(13).standard_normal((50, 40))
        res = svds(A, SvdConfig(k=3, delta=1.0, ell=3))
        assert res.rank == 1

    def test_dense_fallback_when_space_is_small(self):
        A = np.random.default_rng(14).standard_normal((8, 5))
        res = svds(A, SvdConfig(k=5))
        assert_allclose(res.S, np.linalg.svd(A, compute_uv=False), rtol=1e-12)

    def test_rejects_too_many(self):
        with pytest.raises(DimensionError):
            svds(np.eye(3), SvdConfig(k=4))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 4))
    def test_property_agrees_with_dense(self, seed, k):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((40, 30))
        S = np.linalg.svd(A, compute_uv=False)
        res = svds(A, SvdConfig(k=k, rtol=1e-12))
        if S[k - 1] / S[k] > 1 + 1e-6:
            assert_allclose(res.S, S[:k], rtol=1e-8)

    def test_spectral_norm(self):
        A = np.random.default_rng(15).standard_normal((70, 40))
        assert spectral_norm(A) == pytest.approx(np.linalg.norm(A, 2), rel=1e-10)
        assert spectral_norm(np.ones((1, 4))) == pytest.approx(2.0)


class TestWedin:
    def test_exact_vector(self):
        assert wedin_gap_stop(np.array([0.1, 0.9, 0.3]), 2.0, 1.0, 0.0)

    def test_tie(self):
        assert not wedin_gap_stop(np.array([0.5, -0.5, 0.1]), 2.0, 1.0, 1e-14)

    def test_threshold(self):
        v = np.array([0.8, 0.6])
        # gap 0.2 > 2 * f / (s1 - s2) iff f < 0.1 * (s1 - s2)
        assert wedin_gap_stop(v, 3.0, 2.0, 0.099)
        assert not wedin_gap_stop(v, 3.0, 2.0, 0.101)

    def test_equal_ritz_values(self):
        assert not wedin_gap_stop(np.array([1.0, 0.0]), 1.0, 1.0, 0.0)

    def test_early_stop_picks_converged_index(self):
        A = np.random.default_rng(16).standard_normal((60, 40))
        early = svds(A, SvdConfig(k=1, kmax=4, delta=1.0, ell=1, wedin=True, rtol=1e-14))
        full = svds(A, SvdConfig(k=1, kmax=4, rtol=1e-14))
        assert early.early_stop
        assert early.matvec_count < full.matvec_count
        v1 = dense_svd(A).V[:, 0]
        assert np.argmax(np.abs(early.V[:, 0])) == np.argmax(np.abs(v1))
        assert_array_equal(np.argmax(np.abs(full.V[:, 0])), np.argmax(np.abs(v1)))
