import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from itercur.exceptions import DimensionError, MatrixMarketError, SizeCapError
from itercur.matcore import (
    LinearOperator,
    as_matrix,
    aslinearoperator,
    make_rng,
    matvec,
    normalize_rows,
    read_matrix_market,
    synth_sparse,
    to_dense,
    transpose,
    write_matrix_market,
)


def _write(tmp_path, text, name="m.mtx"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestMatrixMarket:
    def test_coordinate_identity(self, tmp_path):
        path = _write(tmp_path, "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n2 2 1.0\n")
        A = read_matrix_market(path)
        assert sp.issparse(A)
        assert_array_equal(A.toarray(), np.eye(2))

    def test_array_column(self, tmp_path):
        path = _write(tmp_path, "%%MatrixMarket matrix array real general\n2 1\n3.0\n4.0\n")
        A = read_matrix_market(path)
        assert not sp.issparse(A)
        assert_array_equal(A, [[3.0], [4.0]])

    def test_symmetric_expanded(self, tmp_path):
        text = "%%MatrixMarket matrix coordinate real symmetric\n3 3 2\n1 1 2.0\n3 1 5.0\n"
        A = read_matrix_market(_write(tmp_path, text)).toarray()
        assert_array_equal(A, [[2.0, 0, 5.0], [0, 0, 0], [5.0, 0, 0]])

    def test_integer_field(self, tmp_path):
        text = "%%MatrixMarket matrix coordinate integer general\n1 2 1\n1 2 7\n"
        assert_array_equal(read_matrix_market(_write(tmp_path, text)).toarray(), [[0.0, 7.0]])

    @pytest.mark.parametrize("field", ["complex", "pattern"])
    def test_unsupported_field(self, tmp_path, field):
        text = f"%%MatrixMarket matrix coordinate {field} general\n1 1 1\n1 1 1 0\n"
        with pytest.raises(MatrixMarketError, match=field):
            read_matrix_market(_write(tmp_path, text))

    def test_missing_banner(self, tmp_path):
        with pytest.raises(MatrixMarketError, match="line 1"):
            read_matrix_market(_write(tmp_path, "2 2 1\n1 1 1.0\n"))

    def test_bad_entry_names_line(self, tmp_path):
        text = "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\nx 2 1.0\n"
        with pytest.raises(MatrixMarketError, match="[Ll]ine"):
            read_matrix_market(_write(tmp_path, text))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_matrix_market(tmp_path / "absent.mtx")

    @pytest.mark.parametrize("dense", [False, True])
    def test_round_trip(self, tmp_path, dense):
        A = synth_sparse(40, 25, 0.2, seed=3)
        if dense:
            A = A.toarray()
        path = tmp_path / "rt.mtx"
        write_matrix_market(path, A)
        B = read_matrix_market(path)
        B = B.toarray() if sp.issparse(B) else B
        ref = A if dense else A.toarray()
        assert B.shape == ref.shape
        assert_array_equal(B != 0, ref != 0)
        assert_array_equal(B, ref)


class TestNormalizeRows:
    def test_three_four_five(self):
        assert_allclose(normalize_rows(np.array([[3.0, 4.0]])), [[0.6, 0.8]])

    def test_zero_row_kept(self):
        out = normalize_rows(np.array([[0.0, 0.0], [1.0, 0.0]]))
        assert_array_equal(out, [[0.0, 0.0], [1.0, 0.0]])

    def test_random_row_norms(self):
        A = np.random.default_rng(0).standard_normal((5, 3))
        A[2] = 0.0
        norms = np.linalg.norm(normalize_rows(A), axis=1)
        assert np.all((np.abs(norms - 1) <= 1e-14) | (norms == 0))

    def test_sparse_pattern_preserved(self):
        A = synth_sparse(30, 20, 0.1, seed=1)
        out = normalize_rows(A)
        assert_array_equal(out.indices, A.indices)
        assert_array_equal(out.indptr, A.indptr)
        norms = np.sqrt(np.asarray(out.multiply(out).sum(axis=1)).ravel())
        assert np.all((np.abs(norms - 1) <= 1e-14) | (norms == 0))


class TestSynthSparse:
    def test_deterministic(self):
        A = synth_sparse(200, 50, seed=9)
        B = synth_sparse(200, 50, seed=9)
        assert_array_equal(A.indptr, B.indptr)
        assert_array_equal(A.indices, B.indices)
        assert_array_equal(A.data, B.data)

    def test_seed_changes_matrix(self):
        assert (synth_sparse(100, 30, seed=1) != synth_sparse(100, 30, seed=2)).nnz > 0

    def test_nonnegative(self):
        assert synth_sparse(500, 60, seed=4).data.min() >= 0.0

    def test_single_term_rank_one(self):
        A = synth_sparse(2, 2, density=1.0, seed=0, terms=1).toarray()
        assert np.linalg.matrix_rank(A) == 1
        # 2 x_1 y_1^T with both factors dense and positive
        assert np.all(A > 0)

    def test_single_term_scale(self):
        # 2 x y^T with x, y uniform on [0, 1): every entry lies in [0, 2)
        A = synth_sparse(6, 5, density=1.0, seed=3, terms=1).toarray()
        assert A.min() >= 0.0 and A.max() < 2.0
        u, sv, vt = np.linalg.svd(A)
        assert sv[1] <= 1e-12 * sv[0]

    def test_expected_fill(self):
        m, n, d = 1000, 40, 0.025
        A = synth_sparse(m, n, d, seed=2)
        assert A.nnz <= m * n
        # each term touches round(d*m) rows and round(d*n) = 1 column
        assert A.nnz <= n * round(d * m) * max(1, round(d * n))

    @pytest.mark.parametrize("args", [(0, 5, 0.1), (5, 0, 0.1), (5, 5, 0.0), (5, 5, 1.5)])
    def test_bad_arguments(self, args):
        with pytest.raises(ValueError):
            synth_sparse(*args)


class TestMatvec:
    def test_identity(self):
        assert_array_equal(matvec(np.eye(3), np.array([1.0, 2.0, 3.0])), [1, 2, 3])

    def test_hand_arithmetic(self):
        assert_array_equal(matvec(np.array([[1.0, 2.0], [3.0, 4.0]]), np.ones(2)), [3, 7])

    def test_transpose(self):
        assert_array_equal(matvec(np.array([[1.0, 2.0], [3.0, 4.0]]), np.ones(2), transpose=True), [4, 6])

    def test_sparse_normal_product(self):
        rng = np.random.default_rng(1)
        A = sp.random_array((100, 80), density=0.1, random_state=rng, format="csr")
        x = rng.standard_normal(80)
        got = matvec(A, matvec(A, x), transpose=True)
        D = A.toarray()
        assert_allclose(got, D.T @ (D @ x), rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            matvec(np.eye(3), np.ones(2))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(-5, 5), st.floats(-5, 5))
    def test_linearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((7, 5))
        x, y = rng.standard_normal(5), rng.standard_normal(5)
        lhs = matvec(A, a * x + b * y)
        rhs = a * matvec(A, x) + b * matvec(A, y)
        assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * (1 + abs(a) + abs(b)) * np.abs(A).sum())


class TestLinearOperator:
    @pytest.mark.parametrize("sparse", [False, True])
    def test_adjoint_consistency(self, sparse):
        rng = np.random.default_rng(2)
        A = rng.standard_normal((30, 20))
        if sparse:
            A = sp.csr_array(A * (rng.random((30, 20)) < 0.3))
        op = aslinearoperator(A)
        for _ in range(10):
            x, y = rng.standard_normal(20), rng.standard_normal(30)
            gap = abs(op.matvec(x) @ y - x @ op.rmatvec(y))
            assert gap <= 1e-10 * np.linalg.norm(x) * np.linalg.norm(y) * op.norm_estimate

    def test_bitwise_repeatable(self):
        A = synth_sparse(60, 30, 0.2, seed=3)
        op = aslinearoperator(A)
        x = np.random.default_rng(0).standard_normal(30)
        assert_array_equal(op.matvec(x), op.matvec(x))

    def test_counters_and_transpose(self):
        op = aslinearoperator(np.arange(6.0).reshape(2, 3))
        op.matvec(np.ones(3))
        op.rmatvec(np.ones(2))
        op.rmatvec(np.ones(2))
        assert (op.n_matvec, op.n_rmatvec, op.count) == (1, 2, 3)
        assert op.T.shape == (3, 2)
        assert_array_equal(op.T.matvec(np.ones(2)), [3, 5, 7])

    def test_operator_shape_checked(self):
        op = LinearOperator((2, 3), lambda x: x[:2], lambda y: np.r_[y, 0.0])
        with pytest.raises(DimensionError):
            op.matvec(np.ones(2))


class TestStorage:
    def test_as_matrix_canonical_csr(self):
        A = sp.coo_array((np.array([1.0, 2.0]), (np.array([0, 0]), np.array([1, 1]))), shape=(1, 2))
        out = as_matrix(A)
        assert out.has_canonical_format
        assert_array_equal(out.toarray(), [[0.0, 3.0]])

    def test_explicit_zero_harmless(self):
        A = sp.csr_array((np.array([0.0, 2.0]), np.array([0, 1]), np.array([0, 2])), shape=(1, 2))
        assert_array_equal(as_matrix(A) @ np.ones(2), [2.0])

    def test_rejects_empty(self):
        with pytest.raises(DimensionError):
            as_matrix(np.zeros((0, 3)))

    def test_size_cap(self):
        with pytest.raises(SizeCapError):
            to_dense(np.zeros((10, 10)), size_cap=50)

    def test_transpose_stays_sparse(self):
        A = synth_sparse(20, 10, 0.3, seed=0)
        assert sp.issparse(transpose(A))
        assert_array_equal(transpose(A).toarray(), A.toarray().T)

    def test_rng_counter_based(self):
        assert isinstance(make_rng(3).bit_generator, np.random.Philox)
        assert make_rng(3).random() == make_rng(3).random()
        g = make_rng(1)
        assert make_rng(g) is g
