"""Matrix storage, Matrix Market I/O, generators and matrix-free operators.

Matrices are plain ``numpy.ndarray`` (dense) or ``scipy.sparse.csr_array``
(sparse) holding float64 values.  :func:`as_matrix` normalizes any accepted
input into one of those two forms.  Everything downstream that only needs
products goes through :class:`LinearOperator`.

All randomness comes from :func:`make_rng`, which wraps numpy's Philox
counter-based bit generator so draws are platform independent for a given
integer seed.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.io
import scipy.sparse as sp

from .exceptions import DimensionError, MatrixMarketError, SizeCapError

DEFAULT_SIZE_CAP = 50_000_000

_SUPPORTED_FIELDS = ("real", "double", "integer")
_SUPPORTED_SYMMETRY = ("general", "symmetric")


def make_rng(seed=0):
    """Return a Philox-backed ``numpy.random.Generator``.

    An existing ``Generator`` is passed through untouched so callers can
    thread one stream through several calls.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        seed = 0
    return np.random.Generator(np.random.Philox(int(seed)))


def is_sparse(A):
    return sp.issparse(A)


def as_matrix(A):
    """Coerce `A` to a float64 dense array or canonical CSR array.

    Canonical CSR means sorted column indices and no duplicate entries.
    Explicit zeros are kept; they never change a product.
    """
    if sp.issparse(A):
        A = sp.csr_array(A, dtype=np.float64)
        if not A.has_canonical_format:
            A = A.copy()
            A.sum_duplicates()
        out = A
    else:
        out = np.asarray(A, dtype=np.float64)
        if out.ndim == 1:
            out = out[:, None]
        if out.ndim != 2:
            raise DimensionError(f"expected a 2-D matrix, got ndim={out.ndim}")
    m, n = out.shape
    if m < 1 or n < 1:
        raise DimensionError(f"matrix must be at least 1x1, got {m}x{n}")
    return out


def to_dense(A, size_cap=DEFAULT_SIZE_CAP):
    """Return a dense copy of `A`, refusing if it has more than `size_cap` entries."""
    m, n = A.shape
    if m * n > size_cap:
        raise SizeCapError(f"{m}x{n} exceeds the dense size cap of {size_cap} entries")
    if sp.issparse(A):
        return A.toarray()
    return np.array(A, dtype=np.float64)


def frobenius_norm(A):
    if sp.issparse(A):
        return float(np.linalg.norm(A.data))
    return float(np.linalg.norm(A))


def column_norms(A):
    if sp.issparse(A):
        return np.sqrt(np.asarray(A.multiply(A).sum(axis=0)).ravel())
    return np.linalg.norm(A, axis=0)


def matvec(A, x, transpose=False):
    """Compute ``A @ x`` or ``A.T @ x`` for a dense or sparse matrix.

    The summation order is fixed by the storage layout, so repeated calls
    give bitwise identical results.
    """
    x = np.asarray(x, dtype=np.float64)
    m, n = A.shape
    expected = m if transpose else n
    if x.shape[0] != expected:
        op = "A.T @ x" if transpose else "A @ x"
        raise DimensionError(f"{op}: x has length {x.shape[0]}, expected {expected}")
    if transpose:
        return A.T @ x
    return A @ x


class LinearOperator:
    """Matrix-free linear map given by a forward and an adjoint product.

    Parameters
    ----------
    shape : tuple of int
        ``(m, n)``; the forward map takes length-`n` vectors to length `m`.
    matvec, rmatvec : callable
        Forward ``x -> E x`` and adjoint ``y -> E.T y`` products.
    norm_estimate : float, optional
        Any available upper estimate of the spectral norm, used only for
        scaling tolerances.

    The counters ``n_matvec`` and ``n_rmatvec`` record how many products
    have been applied.
    """

    def __init__(self, shape, matvec, rmatvec, norm_estimate=None):
        self.shape = (int(shape[0]), int(shape[1]))
        self._matvec = matvec
        self._rmatvec = rmatvec
        self.norm_estimate = norm_estimate
        self.n_matvec = 0
        self.n_rmatvec = 0

    @property
    def T(self):
        return LinearOperator(
            (self.shape[1], self.shape[0]), self._rmatvec, self._matvec, self.norm_estimate
        )

    @property
    def count(self):
        return self.n_matvec + self.n_rmatvec

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.shape[1],):
            raise DimensionError(f"operator expects length {self.shape[1]}, got {x.shape}")
        self.n_matvec += 1
        return np.asarray(self._matvec(x), dtype=np.float64)

    def rmatvec(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.shape[0],):
            raise DimensionError(f"adjoint expects length {self.shape[0]}, got {y.shape}")
        self.n_rmatvec += 1
        return np.asarray(self._rmatvec(y), dtype=np.float64)

    def matmat(self, X):
        return np.column_stack([self.matvec(X[:, j]) for j in range(X.shape[1])])

    def rmatmat(self, Y):
        return np.column_stack([self.rmatvec(Y[:, j]) for j in range(Y.shape[1])])

    def __repr__(self):
        return f"<LinearOperator {self.shape[0]}x{self.shape[1]}>"


def aslinearoperator(A):
    """Wrap a matrix (or pass through an operator) as a :class:`LinearOperator`.

    Sparse inputs get a CSR copy of the transpose built once, so the adjoint
    product streams rows just like the forward one.
    """
    if isinstance(A, LinearOperator):
        return A
    A = as_matrix(A)
    if sp.issparse(A):
        At = sp.csr_array(A.T)
        est = frobenius_norm(A)
        return LinearOperator(A.shape, lambda x: A @ x, lambda y: At @ y, est)
    At = np.ascontiguousarray(A.T)
    return LinearOperator(A.shape, lambda x: A @ x, lambda y: At @ y, frobenius_norm(A))


def transpose(A):
    """Transpose of a matrix or operator, keeping sparse inputs in CSR."""
    if isinstance(A, LinearOperator):
        return A.T
    if sp.issparse(A):
        return sp.csr_array(A.T)
    return np.ascontiguousarray(A.T)


# -- Matrix Market -----------------------------------------------------------


def _read_header(path):
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        first = fh.readline()
    tokens = first.strip().split()
    if len(tokens) != 5 or tokens[0].lower() != "%%matrixmarket":
        raise MatrixMarketError(f"{path}: line 1: missing '%%MatrixMarket' banner")
    obj, fmt, field, symmetry = (t.lower() for t in tokens[1:])
    if obj != "matrix":
        raise MatrixMarketError(f"{path}: line 1: unsupported object '{obj}'")
    if fmt not in ("coordinate", "array"):
        raise MatrixMarketError(f"{path}: line 1: unsupported format '{fmt}'")
    if field == "complex":
        raise MatrixMarketError(f"{path}: complex matrices are not supported")
    if field == "pattern":
        raise MatrixMarketError(
            f"{path}: pattern matrices carry no values and are not supported"
        )
    if field not in _SUPPORTED_FIELDS:
        raise MatrixMarketError(f"{path}: line 1: unsupported field '{field}'")
    if symmetry not in _SUPPORTED_SYMMETRY:
        raise MatrixMarketError(f"{path}: line 1: unsupported symmetry '{symmetry}'")
    return fmt, field, symmetry


def read_matrix_market(path):
    """Read a real Matrix Market file.

    Coordinate files become CSR arrays, array files become dense arrays.
    Symmetric storage is expanded to the full matrix.  Indices are 0-based
    in the result.

    Raises
    ------
    MatrixMarketError
        On a malformed file (the message names the offending line) or an
        unsupported field such as ``complex`` or ``pattern``.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    fmt, _, _ = _read_header(path)
    try:
        data = scipy.io.mmread(path)
    except (ValueError, OverflowError, IndexError) as exc:
        msg = str(exc)
        if "line" not in msg.lower():
            msg = f"line unknown: {msg}"
        raise MatrixMarketError(f"{path}: {msg}") from exc
    if fmt == "coordinate":
        return as_matrix(sp.csr_array(data))
    return as_matrix(np.asarray(data))


def write_matrix_market(path, A, comment=""):
    """Write `A` in Matrix Market format with round-trip exact values."""
    A = as_matrix(A)
    if sp.issparse(A):
        A = sp.coo_matrix(A)
    scipy.io.mmwrite(os.fspath(path), A, comment=comment, field="real", symmetry="general")


# -- Transformations and generators ------------------------------------------


def normalize_rows(A):
    """Scale every nonzero row of `A` to unit 2-norm.

    Zero rows are left as they are, and the sparsity pattern of sparse input
    is unchanged.
    """
    A = as_matrix(A)
    if sp.issparse(A):
        norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
    else:
        norms = np.linalg.norm(A, axis=1)
    scale = np.ones_like(norms)
    nz = norms > 0
    scale[nz] = 1.0 / norms[nz]
    if sp.issparse(A):
        out = A.copy()
        counts = np.diff(out.indptr)
        out.data = out.data * np.repeat(scale, counts)
        return out
    return A * scale[:, None]


def _sprand_columns(rng, length, count, density):
    nnz = max(1, int(round(density * length)))
    rows = np.empty(count * nnz, dtype=np.int64)
    for j in range(count):
        rows[j * nnz:(j + 1) * nnz] = rng.choice(length, size=nnz, replace=False)
    vals = rng.random(count * nnz)
    cols = np.repeat(np.arange(count), nnz)
    return sp.csr_array((vals, (rows, cols)), shape=(length, count))


def synth_sparse(m, n, density=0.025, seed=0, terms=None):
    """Sparse nonnegative test matrix with a two-level decaying spectrum.

    Builds ``sum_j w_j x_j y_j^T`` for ``j = 1..terms`` with ``w_j = 2/j`` for
    ``j <= 10`` and ``w_j = 1/j`` beyond.  Each ``x_j`` (length `m`) and
    ``y_j`` (length `n`) has ``round(density * length)`` nonzeros (at least
    one) at distinct uniformly chosen positions, with values uniform on
    ``[0, 1)``.

    Parameters
    ----------
    m, n : int
        Shape of the result.
    density : float
        Fraction of nonzero positions in each factor vector, in ``(0, 1]``.
    seed : int or numpy.random.Generator
        Seed for :func:`make_rng`.
    terms : int, optional
        Number of rank-one terms; defaults to `n`.

    Returns
    -------
    scipy.sparse.csr_array
    """
    if int(m) < 1 or int(n) < 1:
        raise ValueError(f"m and n must be positive, got {m}, {n}")
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    terms = n if terms is None else int(terms)
    if terms < 1:
        raise ValueError(f"terms must be positive, got {terms}")
    rng = make_rng(seed)
    X = _sprand_columns(rng, m, terms, density)
    Y = _sprand_columns(rng, n, terms, density)
    j = np.arange(1, terms + 1, dtype=np.float64)
    weights = np.where(j <= 10, 2.0 / j, 1.0 / j)
    A = (X @ sp.diags_array(weights)) @ Y.T
    A = sp.csr_array(A)
    A.sort_indices()
    return as_matrix(A)
