"""Assembly and evaluation of CUR factorizations.

``A ~ C M R`` with ``C = A[:, p]``, ``R = A[s, :]`` and the middle matrix
``M = C^+ A R^+``.  Least-squares problems go through Householder QR of
the tall factors; normal equations are never formed.  Works for dense
arrays, CSR arrays and (where only products are needed) operators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .exceptions import DimensionError, RankDeficiencyError
from .matcore import (
    DEFAULT_SIZE_CAP,
    LinearOperator,
    aslinearoperator,
    as_matrix,
    frobenius_norm,
    to_dense,
)
from .svd import SvdConfig, dense_svd, spectral_norm, svds


@dataclass
class CurFactorization:
    """Selected indices together with the three CUR factors.

    ``trace`` carries per-round records from the iterative drivers and is
    empty for one-round methods.
    """

    p: np.ndarray
    s: np.ndarray
    C: np.ndarray
    M: np.ndarray
    R: np.ndarray
    trace: list = field(default_factory=list)
    method: str = ""

    @property
    def k(self):
        return len(self.p)

    @property
    def shape(self):
        return (self.C.shape[0], self.R.shape[1])

    def approx(self, size_cap=DEFAULT_SIZE_CAP):
        """Dense product ``C M R``."""
        m, n = self.shape
        if m * n > size_cap:
            raise DimensionError(f"{m}x{n} product exceeds the dense size cap")
        return self.C @ (self.M @ self.R)


@dataclass
class CurDiagnostics:
    eta_p: float
    eta_s: float
    sigma_kplus1: float
    bound: float
    achieved: float
    cap_nk: float
    cap_mk: float

    @property
    def holds(self):
        return self.achieved <= self.bound * (1 + 1e-10) + 1e-10 * self.sigma_kplus1


class ErrorEstimate(NamedTuple):
    absolute: float
    relative: float
    converged: bool = True


def _columns(A, idx):
    if isinstance(A, LinearOperator):
        n = A.shape[1]
        E = np.zeros((n, len(idx)))
        E[np.asarray(idx, dtype=np.intp), np.arange(len(idx))] = 1.0
        return A.matmat(E)
    sub = A[:, np.asarray(idx, dtype=np.intp)]
    return sub.toarray() if sp.issparse(sub) else np.array(sub, dtype=np.float64)


def _rows(A, idx):
    if isinstance(A, LinearOperator):
        return _columns(A.T, idx).T
    sub = A[np.asarray(idx, dtype=np.intp), :]
    return sub.toarray() if sp.issparse(sub) else np.array(sub, dtype=np.float64)


def select_columns(A, p):
    """Dense copy of ``A[:, p]``."""
    return _columns(A if isinstance(A, LinearOperator) else as_matrix(A), p)


def select_rows(A, s):
    """Dense copy of ``A[s, :]``."""
    return _rows(A if isinstance(A, LinearOperator) else as_matrix(A), s)


def _full_rank_qr(F, name):
    """Reduced QR of a tall factor, refusing numerically rank deficient ones."""
    if F.shape[1] == 0:
        raise DimensionError(f"factor {name} has no columns")
    if F.shape[1] > F.shape[0]:
        raise RankDeficiencyError(name, f"{name} has more columns than rows")
    Q, T = scipy.linalg.qr(F, mode="economic")
    sv = scipy.linalg.svdvals(T)
    if sv[0] == 0 or sv[-1] < max(F.shape) * np.finfo(float).eps * sv[0]:
        raise RankDeficiencyError(name)
    return Q, T


def _left_project(A, Q):
    """``Q.T @ A`` for a matrix or operator."""
    if isinstance(A, LinearOperator):
        return A.rmatmat(Q).T
    return np.asarray((A.T @ Q).T)


def middle_matrix(A, p, s):
    """``M = C^+ A R^+`` by two consecutive QR-based least-squares solves.

    With ``C = Qc Tc`` and ``R.T = Qr Tr`` this is
    ``Tc^{-1} (Qc.T A Qr) Tr^{-T}``, which only needs ``A`` applied to the
    ``len(s)`` columns of ``Qr``.

    Raises
    ------
    RankDeficiencyError
        With ``factor`` set to ``"C"`` or ``"R"``.
    """
    if not isinstance(A, LinearOperator):
        A = as_matrix(A)
    C = _columns(A, p)
    R = _rows(A, s)
    return _middle(A, C, R)


def _middle(A, C, R):
    Qc, Tc = _full_rank_qr(C, "C")
    Qr, Tr = _full_rank_qr(R.T, "R")
    if isinstance(A, LinearOperator):
        AQr = A.matmat(Qr)
    else:
        AQr = np.asarray(A @ Qr)
    core = Qc.T @ AQr
    X = scipy.linalg.solve_triangular(Tc, core, lower=False)
    return scipy.linalg.solve_triangular(Tr, X.T, lower=False).T


def build_cur(A, p, s, method="", trace=None):
    """Assemble a :class:`CurFactorization` from index sets."""
    if not isinstance(A, LinearOperator):
        A = as_matrix(A)
    p = np.asarray(p, dtype=np.intp)
    s = np.asarray(s, dtype=np.intp)
    C = _columns(A, p)
    R = _rows(A, s)
    M = _middle(A, C, R)
    return CurFactorization(p=p, s=s, C=C, M=M, R=R, trace=list(trace or []), method=method)


def interpolative_cx(A, p):
    """Least-squares coefficients ``X = C^+ A`` for ``C = A[:, p]``."""
    if not isinstance(A, LinearOperator):
        A = as_matrix(A)
    C = _columns(A, p)
    Q, T = _full_rank_qr(C, "C")
    return scipy.linalg.solve_triangular(T, _left_project(A, Q), lower=False)


def residual_cx(A, p, size_cap=DEFAULT_SIZE_CAP):
    """Explicit one-sided residual ``A - C X``."""
    A = as_matrix(A)
    D = to_dense(A, size_cap)
    if len(p) == 0:
        return D
    X = interpolative_cx(A, p)
    return D - D[:, np.asarray(p, dtype=np.intp)] @ X


def residual_cur(A, p, s, size_cap=DEFAULT_SIZE_CAP):
    """Explicit two-sided residual ``A - C M R``."""
    A = as_matrix(A)
    D = to_dense(A, size_cap)
    if len(p) == 0 or len(s) == 0:
        return D
    f = build_cur(A, p, s)
    return D - f.C @ (f.M @ f.R)


def residual_operator(A, Q):
    """Matrix-free ``E = (I - Q Q^T) A`` for orthonormal `Q`.

    Forward: ``x -> A x - Q (Q^T A x)``; adjoint:
    ``y -> A^T (y - Q (Q^T y))``.
    """
    op = aslinearoperator(A)
    m, n = op.shape
    Q = np.zeros((m, 0)) if Q is None else np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[0] != m:
        raise DimensionError(f"Q must have {m} rows")

    def fwd(x):
        y = op._matvec(x)
        return y - Q @ (Q.T @ y)

    def adj(y):
        return op._rmatvec(y - Q @ (Q.T @ y))

    return LinearOperator((m, n), fwd, adj, op.norm_estimate)


def cur_residual_operator(A, C, M, R):
    """Matrix-free ``E = A - C M R``."""
    op = aslinearoperator(A)

    def fwd(x):
        return op._matvec(x) - C @ (M @ (R @ x))

    def adj(y):
        return op._rmatvec(y) - R.T @ (M.T @ (C.T @ y))

    return LinearOperator(op.shape, fwd, adj, op.norm_estimate)


def incremental_qr(Q, T, new_cols, reject_tol=1e-12):
    """Append columns to a thin QR factorization ``C = Q T``.

    Each new column is orthogonalized by classical Gram-Schmidt with one
    reorthogonalization pass.  A column whose norm after projection falls
    below ``reject_tol`` times its original norm lies numerically in the
    current span and raises :class:`RankDeficiencyError`.
    """
    new_cols = np.asarray(new_cols, dtype=np.float64)
    if new_cols.ndim == 1:
        new_cols = new_cols[:, None]
    m = new_cols.shape[0]
    if Q is None:
        Q = np.zeros((m, 0))
        T = np.zeros((0, 0))
    if Q.shape[0] != m:
        raise DimensionError(f"new columns have {m} rows, Q has {Q.shape[0]}")
    j0 = Q.shape[1]
    add = new_cols.shape[1]
    Qn = np.zeros((m, j0 + add))
    Tn = np.zeros((j0 + add, j0 + add))
    Qn[:, :j0] = Q
    Tn[:j0, :j0] = T
    for c in range(add):
        j = j0 + c
        w = new_cols[:, c].copy()
        orig = np.linalg.norm(w)
        h = Qn[:, :j].T @ w
        w -= Qn[:, :j] @ h
        h2 = Qn[:, :j].T @ w
        w -= Qn[:, :j] @ h2
        nrm = np.linalg.norm(w)
        if orig == 0 or nrm < reject_tol * orig:
            raise RankDeficiencyError("C", f"column {j} is numerically in span of the previous ones")
        Qn[:, j] = w / nrm
        Tn[:j, j] = h + h2
        Tn[j, j] = nrm
    return Qn, Tn


def _diff_operator(A, fact):
    return cur_residual_operator(A, fact.C, fact.M, fact.R)


def spectral_error(A, fact, mode="dense", norm_A=None, rtol=1e-6, max_iter=5000):
    """Spectral-norm error ``||A - C M R||_2``, absolute and relative.

    ``mode="dense"`` forms the difference explicitly; ``mode="operator"``
    runs a one-triplet Krylov SVD on the matrix-free difference.  Pass
    `norm_A` to reuse a cached ``||A||_2``.
    """
    A = as_matrix(A) if not isinstance(A, LinearOperator) else A
    if mode == "dense":
        D = to_dense(A)
        diff = D - fact.C @ (fact.M @ fact.R)
        err = float(scipy.linalg.norm(diff, 2))
        if norm_A is None:
            norm_A = float(scipy.linalg.norm(D, 2))
        converged = True
    elif mode == "operator":
        op = _diff_operator(A, fact)
        if min(op.shape) == 1:
            err = spectral_norm(op)
            converged = True
        else:
            restarts = max(1, max_iter // 20)
            res = svds(op, SvdConfig(k=1, rtol=rtol, max_restarts=restarts))
            err = float(res.S[0])
            converged = bool(res.converged.all())
        if norm_A is None:
            norm_A = spectral_norm(A)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    rel = err / norm_A if norm_A > 0 else 0.0
    return ErrorEstimate(err, rel, converged)


def frobenius_error(A, fact, norm_A=None):
    """``||A - C M R||_F`` (absolute, relative) without forming an m x n array.

    Uses ``||A||_F^2 - 2 <A, CMR> + ||CMR||_F^2`` with every inner product
    reduced to small dense pieces.
    """
    A = as_matrix(A)
    C, M, R = fact.C, fact.M, fact.R
    fa = frobenius_norm(A) if norm_A is None else norm_A
    CtA = np.asarray((A.T @ C).T)
    cross = float(np.sum((CtA @ R.T) * M))
    G = (C.T @ C) @ M @ (R @ R.T)
    sq = float(np.sum(G * M))
    val = fa * fa - 2.0 * cross + sq
    if m_times_n(A) <= DEFAULT_SIZE_CAP and val < 1e-8 * fa * fa:
        # cancellation dominates; fall back to the explicit difference
        D = to_dense(A)
        err = float(np.linalg.norm(D - C @ (M @ R)))
    else:
        err = float(np.sqrt(max(val, 0.0)))
    return ErrorEstimate(err, err / fa if fa > 0 else 0.0)


def m_times_n(A):
    return A.shape[0] * A.shape[1]


def theorem_bound(A, fact, svd=None):
    """Error-bound diagnostics for a rank-``k`` CUR factorization.

    Computes ``eta_p = ||(V^T P)^{-1}||_2`` and ``eta_s = ||(S^T U)^{-1}||_2``
    from the leading ``k`` singular vectors of `A`, the bound
    ``(eta_s + eta_p) * sigma_{k+1}``, the achieved spectral error, and the
    universal caps ``sqrt(n k / 3) 2^k`` and ``sqrt(m k / 3) 2^k``.

    Raises
    ------
    numpy.linalg.LinAlgError
        If ``V^T P`` or ``S^T U`` is singular.
    """
    A = as_matrix(A)
    m, n = A.shape
    k = len(fact.p)
    if len(fact.s) != k:
        raise DimensionError("theorem_bound needs |p| == |s|")
    svd = dense_svd(A) if svd is None else svd
    V = svd.V[:, :k]
    U = svd.U[:, :k]
    VP = V[fact.p, :].T
    SU = U[fact.s, :]
    for name, blk in (("V^T P", VP), ("S^T U", SU)):
        sv = scipy.linalg.svdvals(blk)
        if sv[-1] <= np.finfo(float).eps * max(sv[0], 1.0):
            raise np.linalg.LinAlgError(f"{name} is singular")
    eta_p = 1.0 / scipy.linalg.svdvals(VP)[-1]
    eta_s = 1.0 / scipy.linalg.svdvals(SU)[-1]
    sigma = svd.S[k] if k < svd.S.shape[0] else 0.0
    achieved = spectral_error(A, fact, "dense").absolute
    return CurDiagnostics(
        eta_p=float(eta_p),
        eta_s=float(eta_s),
        sigma_kplus1=float(sigma),
        bound=float((eta_s + eta_p) * sigma),
        achieved=float(achieved),
        cap_nk=float(np.sqrt(n * k / 3.0) * 2.0 ** k),
        cap_mk=float(np.sqrt(m * k / 3.0) * 2.0 ** k),
    )
