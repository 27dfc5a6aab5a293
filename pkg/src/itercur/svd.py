"""Dense and Krylov-Schur singular value decompositions.

The Krylov path works from forward/adjoint products only.  A decomposition
of dimension ``d`` is kept in the form::

    E V[:, :d] = U B
    E.T U      = V[:, :d] B.T + beta * V[:, d] f.T

where ``B`` is upper triangular (bidiagonal right after pure Golub-Kahan
steps, diagonal right after a restart).  Expanding appends Golub-Kahan
steps with full reorthogonalization; restarting rotates both bases by the
singular vectors of ``B`` and keeps the leading block.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .exceptions import DimensionError
from .matcore import (
    DEFAULT_SIZE_CAP,
    LinearOperator,
    aslinearoperator,
    make_rng,
    to_dense,
)

_BREAKDOWN = 1e-14


@dataclass
class SvdResult:
    """Leading singular triplets of a matrix or operator.

    ``U`` is ``m x r``, ``S`` has length ``r`` sorted nonincreasingly and ``V``
    is ``n x r``.  ``converged[i]`` is True when triplet ``i`` met the
    tolerance.  ``residual_norm`` is ``beta * ||f||`` over the returned
    triplets at termination (0 for the dense path).
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    converged: np.ndarray
    residual_norm: float = 0.0
    matvec_count: int = 0
    restarts: int = 0
    early_stop: bool = False
    ritz_history: list = field(default_factory=list)

    @property
    def rank(self):
        return self.S.shape[0]


@dataclass
class SvdConfig:
    """Settings for :func:`svds`.

    Parameters
    ----------
    k : int
        Number of wanted triplets (the minimum subspace dimension).
    kmax : int, optional
        Maximum subspace dimension; ``2k + 10`` capped at ``min(m, n)``.
    tol : float, optional
        Absolute tolerance on each triplet residual ``|beta f_i|``.  When
        omitted, ``rtol`` times the current largest Ritz value is used.
    rtol : float
        Relative tolerance used when `tol` is None.
    max_restarts : int
        Restart budget; exhausting it returns a best-effort result.
    v0 : array_like, optional
        Starting right vector.  Defaults to a seeded Gaussian vector.
    seed : int
        Seed for the default starting vector and breakdown recovery.
    delta, ell, budget : optional
        Decay gating.  When `delta` is set, only the leading
        ``c = min(b, ell)`` triplets are returned, where ``b`` counts Ritz
        values ``>= delta * sigma_1`` among the first ``min(k, budget)``.
    strict : bool
        Use ``>`` instead of ``>=`` in the decay count (``b = 0`` forces 1).
    wedin : bool
        Allow the gap-based early stop when ``delta == 1``.
    """

    k: int
    kmax: int | None = None
    tol: float | None = None
    rtol: float = 1e-8
    max_restarts: int = 300
    v0: np.ndarray | None = None
    seed: int = 0
    delta: float | None = None
    ell: int | None = None
    budget: int | None = None
    strict: bool = False
    wedin: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.kmax is not None and self.kmax <= self.k:
            raise ValueError(f"kmax ({self.kmax}) must exceed k ({self.k})")
        if self.tol is not None and self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.rtol <= 0:
            raise ValueError("rtol must be positive")
        if self.delta is not None and not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")
        if self.ell is not None and self.ell < 1:
            raise ValueError("ell must be at least 1")


@dataclass
class BidiagState:
    """A (possibly restarted) Lanczos bidiagonalization of an operator.

    ``V`` holds ``dim + 1`` columns; the last one is the continuation vector.
    ``ritz`` holds all singular values of ``B`` from the most recent restart.
    """

    U: np.ndarray
    V: np.ndarray
    B: np.ndarray
    beta: float
    f: np.ndarray
    norm_est: float = 0.0
    exhausted: bool = False
    ritz: np.ndarray | None = None

    @property
    def dim(self):
        return self.U.shape[1]


def _sign_fix(U, V):
    """Flip triplets so the largest-magnitude entry of each v is positive."""
    if V.shape[1] == 0:
        return U, V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def dense_svd(A, size_cap=DEFAULT_SIZE_CAP):
    """Full reduced SVD through LAPACK.

    The ``r = min(m, n)`` triplets are returned with the sign convention of
    :func:`svds`.

    Raises
    ------
    SizeCapError
        If ``m * n`` exceeds `size_cap`.
    """
    D = to_dense(A, size_cap)
    U, S, Vt = scipy.linalg.svd(D, full_matrices=False, lapack_driver="gesdd")
    U, V = _sign_fix(U, Vt.T)
    return SvdResult(U=U, S=S, V=V, converged=np.ones(S.shape[0], dtype=bool))


def _orthogonalize(basis, w):
    """Two passes of classical Gram-Schmidt; returns (w, coefficients)."""
    if basis.shape[1] == 0:
        return w, np.zeros(0)
    h = basis.T @ w
    w = w - basis @ h
    h2 = basis.T @ w
    w = w - basis @ h2
    return w, h + h2


def _random_orthogonal(rng, basis, size):
    for _ in range(5):
        w = rng.standard_normal(size)
        w, _ = _orthogonalize(basis, w)
        nrm = np.linalg.norm(w)
        if nrm > 1e-8:
            return w / nrm
    return None


def start_bidiag(op, v1):
    """Zero-dimensional decomposition seeded with the right vector `v1`."""
    m, n = op.shape
    v1 = np.asarray(v1, dtype=np.float64)
    if v1.shape != (n,):
        raise DimensionError(f"starting vector must have length {n}")
    nrm = np.linalg.norm(v1)
    if nrm == 0:
        raise ValueError("starting vector must be nonzero")
    return BidiagState(
        U=np.zeros((m, 0)),
        V=(v1 / nrm)[:, None],
        B=np.zeros((0, 0)),
        beta=0.0,
        f=np.zeros(0),
    )


def lanczos_expand(op, state, to_dim, rng=None):
    """Grow the decomposition to `to_dim` Golub-Kahan steps.

    Every new basis vector is reorthogonalized against all previous ones.
    On breakdown (a new vector of relative norm below 1e-14) a random
    vector orthogonal to the current basis continues the recurrence with a
    zero coupling coefficient.  When a basis would exceed its ambient
    dimension the state is marked ``exhausted``.
    """
    m, n = op.shape
    d = state.dim
    if to_dim < d:
        raise ValueError(f"cannot shrink from {d} to {to_dim}")
    if to_dim > min(m, n):
        raise DimensionError(f"to_dim {to_dim} exceeds min(m, n) = {min(m, n)}")
    if to_dim == d:
        return state
    rng = make_rng(0) if rng is None else rng

    U = np.zeros((m, to_dim))
    V = np.zeros((n, to_dim + 1))
    B = np.zeros((to_dim, to_dim))
    U[:, :d] = state.U
    V[:, :d + 1] = state.V
    B[:d, :d] = state.B
    norm_est = max(state.norm_est, float(np.max(np.abs(state.B), initial=0.0)))
    beta = state.beta
    exhausted = state.exhausted

    for j in range(d, to_dim):
        w = op.matvec(V[:, j])
        w, h = _orthogonalize(U[:, :j], w)
        alpha = np.linalg.norm(w)
        norm_est = max(norm_est, alpha, float(np.max(np.abs(h), initial=0.0)))
        B[:j, j] = h
        if alpha <= _BREAKDOWN * max(norm_est, 1e-300):
            u = _random_orthogonal(rng, U[:, :j], m)
            B[j, j] = 0.0
        else:
            u = w / alpha
            B[j, j] = alpha
        U[:, j] = u

        z = op.rmatvec(U[:, j])
        z, _ = _orthogonalize(V[:, :j + 1], z)
        beta = np.linalg.norm(z)
        norm_est = max(norm_est, beta)
        if beta <= _BREAKDOWN * max(norm_est, 1e-300):
            beta = 0.0
            if j + 1 < n:
                z = _random_orthogonal(rng, V[:, :j + 1], n)
                if z is None:
                    z = np.zeros(n)
                    exhausted = True
            else:
                z = np.zeros(n)
                exhausted = True
        else:
            z = z / beta
        V[:, j + 1] = z

    f = np.zeros(to_dim)
    f[-1] = 1.0
    return BidiagState(U=U, V=V, B=B, beta=float(beta), f=f, norm_est=norm_est,
                       exhausted=exhausted, ritz=state.ritz)


def krylov_schur_restart(state, keep):
    """Diagonalize ``B`` and truncate to the `keep` leading Ritz triplets.

    With ``B = W diag(s) Z.T`` the bases become ``U W`` and ``V Z``; the
    continuation vector and coupling carry over, and the new restart vector
    is ``(W.T f)[:keep]``.
    """
    d = state.dim
    if not 0 < keep <= d:
        raise ValueError(f"keep must lie in [1, {d}], got {keep}")
    W, s, Zt = scipy.linalg.svd(state.B, full_matrices=False, lapack_driver="gesvd")
    Z = Zt.T
    U = state.U @ W[:, :keep]
    V = np.empty((state.V.shape[0], keep + 1))
    V[:, :keep] = state.V[:, :d] @ Z[:, :keep]
    V[:, keep] = state.V[:, d]
    f = (W.T @ state.f)[:keep]
    return BidiagState(U=U, V=V, B=np.diag(s[:keep]), beta=state.beta, f=f,
                       norm_est=max(state.norm_est, float(s[0]) if s.size else 0.0),
                       exhausted=state.exhausted, ritz=s)


def wedin_gap_stop(v1, sigma1, sigma2, f2_norm):
    """Decide whether the argmax of ``|v1|`` is already certified.

    Returns True when the gap between the largest and second-largest
    magnitudes of `v1` exceeds ``2 * f2_norm / (sigma1 - sigma2)``, the
    perturbation allowance implied by Wedin's theorem with the gap
    approximated by the Ritz values.  A vanishing gap returns False.
    """
    gap = float(sigma1) - float(sigma2)
    if not gap > 0:
        return False
    a = np.abs(np.asarray(v1, dtype=np.float64))
    if a.size == 0 or not np.any(a):
        return False
    if a.size == 1:
        return True
    top = np.partition(a, a.size - 2)[-2:]
    m1, m2 = top[1], top[0]
    return bool(m1 - m2 > 2.0 * float(f2_norm) / gap)


def _decay_count(values, delta, strict):
    thresh = delta * values[0]
    keep = values > thresh if strict else values >= thresh
    b = int(np.count_nonzero(keep))
    return max(b, 1) if strict else b


def _dense_fallback(op, cfg, start_count):
    # k reaches min(m, n): no room for a restart subspace, so the operator is
    # applied to the identity.  Only hit for tiny problems.
    m, n = op.shape
    if m * n > DEFAULT_SIZE_CAP:
        raise DimensionError(f"k={cfg.k} needs k < min(m, n) for a {m}x{n} operator")
    if n <= m:
        D = op.matmat(np.eye(n))
    else:
        D = op.rmatmat(np.eye(m)).T
    full = dense_svd(D)
    r = _gated_count(full.S, cfg, min(cfg.k, full.rank))
    return replace(full, U=full.U[:, :r], S=full.S[:r], V=full.V[:, :r],
                   converged=full.converged[:r], matvec_count=op.count - start_count)


def _gated_count(values, cfg, want):
    if cfg.delta is None:
        return want
    if cfg.delta >= 1.0:
        return 1
    return min(_decay_count(values[:want], cfg.delta, cfg.strict), want)


def svds(A, cfg):
    """Leading singular triplets by a Krylov-Schur restarted Lanczos SVD.

    Parameters
    ----------
    A : array_like, sparse matrix or LinearOperator
        Accessed only through forward and adjoint products.
    cfg : SvdConfig or int
        Configuration; a bare int is taken as ``k``.

    Returns
    -------
    SvdResult
        Up to ``cfg.k`` triplets.  Under decay gating fewer may be returned.
        Non-convergence within ``cfg.max_restarts`` is reported through the
        ``converged`` flags rather than raised.
    """
    if not isinstance(cfg, SvdConfig):
        cfg = SvdConfig(k=int(cfg))
    op = aslinearoperator(A)
    m, n = op.shape
    r = min(m, n)
    want = cfg.k if cfg.budget is None else min(cfg.k, cfg.budget)
    if want < 1:
        raise ValueError("nothing to compute: k or budget below 1")
    if want > r:
        raise DimensionError(f"k={want} exceeds min(m, n) = {r}")
    start_count = op.count
    kmax = min(cfg.kmax or (2 * want + 10), r)
    if kmax <= want:
        return _dense_fallback(op, replace(cfg, k=want, budget=None), start_count)

    rng = make_rng(cfg.seed)
    v1 = cfg.v0 if cfg.v0 is not None else rng.standard_normal(n)
    state = start_bidiag(op, v1)

    history = []
    restarts = 0
    early = False
    count = want
    while True:
        state = lanczos_expand(op, state, kmax, rng)
        state = krylov_schur_restart(state, want)
        s = np.diag(state.B).copy()
        history.append(s)
        res = np.abs(state.beta * state.f)
        tol = cfg.tol if cfg.tol is not None else cfg.rtol * max(s[0], 1e-300)
        conv = res <= tol
        if state.exhausted:
            conv[:] = True

        lead = int(np.argmin(conv)) if not conv.all() else want
        done = lead >= want
        count = want
        if cfg.delta is not None:
            if cfg.delta >= 1.0:
                count = 1
                done = bool(conv[0])
            elif lead > 0:
                b = _decay_count(s[:lead], cfg.delta, cfg.strict)
                if b < lead or lead >= want:
                    count = min(b, cfg.ell or want, want)
                    done = True
            if cfg.ell is not None:
                count = min(count, cfg.ell)
        if not done and cfg.wedin and cfg.delta is not None and cfg.delta >= 1.0:
            ritz = state.ritz
            s2 = ritz[1] if ritz.size > 1 else 0.0
            if wedin_gap_stop(state.V[:, 0], s[0], s2, res[0]):
                done, early, count = True, True, 1
        if done or restarts >= cfg.max_restarts:
            break
        restarts += 1

    U, V = _sign_fix(state.U[:, :count], state.V[:, :count])
    return SvdResult(
        U=U,
        S=np.diag(state.B)[:count].copy(),
        V=V,
        converged=conv[:count].copy(),
        residual_norm=float(np.linalg.norm(state.beta * state.f[:count])),
        matvec_count=op.count - start_count,
        restarts=restarts,
        early_stop=early,
        ritz_history=history,
    )


def spectral_norm(A, rtol=1e-10, seed=0):
    """Largest singular value of a matrix or operator via :func:`svds`."""
    op = aslinearoperator(A)
    if min(op.shape) == 1:
        v = op.matvec(np.ones(1)) if op.shape[1] == 1 else op.rmatvec(np.ones(1))
        return float(np.linalg.norm(v))
    return float(svds(op, SvdConfig(k=1, rtol=rtol, seed=seed)).S[0])
