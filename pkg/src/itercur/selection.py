"""One-round index selection.

Deterministic schemes (DEIM, QDEIM, MaxVol) act on a block of singular
vectors; the randomized ones draw from leverage-score or residual
squared-norm distributions.  Indices are 0-based ``numpy`` integer arrays
in selection order.  Ties in an argmax always go to the smallest index.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .exceptions import DimensionError, SingularSelectionError
from .matcore import as_matrix, make_rng

# A deflated column whose largest entry falls below this fraction of the
# raw column norm is treated as lying in the span already interpolated.
_VANISH = 1e-12


def _as_block(U):
    U = np.array(U, dtype=np.float64, copy=True)
    if U.ndim == 1:
        U = U[:, None]
    if U.ndim != 2:
        raise DimensionError("expected a 2-D block of vectors")
    return U


def deim_select(U, masked_rows=None, fallback=False):
    """DEIM with optional row masking and singularity fallback.

    Returns ``(indices, fallback_steps)`` where `fallback_steps` lists the
    1-based steps at which the deflated column vanished and the largest
    raw entry among eligible rows was taken instead.  With
    ``fallback=False`` such a step raises :class:`SingularSelectionError`.
    """
    U = _as_block(U)
    m, k = U.shape
    if k > m:
        raise DimensionError(f"cannot pick {k} distinct indices from {m} rows")
    eligible = np.ones(m, dtype=bool)
    if masked_rows is not None and len(masked_rows):
        masked_rows = np.asarray(masked_rows, dtype=np.intp)
        U[masked_rows, :] = 0.0
        eligible[masked_rows] = False
    if k > eligible.sum():
        raise DimensionError(f"only {eligible.sum()} unmasked rows for {k} indices")

    s = np.empty(k, dtype=np.intp)
    steps = []
    for j in range(k):
        raw = U[:, j].copy()
        if j:
            # earlier columns are already deflated, so U[s, :j] is lower triangular
            coef = scipy.linalg.solve_triangular(U[s[:j], :j], raw[s[:j]], lower=True)
            U[:, j] = raw - U[:, :j] @ coef
        r = np.abs(U[:, j])
        i = int(np.argmax(r))
        if r[i] > _VANISH * max(np.linalg.norm(raw), np.finfo(float).tiny) and eligible[i]:
            s[j] = i
            eligible[i] = False
            continue
        if not fallback:
            raise SingularSelectionError(j + 1)
        steps.append(j + 1)
        cand = np.where(eligible, np.abs(raw), -1.0)
        i = int(np.argmax(cand))
        s[j] = i
        eligible[i] = False
        if r[i] <= _VANISH * max(np.linalg.norm(raw), np.finfo(float).tiny):
            U[:, j] = 0.0
            U[i, j] = 1.0
    return s, steps


def deim(U, masked_rows=None):
    """Discrete empirical interpolation indices of the columns of `U`.

    Step ``j`` takes the largest-magnitude entry of column ``j`` after
    subtracting its interpolant on the rows already chosen, so the residual
    vanishes on those rows and no index repeats.

    Parameters
    ----------
    U : (m, k) array_like
        Linearly independent columns, ``k <= m``.
    masked_rows : sequence of int, optional
        Rows zeroed before selection; they are never returned.

    Returns
    -------
    numpy.ndarray of int, shape (k,)

    Raises
    ------
    SingularSelectionError
        If the interpolation system becomes singular (possible only with
        masking or rank-deficient input); ``err.step`` names the column.
    """
    return deim_select(U, masked_rows, fallback=False)[0]


def qdeim(U):
    """Indices of the first ``k`` pivots of a column-pivoted QR of ``U.T``."""
    U = _as_block(U)
    m, k = U.shape
    if k > m:
        raise DimensionError(f"cannot pick {k} distinct indices from {m} rows")
    _, piv = scipy.linalg.qr(U.T, mode="r", pivoting=True)
    return np.asarray(piv[:k], dtype=np.intp)


def maxvol(U, start=None, swap_tol=1.01, max_sweeps=100):
    """Greedy dominant ``k x k`` submatrix of a tall block.

    Starting from `start` (DEIM indices by default), repeatedly find the
    largest entry of ``U @ inv(U[s])``; while it exceeds `swap_tol`, swap
    that row into ``s`` at the corresponding position.  Each swap grows
    ``|det U[s]|`` by at least the factor `swap_tol`.

    Emits a ``RuntimeWarning`` and returns the current set if `max_sweeps`
    swaps do not reach dominance.
    """
    U = _as_block(U)
    m, k = U.shape
    s = deim(U) if start is None else np.array(start, dtype=np.intp)
    if s.shape != (k,) or len(set(s.tolist())) != k:
        raise ValueError("start must hold k distinct indices")
    for _ in range(max_sweeps):
        coeff = scipy.linalg.solve(U[s].T, U.T).T
        flat = int(np.argmax(np.abs(coeff)))
        i, j = divmod(flat, k)
        if abs(coeff[i, j]) <= swap_tol:
            return s
        s[j] = i
    warnings.warn(f"maxvol did not reach dominance in {max_sweeps} sweeps", RuntimeWarning)
    return s


def leverage_scores(V, check=True):
    """Leverage-score distribution ``pr_j = ||V[j, :]||^2 / k``.

    Raises ``ValueError`` when a column norm of `V` is off unity by more
    than 1e-6.
    """
    V = _as_block(V)
    norms = np.linalg.norm(V, axis=0)
    if check and np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("leverage scores need orthonormal columns")
    return np.sum(V * V, axis=1) / V.shape[1]


def normalize_distribution(weights, exclude=None):
    """Turn nonnegative weights into probabilities, zeroing `exclude`."""
    pr = np.array(weights, dtype=np.float64, copy=True)
    if np.any(pr < 0):
        raise ValueError("weights must be nonnegative")
    if exclude is not None and len(exclude):
        pr[np.asarray(exclude, dtype=np.intp)] = 0.0
    total = pr.sum()
    if total <= 0:
        raise ValueError("distribution has no support")
    return pr / total


def squared_norm_distribution(E, exclude=None):
    """Column probabilities ``||E[:, j]||^2 / ||E||_F^2``."""
    if sp.issparse(E):
        w = np.asarray(E.multiply(E).sum(axis=0)).ravel()
    else:
        E = np.asarray(E, dtype=np.float64)
        w = np.sum(E * E, axis=0)
    return normalize_distribution(w, exclude)


def sample_distribution(pr, count, seed=0):
    """Draw `count` distinct indices from `pr` without replacement.

    Draws are sequential: after each pick the chosen item is removed and
    the remaining probabilities renormalized.
    """
    pr = np.array(pr, dtype=np.float64, copy=True)
    if np.any(pr < 0):
        raise ValueError("probabilities must be nonnegative")
    if np.count_nonzero(pr) < count:
        raise ValueError(f"only {np.count_nonzero(pr)} items with positive probability, need {count}")
    rng = make_rng(seed)
    out = np.empty(count, dtype=np.intp)
    for t in range(count):
        cdf = np.cumsum(pr)
        u = rng.random() * cdf[-1]
        i = int(np.searchsorted(cdf, u, side="right"))
        i = min(i, pr.size - 1)
        while pr[i] == 0:
            # u landed on a flat stretch of the cdf from rounding
            i -= 1
        out[t] = i
        pr[i] = 0.0
    return out


def _residual_column_sq_norms(A, Q, block=256):
    """Squared column norms of ``A - Q Q^T A``, formed block by block."""
    m, n = A.shape
    out = np.empty(n)
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        blk = A[:, lo:hi]
        blk = blk.toarray() if sp.issparse(blk) else np.asarray(blk)
        if Q.shape[1]:
            blk = blk - Q @ (Q.T @ blk)
        out[lo:hi] = np.sum(blk * blk, axis=0)
    return out


def volume_sampling(A, k, t, c, seed=0, zero_tol=1e-10):
    """Adaptive squared-norm column sampling over `t` rounds of `c` columns.

    Each round draws `c` new columns without replacement with probability
    proportional to the squared column norms of ``E = A - C C^+ A`` and
    then re-forms the residual.  When the residual Frobenius norm drops
    below ``zero_tol * ||A||_F`` (or fewer than `c` columns carry residual
    mass) the available columns are taken and sampling stops early with a
    ``RuntimeWarning``.
    """
    A = as_matrix(A)
    m, n = A.shape
    if t * c != k:
        raise ValueError(f"t * c must equal k, got {t} * {c} != {k}")
    if k > n:
        raise DimensionError(f"k={k} exceeds the number of columns {n}")
    rng = make_rng(seed)
    Q = np.zeros((m, 0))
    p = []
    norm_a = None
    for _ in range(t):
        w = _residual_column_sq_norms(A, Q)
        if norm_a is None:
            norm_a = np.sqrt(w.sum())
        if p:
            w[np.asarray(p)] = 0.0
        total = np.sqrt(w.sum())
        col_floor = (zero_tol * norm_a) ** 2 / n
        w[w <= col_floor] = 0.0
        if total <= zero_tol * norm_a or not np.any(w):
            warnings.warn("residual exhausted before k columns were sampled", RuntimeWarning)
            break
        avail = int(np.count_nonzero(w))
        take = min(c, avail)
        picked = sample_distribution(w / w.sum(), take, rng)
        p.extend(int(i) for i in picked)
        C = A[:, p]
        C = C.toarray() if sp.issparse(C) else np.asarray(C)
        Q, _ = np.linalg.qr(C)
        if take < c:
            warnings.warn("fewer than c columns with nonzero residual", RuntimeWarning)
            break
    return np.asarray(p, dtype=np.intp)
