"""Iterative-subselection CUR drivers.

Every driver alternates between computing leading singular vectors of a
residual and picking a few indices from them:

==========  ===================  =======================
method      indices per round    residual
==========  ===================  =======================
cadp_cx     fixed ``c``          ``A - C C^+ A``
dadp_cx     singular-value decay ``A - C C^+ A``
cadp_cur    fixed ``c``          ``A - C M R``
dadp_cur    singular-value decay ``A - C M R``
==========  ===================  =======================

The one-sided methods run the column loop on ``A`` and then the same loop
on ``A.T`` for the rows.  The two-sided methods pick both per round and
zero already chosen rows of the singular vectors so nothing repeats.

Two backends are available.  ``"dense"`` forms every residual explicitly
and takes a full SVD.  ``"krylov"`` never forms a residual: the one-sided
residual is ``(I - Q Q^T) A`` with ``Q`` grown by an incremental QR, the
two-sided one is ``x -> A x - C (M (R x))``, and only the needed triplets
come from :func:`itercur.svd.svds`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .cur import (
    build_cur,
    cur_residual_operator,
    incremental_qr,
    interpolative_cx,
    residual_operator,
    select_columns,
)
from .exceptions import ConvergenceError, ItercurError
from .matcore import (
    DEFAULT_SIZE_CAP,
    aslinearoperator,
    as_matrix,
    make_rng,
    to_dense,
    transpose,
)
from .selection import deim, deim_select, leverage_scores, maxvol, normalize_distribution, qdeim, sample_distribution
from .svd import SvdConfig, dense_svd, svds

# residual singular values below this fraction of sigma_1(A) count as zero
CAPTURE_TOL = 1e-10


@dataclass
class AdaptiveConfig:
    """Parameters shared by the iterative drivers.

    Exactly one of the two schedules is active: a fixed count `c` per
    round, or the decay rule (`delta`, `ell`) that takes
    ``c = min(b, ell)`` where ``b`` is the number of residual singular
    values ``>= delta * sigma_1`` among the first ``k - |p|``.
    """

    k: int
    c: int | None = None
    delta: float | None = None
    ell: int | None = None
    two_sided: bool = False
    backend: str = "auto"
    strict: bool = False
    wedin: bool = False
    selector: str = "deim"
    seed: int = 0
    svd_rtol: float = 1e-10
    svd_kmax: int | None = None
    max_restarts: int = 300
    size_cap: int = DEFAULT_SIZE_CAP
    track_residual: bool | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if (self.c is None) == (self.delta is None):
            raise ValueError("give either a fixed count c or a decay threshold delta")
        if self.c is not None and not 1 <= self.c:
            raise ValueError("c must be at least 1")
        if self.delta is not None:
            if not 0.0 <= self.delta <= 1.0:
                raise ValueError("delta must lie in [0, 1]")
            if self.ell is None:
                self.ell = default_ell(self.k)
            if self.ell < 1:
                raise ValueError("ell must be at least 1")
        if self.backend not in ("dense", "krylov", "auto"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.selector not in ("deim", "lvg"):
            raise ValueError(f"unknown selector {self.selector!r}")

    @property
    def per_round_cap(self):
        return self.c if self.c is not None else self.ell


@dataclass
class RoundTrace:
    """What one round of an iterative driver did."""

    round: int
    side: str
    cols: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    count: int = 0
    sigma1: float = 0.0
    b: int | None = None
    matvecs: int = 0
    restarts: int = 0
    early_stop: bool = False
    fallback_steps: list = field(default_factory=list)
    residual_fro: float | None = None

    def as_dict(self):
        return {
            "round": self.round,
            "side": self.side,
            "cols": [int(i) for i in self.cols],
            "rows": [int(i) for i in self.rows],
            "count": int(self.count),
            "sigma1": float(self.sigma1),
            "b": None if self.b is None else int(self.b),
            "matvecs": int(self.matvecs),
            "restarts": int(self.restarts),
            "early_stop": bool(self.early_stop),
            "fallback_steps": [int(i) for i in self.fallback_steps],
            "residual_fro": None if self.residual_fro is None else float(self.residual_fro),
        }


def default_ell(k):
    return max(1, math.ceil(k / 10))


def per_round_from_rounds(k, t):
    """Fixed per-round count giving at most `t` rounds for rank `k`."""
    if t < 1:
        raise ValueError("t must be at least 1")
    return max(1, math.ceil(k / t))


def resolve_backend(A, backend, size_cap=DEFAULT_SIZE_CAP):
    if backend == "auto":
        m, n = A.shape
        return "dense" if m * n <= size_cap else "krylov"
    return backend


def decay_count(S, delta, budget, strict=False):
    """Last index ``i <= budget`` with ``S[i] >= delta * S[0]`` (1-based)."""
    vals = np.asarray(S)[:budget]
    thresh = delta * vals[0]
    hit = vals > thresh if strict else vals >= thresh
    b = int(np.count_nonzero(hit))
    return max(b, 1)


# -- singular triplets of the current residual ---------------------------------


@dataclass
class _Triplets:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    c: int
    b: int | None
    matvecs: int = 0
    restarts: int = 0
    early_stop: bool = False


def _dense_triplets(E, cfg, budget):
    res = dense_svd(E, cfg.size_cap)
    S = res.S
    if cfg.c is not None:
        c, b = min(cfg.c, budget), None
    else:
        b = decay_count(S, cfg.delta, min(budget, S.shape[0]), cfg.strict)
        c = min(b, cfg.ell)
    return _Triplets(res.U, S, res.V, c, b)


def _krylov_triplets(op, cfg, budget):
    want = min(cfg.per_round_cap, budget)
    base = SvdConfig(
        k=want,
        kmax=cfg.svd_kmax,
        rtol=cfg.svd_rtol,
        max_restarts=cfg.max_restarts,
        seed=cfg.seed,
        delta=cfg.delta,
        ell=cfg.ell,
        strict=cfg.strict,
        wedin=cfg.wedin and cfg.delta is not None and cfg.delta >= 1.0,
    )
    r = min(op.shape)
    kmax = min(base.kmax or 2 * want + 10, r)
    attempts = [base]
    if kmax < r:
        attempts.append(replace(base, kmax=min(2 * kmax, r)))
    total_mv = 0
    restarts = 0
    for cfg_try in attempts:
        res = svds(op, cfg_try)
        total_mv += res.matvec_count
        restarts += res.restarts
        if res.converged.all() or res.early_stop:
            break
    else:
        raise ConvergenceError(
            "Krylov SVD of the residual did not converge",
            {"converged": res.converged.tolist(), "residual_norm": res.residual_norm,
             "restarts": restarts, "matvecs": total_mv, "want": want},
        )
    c = res.rank
    # the solver resolves at most ell values, so b is only known up to that cap
    b = c if cfg.delta is not None else None
    return _Triplets(res.U, res.S, res.V, c, b, total_mv, restarts, res.early_stop)


def _triplets(E, backend, cfg, budget):
    if backend == "dense":
        return _dense_triplets(E, cfg, budget)
    return _krylov_triplets(E, cfg, budget)


# -- selection on a block of vectors ----------------------------------------------


def _pick(block, masked, cfg, rng, fallback):
    """Choose ``block.shape[1]`` indices from the rows of `block`."""
    if cfg.selector == "lvg":
        pr = normalize_distribution(leverage_scores(block), masked)
        return sample_distribution(pr, block.shape[1], rng), []
    return deim_select(block, masked_rows=masked, fallback=fallback)


# -- one-sided loop -----------------------------------------------------------------


def _one_sided(A, cfg, backend, side, rng, first=None):
    """Select up to ``cfg.k`` columns of `A` against ``A - C C^+ A``.

    `first` optionally supplies precomputed triplets for round 0 (reused
    left singular vectors when this is the row pass).  Returns the indices,
    the trace and the round-0 triplets (so the caller can reuse them).
    """
    k = cfg.k
    m, n = A.shape
    track = cfg.track_residual if cfg.track_residual is not None else backend == "dense"
    if backend == "dense":
        D = to_dense(A, cfg.size_cap)
        E = D
    else:
        op_a = aslinearoperator(A)
        E = op_a
        Q, T = None, None
    p = []
    trace = []
    round0 = None
    sigma_ref = None
    rnd = 0
    while len(p) < k:
        budget = k - len(p)
        if rnd == 0 and first is not None:
            trip = first
        else:
            trip = _triplets(E, backend, cfg, budget)
        if rnd == 0:
            round0 = trip
            sigma_ref = trip.S[0]
            if sigma_ref == 0:
                raise ItercurError("matrix is identically zero")
        elif trip.S[0] <= CAPTURE_TOL * sigma_ref:
            break
        c = min(trip.c, budget)
        block = trip.V[:, :c].copy()
        masked = np.asarray(p, dtype=np.intp)
        if cfg.selector == "lvg":
            new, fb = _pick(block, masked, cfg, rng, False)
        elif backend == "krylov":
            # the computed residual is only approximately zero on chosen columns
            new, fb = deim_select(block, masked_rows=masked, fallback=True)
        else:
            new, fb = deim_select(block)
        new = [int(i) for i in new]
        dup = set(new) & set(p)
        if dup:
            raise ItercurError(f"internal consistency: index {sorted(dup)} selected twice")
        p.extend(new)
        rec = RoundTrace(round=rnd, side=side, count=c, sigma1=float(trip.S[0]), b=trip.b,
                         matvecs=trip.matvecs, restarts=trip.restarts,
                         early_stop=trip.early_stop, fallback_steps=list(fb))
        if side == "row":
            rec.rows = new
        else:
            rec.cols = new
        if backend == "dense":
            X = interpolative_cx(D, p)
            E = D - D[:, p] @ X
            if track:
                rec.residual_fro = float(np.linalg.norm(E))
        else:
            Q, T = incremental_qr(Q, T, select_columns(A, new))
            E = residual_operator(op_a, Q)
            if track:
                rec.residual_fro = _projected_fro(A, Q)
        trace.append(rec)
        rnd += 1
    return p, trace, round0


def _projected_fro(A, Q):
    A = as_matrix(A)
    from .matcore import frobenius_norm
    fa = frobenius_norm(A)
    QtA = np.asarray((A.T @ Q).T)
    return float(np.sqrt(max(fa * fa - float(np.sum(QtA * QtA)), 0.0)))


def _run_one_sided(A, cfg, method):
    A = as_matrix(A)
    backend = resolve_backend(A, cfg.backend, cfg.size_cap)
    rng = make_rng(cfg.seed)
    p, col_trace, round0 = _one_sided(A, cfg, backend, "col", rng)
    At = transpose(A)
    # round 0 on A.T has the same singular values; its right vectors are
    # the left vectors of A already in hand
    first = _Triplets(round0.V, round0.S, round0.U, round0.c, round0.b)
    s, row_trace, _ = _one_sided(At, cfg, backend, "row", rng, first=first)
    return build_cur(A, p, s, method=method, trace=col_trace + row_trace)


# -- two-sided loop -------------------------------------------------------------------


def _run_two_sided(A, cfg, method):
    A = as_matrix(A)
    backend = resolve_backend(A, cfg.backend, cfg.size_cap)
    rng = make_rng(cfg.seed)
    k = cfg.k
    if backend == "dense":
        D = to_dense(A, cfg.size_cap)
        E = D
    else:
        E = aslinearoperator(A)
    p, s = [], []
    trace = []
    sigma_ref = None
    fact = None
    rnd = 0
    while len(p) < k:
        budget = k - len(p)
        trip = _triplets(E, backend, cfg, budget)
        if rnd == 0:
            sigma_ref = trip.S[0]
            if sigma_ref == 0:
                raise ItercurError("matrix is identically zero")
        elif trip.S[0] <= CAPTURE_TOL * sigma_ref:
            break
        c = min(trip.c, budget)
        pc, fb_p = _pick(trip.V[:, :c].copy(), np.asarray(p, dtype=np.intp), cfg, rng, True)
        sc, fb_s = _pick(trip.U[:, :c].copy(), np.asarray(s, dtype=np.intp), cfg, rng, True)
        pc = [int(i) for i in pc]
        sc = [int(i) for i in sc]
        if set(pc) & set(p) or set(sc) & set(s):
            raise ItercurError("internal consistency: masked index selected again")
        p.extend(pc)
        s.extend(sc)
        fact = build_cur(A, p, s, method=method)
        rec = RoundTrace(round=rnd, side="both", cols=pc, rows=sc, count=c,
                         sigma1=float(trip.S[0]), b=trip.b, matvecs=trip.matvecs,
                         restarts=trip.restarts, early_stop=trip.early_stop,
                         fallback_steps=sorted(set(fb_p) | set(fb_s)))
        if fb_p or fb_s:
            warnings.warn(f"round {rnd}: masked DEIM fell back at steps {rec.fallback_steps}",
                          RuntimeWarning)
        if backend == "dense":
            E = D - fact.C @ (fact.M @ fact.R)
            rec.residual_fro = float(np.linalg.norm(E))
        else:
            E = cur_residual_operator(A, fact.C, fact.M, fact.R)
        trace.append(rec)
        rnd += 1
    fact.trace = trace
    return fact


# -- public drivers ---------------------------------------------------------------------


def run(A, cfg, method=None):
    """Run the iterative driver described by `cfg`."""
    if method is None:
        fixed = "cadp" if cfg.c is not None else "dadp"
        method = f"{fixed}-{'cur' if cfg.two_sided else 'cx'}"
    if cfg.two_sided:
        return _run_two_sided(A, cfg, method)
    return _run_one_sided(A, cfg, method)


def cadp_cx(A, k, c, backend="auto", **opts):
    """Fixed ``c`` indices per round, one-sided residual ``A - C C^+ A``.

    When ``c`` does not divide ``k`` the last round takes the remainder.
    """
    return run(A, AdaptiveConfig(k=k, c=c, backend=backend, **opts), "cadp-cx")


def dadp_cx(A, k, delta=0.8, ell=None, backend="auto", **opts):
    """Decay-scheduled rounds, one-sided residual.

    Each round takes ``c = min(b, ell)`` indices, ``b`` being the number of
    residual singular values within a factor `delta` of the largest.
    """
    return run(A, AdaptiveConfig(k=k, delta=delta, ell=ell, backend=backend, **opts), "dadp-cx")


def dadp_cur(A, k, delta=0.8, ell=None, backend="auto", **opts):
    """Decay-scheduled rounds, two-sided residual ``A - C M R``."""
    cfg = AdaptiveConfig(k=k, delta=delta, ell=ell, two_sided=True, backend=backend, **opts)
    return run(A, cfg, "dadp-cur")


def cadp_cur(A, k, c, backend="auto", **opts):
    """Fixed ``c`` indices per round, two-sided residual."""
    return run(A, AdaptiveConfig(k=k, c=c, two_sided=True, backend=backend, **opts), "cadp-cur")


def dadp_cx_large(A, k, delta=0.8, ell=None, svd_cfg=None, **opts):
    """Matrix-free :func:`dadp_cx`.

    The residual is only ever applied as ``(I - Q Q^T) A``.  `svd_cfg` may
    carry ``rtol``, ``kmax``, ``max_restarts`` and ``seed`` for the inner
    Krylov SVD; with ``delta == 1`` the gap-based early stop is enabled
    unless ``wedin=False`` is passed.
    """
    if svd_cfg is not None:
        opts.setdefault("svd_rtol", svd_cfg.rtol)
        opts.setdefault("svd_kmax", svd_cfg.kmax)
        opts.setdefault("max_restarts", svd_cfg.max_restarts)
        opts.setdefault("seed", svd_cfg.seed)
    if delta is not None and delta >= 1.0:
        opts.setdefault("wedin", True)
    cfg = AdaptiveConfig(k=k, delta=delta, ell=ell, backend="krylov", **opts)
    return run(A, cfg, "dadp-cx")


def cadp_cx_lvg(A, k, c, seed=0, backend="krylov", **opts):
    """:func:`cadp_cx` with leverage-score sampling in place of DEIM."""
    cfg = AdaptiveConfig(k=k, c=c, backend=backend, selector="lvg", seed=seed, **opts)
    return run(A, cfg, "cadp-cx-lvg")


# -- one-round baselines ------------------------------------------------------------------


def leading_triplets(A, k, backend="auto", rtol=1e-10, seed=0, size_cap=DEFAULT_SIZE_CAP):
    """Top-`k` singular triplets of `A` by the chosen backend.

    Returns ``(U, S, V, stats)`` where `stats` holds the Krylov matvec and
    restart counts (zero for the dense backend).
    """
    A = as_matrix(A)
    backend = resolve_backend(A, backend, size_cap)
    if backend == "dense":
        res = dense_svd(A, size_cap)
        return res.U[:, :k], res.S[:k], res.V[:, :k], {"matvecs": 0, "restarts": 0}
    res = svds(A, SvdConfig(k=k, rtol=rtol, seed=seed))
    if not res.converged.all():
        raise ConvergenceError(
            "Krylov SVD did not converge",
            {"converged": res.converged.tolist(), "residual_norm": res.residual_norm},
        )
    return res.U, res.S, res.V, {"matvecs": res.matvec_count, "restarts": res.restarts}


def one_round_cur(A, k, selector="deim", backend="auto", rtol=1e-10, seed=0):
    """CUR from a single SVD: pick columns from ``V_k`` and rows from ``U_k``.

    `selector` is ``"deim"``, ``"qdeim"`` or ``"maxvol"``.
    """
    pickers = {"deim": deim, "qdeim": qdeim, "maxvol": maxvol}
    if selector not in pickers:
        raise ValueError(f"unknown selector {selector!r}")
    A = as_matrix(A)
    U, S, V, stats = leading_triplets(A, k, backend, rtol, seed)
    pick = pickers[selector]
    p, s = pick(V), pick(U)
    rec = RoundTrace(round=0, side="both", cols=[int(i) for i in p], rows=[int(i) for i in s],
                     count=k, sigma1=float(S[0]), **stats)
    return build_cur(A, p, s, method=selector, trace=[rec])


def volume_cur(A, k, t, seed=0):
    """Randomized baseline: adaptive squared-norm sampling of columns, then rows."""
    from .selection import volume_sampling

    if k % t:
        raise ValueError(f"volume sampling needs t | k, got k={k}, t={t}")
    A = as_matrix(A)
    rng = make_rng(seed)
    p = volume_sampling(A, k, t, k // t, rng)
    s = volume_sampling(transpose(A), k, t, k // t, rng)
    return build_cur(A, p, s, method="volume")
