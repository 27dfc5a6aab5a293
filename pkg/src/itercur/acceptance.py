"""Seeded acceptance checks, shared by ``itercur verify`` and the test suite.

Each ``criterion_N`` function returns a :class:`CriterionResult`.  The
keyword `tol_scale` multiplies every tolerance; it exists so a negative
control can show that tightened tolerances turn the suite red.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .adaptive import cadp_cur, cadp_cx, dadp_cur, dadp_cx, dadp_cx_large, one_round_cur
from .cur import residual_cx, residual_operator, spectral_error, theorem_bound
from .matcore import make_rng, normalize_rows, read_matrix_market, synth_sparse
from .selection import deim_select, volume_sampling
from .svd import SvdConfig, dense_svd, svds


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool | None
    detail: str = ""
    seconds: float = 0.0

    @property
    def status(self):
        return {True: "PASS", False: "FAIL", None: "SKIP"}[self.passed]

    def line(self):
        return f"[{self.status}] criterion {self.number}: {self.name} ({self.detail})"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _with_spectrum(rng, m, n, S):
    r = min(m, n)
    U, _ = np.linalg.qr(rng.standard_normal((m, r)))
    V, _ = np.linalg.qr(rng.standard_normal((n, r)))
    return (U * S) @ V.T


def _decaying(rng, m, n, rate=0.8):
    """Random dense matrix with singular values ``rate**i``."""
    return _with_spectrum(rng, m, n, rate ** np.arange(min(m, n)))


def _random_spectrum(rng, m, n, low, high):
    """Random dense matrix with sorted uniform singular values in ``[low, high)``."""
    return _with_spectrum(rng, m, n, np.sort(rng.uniform(low, high, min(m, n)))[::-1])


@_timed
def criterion_1(tol_scale=1.0):
    """Krylov SVD against dense SVD on 20 random matrices."""
    worst = 0.0
    t0 = time.perf_counter()
    for seed in range(20):
        rng = make_rng(seed)
        shape = (300, 200) if seed % 2 == 0 else (150, 150)
        A = rng.standard_normal(shape)
        res = svds(A, SvdConfig(k=10, rtol=1e-10, seed=seed))
        ref = dense_svd(A).S[:10]
        worst = max(worst, float(np.max(np.abs(res.S - ref) / ref)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 * tol_scale and elapsed < 5.0
    return CriterionResult(1, "Krylov SVD matches dense SVD", ok,
                           f"max rel err {worst:.2e}, {elapsed:.2f} s")


@_timed
def criterion_2(tol_scale=1.0):
    """Error bound ``||A - CMR|| <= (eta_s + eta_p) sigma_{k+1}`` for DEIM indices."""
    worst = -np.inf
    violations = 0
    for seed in range(50):
        A = make_rng(1000 + seed).standard_normal((40, 30))
        svd = dense_svd(A)
        for k in (2, 5):
            f = one_round_cur(A, k, "deim", backend="dense")
            d = theorem_bound(A, f, svd)
            slack = 1e-10 * tol_scale * max(d.bound, d.sigma_kplus1)
            worst = max(worst, d.achieved / d.bound)
            if d.achieved > d.bound + slack:
                violations += 1
    return CriterionResult(2, "CUR error bound holds", violations == 0,
                           f"{violations} violations, max achieved/bound {worst:.3f}")


@_timed
def criterion_3(tol_scale=1.0):
    """Degenerate settings reproduce one-round DEIM indices."""
    mismatches = 0
    for seed in range(20):
        rng = make_rng(2000 + seed)
        A = _decaying(rng, 50, 35, 0.85)
        k = 4 + seed % 5
        ref = one_round_cur(A, k, "deim", backend="dense")
        runs = [
            dadp_cx(A, k, delta=0.0, ell=k, backend="dense"),
            dadp_cur(A, k, delta=0.0, ell=k, backend="dense"),
            cadp_cx(A, k, c=k, backend="dense"),
            cadp_cur(A, k, c=k, backend="dense"),
        ]
        for f in runs:
            if not (np.array_equal(f.p, ref.p) and np.array_equal(f.s, ref.s)):
                mismatches += 1
    return CriterionResult(3, "degenerate settings equal one-round DEIM", mismatches == 0,
                           f"{mismatches} mismatches over 80 runs")


def _min_gap(S, upto):
    s = S[: upto + 1]
    if s.shape[0] < 2:
        return np.inf
    return float(np.min(-np.diff(s)))


def _dense_rounds_separated(A, trace, gap, delta):
    """True when every dense round is well posed up to `gap`.

    The leading singular values must be separated by ``gap * sigma_1`` and
    no ratio ``sigma_i / sigma_1`` may sit within `gap` of the threshold
    `delta`, where the decay count itself would be decided by rounding.
    """
    A = np.asarray(A)
    for side, M in (("col", A), ("row", A.T)):
        chosen = []
        for rec in (r for r in trace if r.side == side):
            E = M if not chosen else residual_cx(M, chosen)
            S = scipy.linalg.svdvals(E)
            if _min_gap(S, rec.count) <= gap * S[0]:
                return False
            if np.any(np.abs(S / S[0] - delta) <= gap):
                return False
            chosen.extend(rec.cols if side == "col" else rec.rows)
    return True


@_timed
def criterion_4(tol_scale=1.0):
    """Implicit residual products and matrix-free index agreement."""
    worst = 0.0
    for inst in range(10):
        rng = make_rng(3000 + inst)
        m, n = 60 + 5 * inst, 40 + 3 * inst
        A = rng.standard_normal((m, n))
        p = rng.choice(n, size=5 + inst % 4, replace=False)
        Q, _ = np.linalg.qr(A[:, p])
        E = A - Q @ (Q.T @ A)
        op = residual_operator(A, Q)
        fro = np.linalg.norm(A)
        for _ in range(10):
            x = rng.standard_normal(n)
            y = rng.standard_normal(m)
            worst = max(worst, np.linalg.norm(op.matvec(x) - E @ x) / (fro * np.linalg.norm(x)),
                        np.linalg.norm(op.rmatvec(y) - E.T @ y) / (fro * np.linalg.norm(y)))
    ops_ok = worst <= 1e-12 * tol_scale

    compared = mismatches = 0
    for inst in range(10):
        rng = make_rng(3100 + inst)
        A = _random_spectrum(rng, 70 + 3 * inst, 50 + 2 * inst, 0.01, 1.0)
        k = 8
        ref = dadp_cx(A, k, delta=0.8, ell=3, backend="dense")
        if not _dense_rounds_separated(A, ref.trace, 1e-6, 0.8):
            continue
        compared += 1
        big = dadp_cx_large(A, k, delta=0.8, ell=3, svd_rtol=1e-12)
        if not (np.array_equal(big.p, ref.p) and np.array_equal(big.s, ref.s)):
            mismatches += 1
    ok = ops_ok and compared > 0 and mismatches == 0
    return CriterionResult(4, "implicit residual fidelity", ok,
                           f"max rel product err {worst:.2e}; {mismatches}/{compared} index mismatches")


EXPERIMENT_METHODS = ("cadp-cx", "cadp-cur", "dadp-cx", "dadp-cur")


def experiment_errors(A, k=30, t=10, delta=0.8, ell=3, backend="auto"):
    """Relative spectral errors of one-round DEIM and the four iterative drivers."""
    c = max(1, k // t)
    fits = {
        "deim": one_round_cur(A, k, "deim", backend=backend),
        "cadp-cx": cadp_cx(A, k, c, backend=backend),
        "cadp-cur": cadp_cur(A, k, c, backend=backend),
        "dadp-cx": dadp_cx(A, k, delta, ell, backend=backend),
        "dadp-cur": dadp_cur(A, k, delta, ell, backend=backend),
    }
    D = A.toarray() if hasattr(A, "toarray") else np.asarray(A)
    norm_a = float(scipy.linalg.norm(D, 2))
    return {name: spectral_error(D, f, "dense", norm_A=norm_a).relative for name, f in fits.items()}


@_timed
def criterion_5(tol_scale=1.0, m=5000, n=300, seeds=range(5)):
    """Iterative drivers match or beat one-round DEIM on the synthetic matrix."""
    good = 0
    notes = []
    for seed in seeds:
        A = synth_sparse(m, n, 0.025, seed=seed)
        errs = experiment_errors(A)
        base = errs["deim"]
        within = all(errs[mth] <= 1.05 * base * tol_scale for mth in EXPERIMENT_METHODS)
        lower = sum(errs[mth] < base * tol_scale for mth in EXPERIMENT_METHODS)
        if within and lower >= 3:
            good += 1
        notes.append(f"seed {seed}: deim {base:.4f} best {min(errs[x] for x in EXPERIMENT_METHODS):.4f} lower {lower}/4")
    return CriterionResult(5, "iterative beats one-round DEIM", good >= 4,
                           f"{good}/{len(list(seeds))} seeds good; " + "; ".join(notes))


@_timed
def criterion_6(tol_scale=1.0):
    """Per-round one-sided residual Frobenius norm never increases."""
    runs = increases = 0
    worst = 0.0
    for seed in range(50):
        rng = make_rng(4000 + seed)
        A = _decaying(rng, 45, 35, 0.75 + 0.004 * seed) if seed % 2 else rng.standard_normal((45, 35))
        k = 6 + seed % 7
        f = cadp_cx(A, k, 1 + seed % 3, backend="dense") if seed % 2 == 0 else dadp_cx(A, k, 0.8, 2, backend="dense")
        runs += 1
        scale = np.linalg.norm(A)
        for side in ("col", "row"):
            vals = [scale] + [r.residual_fro for r in f.trace if r.side == side]
            d = np.diff(vals)
            worst = max(worst, float(d.max()) / scale)
            increases += int(np.sum(d > 1e-10 * tol_scale * scale))
    return CriterionResult(6, "one-sided residual is monotone", increases == 0,
                           f"{increases} increases over {runs} runs, max rel step {worst:.2e}")


VOLUME_FIXTURE = np.array([
    [3.0, 1.0, 0.0, 2.0, 0.5],
    [0.0, 2.0, 1.0, 0.0, 0.5],
    [1.0, 0.0, 2.0, 1.0, 0.5],
    [0.0, 1.0, 0.0, 1.0, 0.5],
])


@_timed
def criterion_7(tol_scale=1.0, draws=10_000):
    """First-round volume-sampling frequencies follow squared column norms."""
    A = VOLUME_FIXTURE
    target = np.sum(A * A, axis=0) / np.sum(A * A)
    counts = np.zeros(A.shape[1])
    for seed in range(draws):
        counts[volume_sampling(A, 1, 1, 1, seed=seed)[0]] += 1
    freq = counts / draws
    se = np.sqrt(target * (1 - target) / draws)
    z = np.abs(freq - target) / se
    ok = bool(np.all(z <= 3.0 * tol_scale))
    return CriterionResult(7, "volume sampling frequencies", ok, f"max |z| {z.max():.2f}")


def _deim_pick_from_residual(M, chosen):
    """Index the fully converged leading right vector of the residual would give."""
    E = M if not chosen else residual_cx(M, chosen)
    v = dense_svd(E).V[:, :1]
    idx, _ = deim_select(v, masked_rows=np.asarray(chosen, dtype=np.intp), fallback=True)
    return int(idx[0])


@_timed
def criterion_9(tol_scale=1.0):
    """Rounds ended by the gap-based early stop still pick the converged index."""
    fired = mismatches = 0
    for seed in range(30):
        rng = make_rng(5000 + seed)
        # a clustered spectrum keeps the leading triplet from converging in
        # one cycle, so the early stop has something to cut short
        A = _random_spectrum(rng, 120, 90, 0.5, 1.0)
        f = dadp_cx_large(A, 6, delta=1.0, ell=1, svd_rtol=1e-13, svd_kmax=8)
        for side, M in (("col", A), ("row", A.T)):
            chosen = []
            for rec in (r for r in f.trace if r.side == side):
                got = rec.cols if side == "col" else rec.rows
                if rec.early_stop:
                    fired += 1
                    if _deim_pick_from_residual(M, chosen) != got[0]:
                        mismatches += 1
                chosen.extend(got)
    ok = fired > 0 and mismatches == 0
    return CriterionResult(9, "early stop picks the converged index", ok,
                           f"{mismatches} mismatches over {fired} early-stopped rounds")


# -- criterion 8: user-supplied datasets -------------------------------------------

DATASET_TARGETS = {
    # file stem: (rank, row-normalize, {method: expected relative error}, tolerance)
    "reuters": (50, True, {"cadp-cur": 0.22, "dadp-cur": 0.21, "cadp-cx": 0.21, "dadp-cx": 0.21}, 0.02),
    "g7jac100": (100, False, {"cadp-cx": 0.29, "cadp-cur": 0.29}, 0.03),
    "invextr1_new": (500, False, {"cadp-cx": 0.13, "cadp-cur": 0.13}, 0.02),
}


def _find_dataset(data_dir, stem):
    for name in (f"{stem}.mtx", f"{stem.replace('_', '-')}.mtx"):
        path = os.path.join(data_dir, name)
        if os.path.exists(path):
            return path
    return None


@_timed
def criterion_8(data_dir=None, tol_scale=1.0):
    """Real-data errors; skipped unless ``ITERCUR_DATA_DIR`` holds the files."""
    data_dir = data_dir or os.environ.get("ITERCUR_DATA_DIR")
    if not data_dir or not os.path.isdir(data_dir):
        return CriterionResult(8, "real-data error levels", None, "no dataset directory")
    from .svd import spectral_norm

    runners = {
        "cadp-cx": lambda A, k: cadp_cx(A, k, max(1, k // 10), backend="krylov"),
        "cadp-cur": lambda A, k: cadp_cur(A, k, max(1, k // 10), backend="krylov"),
        "dadp-cx": lambda A, k: dadp_cx(A, k, 0.8, max(1, k // 10), backend="krylov"),
        "dadp-cur": lambda A, k: dadp_cur(A, k, 0.8, max(1, k // 10), backend="krylov"),
    }
    found = 0
    failures = []
    notes = []
    for stem, (k, norm_rows, targets, tol) in DATASET_TARGETS.items():
        path = _find_dataset(data_dir, stem)
        if path is None:
            continue
        found += 1
        A = read_matrix_market(path)
        if norm_rows:
            A = normalize_rows(A)
        norm_a = spectral_norm(A)
        for method, expected in targets.items():
            f = runners[method](A, k)
            err = spectral_error(A, f, "operator", norm_A=norm_a).relative
            notes.append(f"{stem} {method} {err:.3f} vs {expected}")
            if abs(err - expected) > tol * tol_scale:
                failures.append(f"{stem}/{method}")
    if not found:
        return CriterionResult(8, "real-data error levels", None, f"no datasets in {data_dir}")
    return CriterionResult(8, "real-data error levels", not failures, "; ".join(notes))


HERMETIC = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_9)


def run_all(tol_scale=1.0, include_data=True):
    """Run every criterion in order and return the results."""
    results = [c(tol_scale=tol_scale) for c in HERMETIC]
    if include_data:
        results.append(criterion_8(tol_scale=tol_scale))
    return sorted(results, key=lambda r: r.number)
