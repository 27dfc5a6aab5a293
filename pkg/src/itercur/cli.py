"""Command-line harness: ``generate``, ``decompose``, ``benchmark``, ``verify``.

Reports are JSON documents carrying ``schema_version``; benchmark grids
also emit CSV.  Exit codes are a stable contract:

====  ==========================================
0     success
1     ``verify`` found a failing criterion
2     validation (bad flags, incompatible params)
3     ingestion (missing or malformed input)
4     numerical failure (convergence, rank)
====  ==========================================
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import hashlib
import io
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .adaptive import (
    cadp_cur,
    cadp_cx,
    cadp_cx_lvg,
    dadp_cur,
    dadp_cx,
    default_ell,
    one_round_cur,
    per_round_from_rounds,
    resolve_backend,
    volume_cur,
)
from .cur import frobenius_error, spectral_error, theorem_bound
from .exceptions import (
    ConvergenceError,
    ItercurError,
    MatrixMarketError,
    RankDeficiencyError,
    SingularSelectionError,
    SizeCapError,
)
from .matcore import (
    DEFAULT_SIZE_CAP,
    frobenius_norm,
    normalize_rows,
    read_matrix_market,
    synth_sparse,
    write_matrix_market,
)
from .svd import spectral_norm

SCHEMA_VERSION = "1.0"

EXIT_OK, EXIT_FAIL, EXIT_VALIDATION, EXIT_INGESTION, EXIT_NUMERICAL = 0, 1, 2, 3, 4

METHODS = ("deim", "qdeim", "maxvol", "volume", "lvg", "cadp-cx", "cadp-cur", "dadp-cx", "dadp-cur")

# which strategy parameters each method accepts
METHOD_PARAMS = {
    "deim": (),
    "qdeim": (),
    "maxvol": (),
    "volume": ("t",),
    "lvg": ("t", "c"),
    "cadp-cx": ("t", "c"),
    "cadp-cur": ("t", "c"),
    "dadp-cx": ("delta", "ell"),
    "dadp-cur": ("delta", "ell"),
}

CSV_COLUMNS = ("method", "k", "params", "rel_err_2", "rel_err_F", "seconds", "matvecs", "status", "error")

_NUM = {"type": "number"}
_ERR = {"type": ["object", "null"], "required": ["absolute", "relative"],
        "properties": {"absolute": _NUM, "relative": _NUM, "converged": {"type": "boolean"}}}

RUN_SCHEMA = {
    "type": "object",
    "required": ["spec", "shape", "errors", "diagnostics", "seconds", "matvecs", "p", "s", "trace"],
    "properties": {
        "spec": {
            "type": "object",
            "required": ["input", "method", "k", "params", "backend", "norm", "seed", "row_normalize"],
            "properties": {
                "method": {"enum": list(METHODS)},
                "k": {"type": "integer", "minimum": 1},
                "params": {"type": "object"},
                "backend": {"enum": ["dense", "krylov", "auto"]},
                "norm": {"enum": ["spectral", "frobenius", "both"]},
                "seed": {"type": "integer"},
                "row_normalize": {"type": "boolean"},
            },
        },
        "shape": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
        "errors": {"type": "object", "properties": {"spectral": _ERR, "frobenius": _ERR}},
        "diagnostics": {
            "type": ["object", "null"],
            "properties": {k: _NUM for k in ("eta_p", "eta_s", "sigma_kplus1", "bound", "cap_nk", "cap_mk")},
        },
        "seconds": _NUM,
        "matvecs": {"type": "integer", "minimum": 0},
        "p": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "s": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "trace": {"type": "array", "items": {"type": "object"}},
    },
}

# a benchmark cell that raised; the grid keeps going
FAILED_RUN_SCHEMA = {
    "type": "object",
    "required": ["spec", "status", "error", "code"],
    "properties": {
        "spec": {"type": "object", "required": ["input", "method", "k", "params"]},
        "status": {"enum": ["validation", "ingestion", "numerical"]},
        "error": {"type": "string"},
        "code": {"enum": [2, 3, 4]},
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "itercur run report",
    "type": "object",
    "required": ["schema_version", "runs"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "runs": {"type": "array", "items": {"anyOf": [RUN_SCHEMA, FAILED_RUN_SCHEMA]}},
    },
}

ERROR_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "error"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "error": {
            "type": "object",
            "required": ["code", "kind", "message"],
            "properties": {"code": {"enum": [2, 3, 4]}, "kind": {"type": "string"},
                           "message": {"type": "string"}},
        },
    },
}


class CliError(Exception):
    """An error carrying its exit code and kind."""

    def __init__(self, code, kind, message):
        super().__init__(message)
        self.code = code
        self.kind = kind


def classify(exc):
    """Map an exception onto ``(exit code, kind)``."""
    if isinstance(exc, CliError):
        return exc.code, exc.kind
    if isinstance(exc, (MatrixMarketError, FileNotFoundError, IsADirectoryError, PermissionError)):
        return EXIT_INGESTION, "ingestion"
    if isinstance(exc, (ConvergenceError, RankDeficiencyError, SingularSelectionError,
                        np.linalg.LinAlgError, ItercurError)) and not isinstance(exc, SizeCapError):
        return EXIT_NUMERICAL, "numerical"
    if isinstance(exc, (ValueError, SizeCapError, TypeError)):
        return EXIT_VALIDATION, "validation"
    return EXIT_NUMERICAL, "numerical"


def dumps(obj):
    """JSON text; non-finite numbers are an error, never silently emitted."""
    return json.dumps(obj, allow_nan=False, indent=2, sort_keys=False)


def error_object(code, kind, message):
    return {"schema_version": SCHEMA_VERSION, "error": {"code": code, "kind": kind, "message": message}}


# -- inputs ---------------------------------------------------------------------------


def input_key(inp):
    if "path" in inp:
        return os.fspath(inp["path"])
    s = inp["synth"]
    return f"synth:{s['m']}x{s['n']}:{s.get('density', 0.025)}:{s.get('seed', 0)}"


def load_input(inp, row_normalize=False):
    """Load ``{"path": ...}`` or ``{"synth": {"m", "n", "density", "seed"}}``."""
    if "path" in inp:
        path = os.fspath(inp["path"])
        if not os.path.exists(path):
            raise FileNotFoundError(f"input file not found: {path}")
        A = read_matrix_market(path)
    else:
        s = inp["synth"]
        A = synth_sparse(int(s["m"]), int(s["n"]), float(s.get("density", 0.025)), int(s.get("seed", 0)))
    return normalize_rows(A) if row_normalize else A


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cached_norms(inp, A, row_normalize, use_cache=True):
    """``(||A||_2, ||A||_F)``, cached in a ``<input>.norms.json`` sidecar.

    The sidecar is keyed by the file's SHA-256 and the row-normalization
    flag, so an edited input never reuses a stale value.
    """
    def compute():
        return spectral_norm(A), frobenius_norm(A)

    if not use_cache or "path" not in inp:
        return compute()
    path = os.fspath(inp["path"])
    sidecar = path + ".norms.json"
    digest = _file_digest(path)
    key = "row_normalized" if row_normalize else "raw"
    data = {}
    if os.path.exists(sidecar):
        try:
            with open(sidecar) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError):
            data = {}
        if data.get("sha256") != digest:
            data = {}
        elif key in data:
            return float(data[key]["spectral"]), float(data[key]["frobenius"])
    spec, fro = compute()
    data["sha256"] = digest
    data[key] = {"spectral": spec, "frobenius": fro}
    try:
        with open(sidecar, "w") as fh:
            json.dump(data, fh)
    except OSError:
        pass
    return spec, fro


# -- one run ----------------------------------------------------------------------------


def validate_params(method, k, params):
    """Reject parameters the method does not take, before any work starts."""
    if method not in METHODS:
        raise CliError(EXIT_VALIDATION, "validation", f"unknown method {method!r}")
    if int(k) < 1:
        raise CliError(EXIT_VALIDATION, "validation", f"rank must be positive, got {k}")
    given = {name for name, val in params.items() if val is not None}
    bad = given - set(METHOD_PARAMS[method])
    if bad:
        raise CliError(EXIT_VALIDATION, "validation",
                       f"method {method} does not take {', '.join(sorted(bad))}")
    if "t" in given and "c" in given:
        raise CliError(EXIT_VALIDATION, "validation", "give t or c, not both")
    for name in ("t", "c", "ell"):
        if name in given and int(params[name]) < 1:
            raise CliError(EXIT_VALIDATION, "validation", f"{name} must be at least 1")
    if "delta" in given and not 0.0 <= float(params["delta"]) <= 1.0:
        raise CliError(EXIT_VALIDATION, "validation", "delta must lie in [0, 1]")
    if method == "volume":
        t = int(params.get("t") or 10)
        if k % t:
            raise CliError(EXIT_VALIDATION, "validation", f"volume sampling needs t to divide k (k={k}, t={t})")


def resolved_params(method, k, params):
    """Fill strategy defaults: ``t = 10``, ``delta = 0.8``, ``ell = ceil(k/10)``."""
    out = {}
    if method in ("cadp-cx", "cadp-cur", "lvg"):
        if params.get("c") is not None:
            out["c"] = int(params["c"])
        else:
            out["t"] = int(params.get("t") or 10)
            out["c"] = per_round_from_rounds(k, out["t"])
    elif method in ("dadp-cx", "dadp-cur"):
        out["delta"] = 0.8 if params.get("delta") is None else float(params["delta"])
        out["ell"] = default_ell(k) if params.get("ell") is None else int(params["ell"])
    elif method == "volume":
        out["t"] = int(params.get("t") or 10)
    return out


def param_string(params):
    return ";".join(f"{k}={params[k]}" for k in sorted(params))


def run_method(A, method, k, params, backend="auto", seed=0):
    """Dispatch one method; `params` must already be resolved."""
    if method in ("deim", "qdeim", "maxvol"):
        return one_round_cur(A, k, method, backend=backend, seed=seed)
    if method == "volume":
        return volume_cur(A, k, params["t"], seed=seed)
    if method == "lvg":
        return cadp_cx_lvg(A, k, params["c"], seed=seed,
                           backend="krylov" if backend == "auto" else backend)
    if method == "cadp-cx":
        return cadp_cx(A, k, params["c"], backend=backend, seed=seed)
    if method == "cadp-cur":
        return cadp_cur(A, k, params["c"], backend=backend, seed=seed)
    if method == "dadp-cx":
        return dadp_cx(A, k, params["delta"], params["ell"], backend=backend, seed=seed)
    return dadp_cur(A, k, params["delta"], params["ell"], backend=backend, seed=seed)


def _finite(x):
    return None if x is None or not math.isfinite(x) else float(x)


def execute(A, inp, method, k, params, backend="auto", norm="both", seed=0,
            row_normalize=False, norms=None):
    """Run one spec and return its report dictionary."""
    validate_params(method, k, params)
    m, n = A.shape
    if k > min(m, n):
        raise CliError(EXIT_VALIDATION, "validation", f"rank {k} exceeds min(m, n) = {min(m, n)}")
    full = resolved_params(method, k, params)
    t0 = time.perf_counter()
    fact = run_method(A, method, k, full, backend, seed)
    seconds = time.perf_counter() - t0

    norm2, normF = norms if norms is not None else (None, None)
    errors = {"spectral": None, "frobenius": None}
    dense_ok = m * n <= DEFAULT_SIZE_CAP
    if norm in ("spectral", "both"):
        est = spectral_error(A, fact, "dense" if dense_ok else "operator", norm_A=norm2)
        errors["spectral"] = {"absolute": est.absolute, "relative": est.relative, "converged": est.converged}
    if norm in ("frobenius", "both"):
        est = frobenius_error(A, fact, norm_A=normF)
        errors["frobenius"] = {"absolute": est.absolute, "relative": est.relative, "converged": True}

    diagnostics = None
    if resolve_backend(A, backend) == "dense" and len(fact.p) == len(fact.s):
        try:
            d = theorem_bound(A, fact)
            diagnostics = {"eta_p": d.eta_p, "eta_s": d.eta_s, "sigma_kplus1": d.sigma_kplus1,
                           "bound": d.bound, "cap_nk": d.cap_nk, "cap_mk": d.cap_mk}
            if not all(math.isfinite(v) for v in diagnostics.values()):
                diagnostics = None
        except (np.linalg.LinAlgError, ValueError):
            diagnostics = None

    return {
        "spec": {
            "input": input_key(inp),
            "method": method,
            "k": int(k),
            "params": full,
            "backend": backend,
            "norm": norm,
            "seed": int(seed),
            "row_normalize": bool(row_normalize),
        },
        "shape": [int(m), int(n)],
        "errors": errors,
        "diagnostics": diagnostics,
        "seconds": float(seconds),
        "matvecs": int(sum(r.matvecs for r in fact.trace)),
        "p": [int(i) for i in fact.p],
        "s": [int(i) for i in fact.s],
        "trace": [r.as_dict() for r in fact.trace],
    }


# -- subcommands ------------------------------------------------------------------------------


def cmd_generate(args, out):
    A = synth_sparse(args.m, args.n, args.density, seed=args.seed, terms=args.terms)
    comment = f"synthetic m={args.m} n={args.n} density={args.density} seed={args.seed}"
    write_matrix_market(args.output, A, comment=comment)
    out.write(dumps({"schema_version": SCHEMA_VERSION, "path": os.fspath(args.output),
                     "m": args.m, "n": args.n, "nnz": int(A.nnz), "seed": args.seed}) + "\n")
    return EXIT_OK


def _input_from_args(args):
    if args.input is not None:
        return {"path": args.input}
    m, n = args.synth
    return {"synth": {"m": m, "n": n, "density": args.density, "seed": args.seed}}


def cmd_decompose(args, out):
    params = {"t": args.t, "c": args.c, "delta": args.delta, "ell": args.ell}
    for k in args.rank:
        validate_params(args.method, k, params)
    inp = _input_from_args(args)
    A = load_input(inp, args.row_normalize)
    norms = cached_norms(inp, A, args.row_normalize, use_cache=not args.no_cache)
    runs = [execute(A, inp, args.method, k, params, args.backend, args.norm, args.seed,
                    args.row_normalize, norms) for k in args.rank]
    text = dumps({"schema_version": SCHEMA_VERSION, "runs": runs}) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        out.write(text)
    return EXIT_OK


def load_grid(path):
    """Parse a benchmark grid file into ``(input, options, cells)``.

    The file is JSON::

        {"input": {"path": "A.mtx"} | {"synth": {"m": .., "n": .., "density": .., "seed": ..}},
         "methods": ["deim", {"method": "cadp-cx", "t": 5}, ...],
         "ranks": [10, 20],
         "backend": "auto", "norm": "both", "seed": 0, "row_normalize": false}
    """
    try:
        with open(path) as fh:
            grid = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_VALIDATION, "validation", f"{path}: not valid JSON: {exc}") from exc
    for key in ("input", "methods", "ranks"):
        if key not in grid:
            raise CliError(EXIT_VALIDATION, "validation", f"{path}: missing '{key}'")
    inp = grid["input"]
    if not isinstance(inp, dict) or not ({"path", "synth"} & set(inp)):
        raise CliError(EXIT_VALIDATION, "validation", f"{path}: input needs 'path' or 'synth'")
    if "path" in inp and not os.path.isabs(inp["path"]):
        inp = {"path": os.path.join(os.path.dirname(os.path.abspath(path)), inp["path"])}
    opts = {
        "backend": grid.get("backend", "auto"),
        "norm": grid.get("norm", "both"),
        "seed": int(grid.get("seed", 0)),
        "row_normalize": bool(grid.get("row_normalize", False)),
    }
    cells = []
    for entry in grid["methods"]:
        if isinstance(entry, str):
            entry = {"method": entry}
        entry = dict(entry)
        method = entry.pop("method")
        for k in grid["ranks"]:
            cells.append((method, int(k), entry))
    return inp, opts, cells


_WORKER = {}


def _cell(inp, opts, method, k, params, norms):
    key = (input_key(inp), opts["row_normalize"])
    if _WORKER.get("key") != key:
        _WORKER["key"] = key
        _WORKER["A"] = load_input(inp, opts["row_normalize"])
    A = _WORKER["A"]
    try:
        rep = execute(A, inp, method, k, params, opts["backend"], opts["norm"], opts["seed"],
                      opts["row_normalize"], norms)
        rep["status"] = "ok"
        rep["error"] = None
    except Exception as exc:
        code, kind = classify(exc)
        rep = {"spec": {"input": input_key(inp), "method": method, "k": k,
                        "params": {p: v for p, v in params.items() if v is not None}},
               "status": kind, "error": str(exc), "code": code}
    return rep


def _csv_row(rep):
    spec = rep["spec"]
    errors = rep.get("errors") or {}
    rel2 = (errors.get("spectral") or {}).get("relative")
    relF = (errors.get("frobenius") or {}).get("relative")
    return {
        "method": spec["method"],
        "k": spec["k"],
        "params": param_string(spec.get("params", {})),
        "rel_err_2": "" if rel2 is None else repr(rel2),
        "rel_err_F": "" if relF is None else repr(relF),
        "seconds": repr(rep["seconds"]) if "seconds" in rep else "",
        "matvecs": rep.get("matvecs", ""),
        "status": rep["status"],
        "error": rep["error"] or "",
    }


def grid_csv(reports):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rep in reports:
        writer.writerow(_csv_row(rep))
    return buf.getvalue()


def worker_count():
    """Parallel grid workers from ``ITERCUR_THREADS`` (default 1)."""
    raw = os.environ.get("ITERCUR_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise CliError(EXIT_VALIDATION, "validation", f"ITERCUR_THREADS must be an integer, got {raw!r}")


def run_grid(inp, opts, cells, use_cache=True):
    A = load_input(inp, opts["row_normalize"])
    norms = cached_norms(inp, A, opts["row_normalize"], use_cache)
    _WORKER.update(key=(input_key(inp), opts["row_normalize"]), A=A)
    workers = worker_count()
    if workers == 1:
        reports = [_cell(inp, opts, m, k, p, norms) for m, k, p in cells]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_cell, inp, opts, m, k, p, norms) for m, k, p in cells]
            reports = [f.result() for f in futs]
    return sorted(reports, key=lambda r: (r["spec"]["method"], r["spec"]["k"],
                                          param_string(r["spec"].get("params", {}))))


def cmd_benchmark(args, out):
    inp, opts, cells = load_grid(args.grid)
    reports = run_grid(inp, opts, cells, use_cache=not args.no_cache)
    table = grid_csv(reports)
    doc = {"schema_version": SCHEMA_VERSION, "runs": reports}
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fh.write(table)
    else:
        out.write(table)
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(dumps(doc) + "\n")
    return EXIT_OK


def cmd_verify(args, out):
    from . import acceptance

    failed = False
    for crit in acceptance.HERMETIC:
        number = int(crit.__name__.rsplit("_", 1)[1])
        if args.skip_slow and number == 5:
            res = acceptance.CriterionResult(5, "iterative beats one-round DEIM", None, "skipped by --skip-slow")
        else:
            res = crit(tol_scale=args.tolerance_scale)
        failed |= res.passed is False
        out.write(res.line() + "\n")
        out.flush()
    res = acceptance.criterion_8(args.data_dir, tol_scale=args.tolerance_scale)
    failed |= res.passed is False
    out.write(res.line() + "\n")
    return EXIT_FAIL if failed else EXIT_OK


# -- parser -------------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors become JSON error objects (exit 2)."""

    def error(self, message):
        raise CliError(EXIT_VALIDATION, "validation", f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="itercur", description="CUR factorizations by iterative DEIM subselection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic sparse test matrix")
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--density", type=float, default=0.025)
    g.add_argument("--terms", type=int, default=None, help="rank-one terms (default n)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True, help="Matrix Market file to write")
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("decompose", help="run one method and print a JSON report")
    src = d.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="Matrix Market file")
    src.add_argument("--synth", type=int, nargs=2, metavar=("M", "N"), help="generate the input in memory")
    d.add_argument("--density", type=float, default=0.025, help="density for --synth")
    d.add_argument("--method", choices=METHODS, required=True)
    d.add_argument("-k", "--rank", type=int, nargs="+", required=True)
    d.add_argument("--t", type=int, default=None, help="rounds (cadp-*, lvg, volume)")
    d.add_argument("--c", type=int, default=None, help="indices per round (cadp-*, lvg)")
    d.add_argument("--delta", type=float, default=None, help="decay threshold (dadp-*)")
    d.add_argument("--ell", type=int, default=None, help="per-round cap (dadp-*)")
    d.add_argument("--backend", choices=("dense", "krylov", "auto"), default="auto")
    d.add_argument("--norm", choices=("spectral", "frobenius", "both"), default="both")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--row-normalize", action="store_true")
    d.add_argument("--no-cache", action="store_true", help="do not read or write the norm sidecar")
    d.add_argument("-o", "--output", default=None, help="write the report here instead of stdout")
    d.set_defaults(func=cmd_decompose)

    b = sub.add_parser("benchmark", help="run a method x rank grid")
    b.add_argument("grid", help="JSON grid file")
    b.add_argument("--csv", default=None, help="CSV output path (default stdout)")
    b.add_argument("--json", default=None, help="JSON report path")
    b.add_argument("--no-cache", action="store_true")
    b.set_defaults(func=cmd_benchmark)

    v = sub.add_parser("verify", help="run the seeded acceptance suite")
    v.add_argument("--skip-slow", action="store_true", help="skip the large synthetic experiment")
    v.add_argument("--data-dir", default=None, help="directory with real datasets (.mtx)")
    v.add_argument("--tolerance-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, out)
    except SystemExit as exc:
        # --help and --version
        return exc.code or 0
    except Exception as exc:
        code, kind = classify(exc)
        out.write(dumps(error_object(code, kind, str(exc))) + "\n")
        return code


if __name__ == "__main__":
    sys.exit(main())
