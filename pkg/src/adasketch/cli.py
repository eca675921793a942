"""Benchmark CLI: generate instances, run solvers, compare them, and sweep
concentration diagnostics.

Every output file gets a manifest sidecar (resolved flags, seed, package
version, input digests) so runs can be reproduced; identical flags and seed
give identical non-timing output. Exit codes: 0 success, 2 flag errors,
3 I/O errors, 4 numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import estimate_event_probability
from .errors import (
    AdasketchError,
    BreakdownDetected,
    ConvergenceFailure,
    FlagConflict,
    InvalidDecay,
    InvalidProbability,
    InvalidSparsity,
    IoFormatError,
    MalformedCsv,
    NegativeValue,
    NonNumericField,
    NotPositiveDefinite,
    NotPowerOfTwo,
    SketchTooLarge,
)
from .problem import (
    RegularizedProblem,
    direct_solve,
    exact_error,
    gen_synthetic,
    load_matrix,
    save_matrix,
)
from .solvers import (
    AdaptiveConfig,
    SolverTrace,
    TraceRecord,
    adaptive_run,
    cg,
    ihs_run,
    pcg_run,
    polyak_ihs_run,
)

TRACE_COLUMNS = [
    "t",
    "m_t",
    "K_t",
    "delta_tilde",
    "delta_exact",
    "rel_error",
    "rel_is_proxy",
    "wall_seconds",
    "event",
]

SOLVERS = ("direct", "cg", "ihs", "pcg", "ada-ihs", "ada-pcg", "polyak-ihs")

_NUMERICAL = (NotPositiveDefinite, BreakdownDetected, ConvergenceFailure,
              NegativeValue)
_FLAGLIKE = (FlagConflict, InvalidDecay, InvalidProbability, InvalidSparsity,
             SketchTooLarge, NotPowerOfTwo, ValueError)
_IOLIKE = (OSError, IoFormatError, MalformedCsv, NonNumericField,
           json.JSONDecodeError)


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_path: Path, command: str, config: dict, seed,
                    inputs: list[Path]) -> None:
    manifest = {
        "command": command,
        "config": config,
        "artifact_version": __version__,
        "seed": seed,
        "started_at": datetime.now(timezone.utc).isoformat(),
        "input_digests": {p.name: _digest(p) for p in inputs},
    }
    out_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _trace_rows(trace: SolverTrace, proxy: bool) -> list[list]:
    base_exact = trace.records[0].delta_exact if trace.records else None
    base_tilde = trace.records[0].delta_tilde if trace.records else None
    rows = []
    for r in trace.records:
        if not proxy and r.delta_exact is not None:
            denom = base_exact
            rel = r.delta_exact / denom if denom and denom > 0 else 0.0
        else:
            denom = base_tilde
            rel = r.delta_tilde / denom if denom and denom > 0 else 0.0
        rows.append([
            r.t, r.m, r.k, _fmt(r.delta_tilde), _fmt(r.delta_exact),
            _fmt(float(rel)), int(proxy or r.delta_exact is None),
            _fmt(r.wall_seconds), r.event,
        ])
    return rows


def _write_trace(path: Path, rows: list[list], label: str | None = None) -> None:
    header = (["solver"] if label is not None else []) + TRACE_COLUMNS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    p, sol = gen_synthetic(args.n, args.d, args.decay, args.nu,
                           seed=args.seed, c=args.c)
    save_matrix(out / "A.adsk", p.A)
    save_matrix(out / "B.adsk", p.B)
    save_matrix(out / "x_true.adsk", sol.x_star)
    config = {"n": args.n, "d": args.d, "decay": args.decay, "nu": args.nu,
              "c": args.c, "seed": args.seed}
    _write_manifest(out / "manifest.json", "gen", config, args.seed,
                    [out / "A.adsk", out / "B.adsk"])
    print(f"wrote {out}/A.adsk B.adsk x_true.adsk manifest.json")
    return 0


def _load_problem(data_dir: str, nu_override=None) -> RegularizedProblem:
    data = Path(data_dir)
    A = load_matrix(data / "A.adsk")
    B = load_matrix(data / "B.adsk")
    nu = nu_override
    if nu is None:
        manifest = json.loads((data / "manifest.json").read_text())
        nu = float(manifest["config"]["nu"])
    return RegularizedProblem(A=A, B=B, nu=nu)


def _parse_m(spec: str, d: int) -> int:
    """Sketch size: plain integer, or '<k>d' for k times the column count."""
    spec = spec.strip()
    if spec.endswith("d"):
        return int(spec[:-1]) * d
    return int(spec)


_SOLVER_FLAGS = {
    # solver -> flags it accepts beyond T/tol/seed
    "direct": set(),
    "cg": set(),
    "ihs": {"m", "rho", "sketch", "s"},
    "pcg": {"m", "sketch", "s"},
    "polyak-ihs": {"m", "rho", "sketch", "s"},
    "ada-ihs": {"m_init", "rho", "sketch", "s"},
    "ada-pcg": {"m_init", "rho", "sketch", "s"},
}


def _check_flags(solver: str, given: dict) -> dict:
    allowed = _SOLVER_FLAGS[solver]
    for flag, value in given.items():
        if value is not None and flag not in allowed:
            raise FlagConflict(
                f"--{flag.replace('_', '-')} does not apply to solver {solver!r}"
            )
    out = dict(given)
    if "rho" in allowed and out.get("rho") is None:
        out["rho"] = 0.125
    if "sketch" in allowed and out.get("sketch") is None:
        out["sketch"] = "gaussian"
    if "s" in allowed and out.get("s") is None:
        out["s"] = 1
    if "m" in allowed and out.get("m") is None:
        raise FlagConflict(f"solver {solver!r} requires --m")
    if "m_init" in allowed and out.get("m_init") is None:
        out["m_init"] = 1
    return out


def _run_solver(p: RegularizedProblem, solver: str, flags: dict, T: int,
                tol: float, seed: int, sol) -> SolverTrace:
    x0 = np.zeros((p.d, p.c))
    if solver == "direct":
        t0 = time.perf_counter()
        xs = direct_solve(p)
        de = exact_error(p, xs.x_star, sol) if sol is not None else None
        trace = SolverTrace()
        trace.append(TraceRecord(0, 0, 0, 0.0, de,
                                 time.perf_counter() - t0, "plain"))
        return trace
    if solver == "cg":
        _, trace = cg(p, x0, T=T, tol=tol, sol=sol)
        return trace
    if solver == "ihs":
        _, trace = ihs_run(p, x0, m=flags["m"], rho=flags["rho"],
                           family=flags["sketch"], seed=seed, T=T, sol=sol,
                           s=flags["s"])
        return trace
    if solver == "pcg":
        _, trace = pcg_run(p, x0, m=flags["m"], family=flags["sketch"],
                           seed=seed, T=T, tol=tol, sol=sol, s=flags["s"])
        return trace
    if solver == "polyak-ihs":
        _, trace = polyak_ihs_run(p, x0, m=flags["m"], rho=flags["rho"],
                                  family=flags["sketch"], seed=seed, T=T,
                                  sol=sol, s=flags["s"])
        return trace
    method = {"ada-ihs": "ihs", "ada-pcg": "pcg"}[solver]
    cfg = AdaptiveConfig.for_method(method, rho=flags["rho"],
                                    m_init=flags["m_init"], T=T,
                                    family=flags["sketch"], seed=seed,
                                    s=flags["s"])
    _, trace = adaptive_run(p, x0, cfg, method=method, sol=sol)
    return trace


def cmd_solve(args) -> int:
    p = _load_problem(args.data, args.nu)
    if args.solver not in SOLVERS:
        raise FlagConflict(f"unknown solver {args.solver!r}")
    flags = _check_flags(args.solver, {
        "m": None if args.m is None else _parse_m(args.m, p.d),
        "m_init": args.m_init,
        "rho": args.rho,
        "sketch": args.sketch,
        "s": args.s,
    })
    sol = direct_solve(p) if p.d <= args.exact_cap else None
    trace = _run_solver(p, args.solver, flags, args.T, args.tol, args.seed, sol)
    out = Path(args.out)
    _write_trace(out, _trace_rows(trace, proxy=sol is None))
    config = {"solver": args.solver, "T": args.T, "tol": args.tol,
              "exact_cap": args.exact_cap, "nu": p.nu, **flags}
    data = Path(args.data)
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"),
                    "solve", config, args.seed,
                    [data / "A.adsk", data / "B.adsk"])
    final = trace.final
    print(f"{args.solver}: {final.t} iterations, delta_tilde = "
          f"{final.delta_tilde:.3e}, m = {final.m}, resketches = {final.k}")
    return 0


def _parse_run_spec(spec: str, d: int) -> tuple[str, dict]:
    """Run spec 'solver[:family][:key=value...]' for cmd_compare."""
    parts = spec.split(":")
    solver = parts[0]
    if solver not in SOLVERS:
        raise FlagConflict(f"unknown solver {solver!r} in run spec {spec!r}")
    given = {"m": None, "m_init": None, "rho": None, "sketch": None, "s": None}
    for part in parts[1:]:
        if "=" in part:
            key, val = part.split("=", 1)
            key = key.replace("-", "_")
            if key == "m":
                given["m"] = _parse_m(val, d)
            elif key == "m_init":
                given["m_init"] = int(val)
            elif key == "rho":
                given["rho"] = float(val)
            elif key == "s":
                given["s"] = int(val)
            elif key in ("sketch", "family"):
                given["sketch"] = val
            else:
                raise FlagConflict(f"unknown key {key!r} in run spec {spec!r}")
        else:
            given["sketch"] = part
    return solver, _check_flags(solver, given)


def cmd_compare(args) -> int:
    p = _load_problem(args.data, args.nu)
    if not args.run:
        raise FlagConflict("compare needs at least one --run spec")
    if len(set(args.run)) != len(args.run):
        raise FlagConflict("run labels must be unique")
    parsed = [(spec, *_parse_run_spec(spec, p.d)) for spec in args.run]
    sol = direct_solve(p) if p.d <= args.exact_cap else None

    def one(item):
        label, solver, flags = item
        trace = _run_solver(p, solver, flags, args.T, args.tol, args.seed, sol)
        return label, _trace_rows(trace, proxy=sol is None)

    workers = max(1, int(os.environ.get("ADASKETCH_THREADS", "1")))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, parsed))
    else:
        results = [one(item) for item in parsed]
    rows = [[label] + row for label, label_rows in results for row in label_rows]
    out = Path(args.out)
    _write_trace(out, rows, label="solver")
    config = {"runs": list(args.run), "T": args.T, "tol": args.tol,
              "exact_cap": args.exact_cap, "nu": p.nu}
    data = Path(args.data)
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"),
                    "compare", config, args.seed,
                    [data / "A.adsk", data / "B.adsk"])
    for label, label_rows in results:
        print(f"{label}: {len(label_rows) - 1} recorded iterations, "
              f"final rel_error = {label_rows[-1][5]}")
    return 0


def cmd_concentration(args) -> int:
    p = _load_problem(args.data, args.nu)
    grid = [int(tok) for tok in args.m_grid.split(",") if tok]
    if not grid:
        raise FlagConflict("--m-grid must list at least one sketch size")
    reports = []
    for m in grid:
        rep = estimate_event_probability(
            p, family=args.family, m=m, rho=args.rho,
            trials=args.trials, seed=args.seed, s=args.s)
        reports.append(rep.as_dict())
        print(f"m = {m}: success = {rep.success:.3f}")
    out = Path(args.out)
    out.write_text(json.dumps({"reports": reports}, sort_keys=True, indent=2)
                   + "\n")
    config = {"family": args.family, "m_grid": grid, "rho": args.rho,
              "trials": args.trials, "s": args.s, "nu": p.nu}
    data = Path(args.data)
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"),
                    "concentration", config, args.seed,
                    [data / "A.adsk", data / "B.adsk"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="adasketch",
        description="benchmark harness for sketched least-squares solvers",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic instance directory")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--decay", type=float, required=True)
    g.add_argument("--nu", type=float, required=True)
    g.add_argument("--c", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    def common(sp):
        sp.add_argument("--data", required=True,
                        help="directory holding A.adsk, B.adsk, manifest.json")
        sp.add_argument("--nu", type=float, default=None,
                        help="override nu from the data manifest")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--exact-cap", type=int, default=4096,
                        help="largest d for which the exact error is tracked")

    s = sub.add_parser("solve", help="run one solver, write a trace CSV")
    common(s)
    s.add_argument("--solver", required=True, choices=SOLVERS)
    s.add_argument("--sketch", choices=("gaussian", "srht", "sjlt"),
                   default=None)
    s.add_argument("--m", default=None,
                   help="sketch size (integer, or '2d' style multiples)")
    s.add_argument("--m-init", type=int, default=None, dest="m_init")
    s.add_argument("--rho", type=float, default=None)
    s.add_argument("--s", type=int, default=None,
                   help="nonzeros per column for sjlt")
    s.add_argument("--T", type=int, default=40)
    s.add_argument("--tol", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("compare", help="run several solvers on one instance")
    common(c)
    c.add_argument("--run", action="append", default=[],
                   help="spec: solver[:family][:key=value...]; repeatable")
    c.add_argument("--T", type=int, default=40)
    c.add_argument("--tol", type=float, default=0.0)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    k = sub.add_parser("concentration",
                       help="sweep event-probability estimates over m")
    common(k)
    k.add_argument("--family", choices=("gaussian", "srht", "sjlt"),
                   default="gaussian")
    k.add_argument("--m-grid", required=True, dest="m_grid",
                   help="comma-separated sketch sizes")
    k.add_argument("--rho", type=float, default=0.25)
    k.add_argument("--trials", type=int, default=50)
    k.add_argument("--s", type=int, default=1)
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_concentration)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except _IOLIKE as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except _FLAGLIKE as exc:
        print(f"flag error: {exc}", file=sys.stderr)
        return 2
    except AdasketchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
