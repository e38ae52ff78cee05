"""Command line front-end.

    eqsadj run CONFIG [--out DIR] [--dry-run]
    eqsadj convergence CONFIG [--sweep 100,200,400,800] [--out DIR]
    eqsadj check CONFIG [--tolerance X] [--out DIR]
    eqsadj export-scenario {layered_resistor,fgm_joint} [--out DIR]

``--threads N`` runs FD evaluations and sweep points concurrently (default 1,
which keeps every output byte-identical between runs). ``EQSADJ_SCRATCH``
names a directory for memory-mapped trajectory storage.

Exit codes: 0 success, 1 tolerance check failed, 2 invalid input,
3 solver failure. Errors go to stderr as one JSON object per line.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .adjoint import AdjointError
from .config import ConfigError, dump_config, load_config
from .forward import NewtonError
from .materials import MaterialError
from .mesh import MeshError
from .oracle import fd_sensitivities
from .qoi import QoiError
from .scenarios import BUILTIN, ScenarioError
from .sensitivity import TERMS

log = logging.getLogger("eqsadj")

INPUT_ERRORS = (ConfigError, ScenarioError, MeshError, QoiError, MaterialError, ValueError)
SOLVER_ERRORS = (NewtonError, AdjointError, RuntimeError, np.linalg.LinAlgError)


class UsageError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path: Path, header, rows, config_hash: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# eqsadj {__version__} config-sha256 {config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


@contextmanager
def _mapper(threads: int):
    if threads <= 1:
        yield map
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            yield pool.map


def _scratch():
    return os.environ.get("EQSADJ_SCRATCH") or None


def _oracle_values(sc, n_main, map_fn):
    """{(qoi, param): (value, note)} from the configured oracle."""
    out = {}
    if sc.run.oracle == "analytic":
        for q in sc.qois:
            for p in sc.parameters:
                out[q.name, p.name] = (sc.analytic_value(q.name, p.name), "analytic")
        return out
    for p in sc.parameters:
        reports = fd_sensitivities(sc, p.name, sc.run.fd_h_rel, n_main, map_fn)
        for q, r in reports.items():
            out[q, p.name] = (r.value, "fd" if r.reliable else f"fd-unreliable(spread={r.spread:.2e})")
    return out


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b) if b != 0 else (0.0 if a == 0 else math.inf)


# --------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    sc, sha = load_config(args.config)
    mesh = sc.built_mesh
    grid = sc.timegrid()
    sc.problem()  # material map vs mesh regions
    if args.dry_run:
        print(f"config ok: {sc.name}, {mesh.n_nodes} nodes, {mesh.n_elements} elements, "
              f"{len(grid)} time samples ({len(grid) - 1} steps)")
        return 0
    res, sol = sc.sensitivities(scratch_dir=_scratch())
    out = Path(args.out)
    write_csv(out / "sensitivities.csv", ["qoi", "parameter", "avm_value", *TERMS],
              ([q, p, v, *(b[t] for t in TERMS)] for q, p, v, b in res.rows()), sha)
    for tr in sc.run.traces:
        write_csv(out / f"trace_{tr.name}.csv", ["t", "value"],
                  zip(grid.t, sol.potential_at(tr.point)), sha)
    lines = [
        f"scenario {sc.name}",
        f"mesh {mesh.n_nodes} nodes, {mesh.n_elements} elements ({mesh.symmetry})",
        f"time samples {len(grid)}, T = {_fmt(grid.T)}",
        f"newton iterations total {int(np.sum(sol.newton_iterations))}, "
        f"max per step {int(np.max(sol.newton_iterations, initial=0))}",
    ]
    lines += [f"qoi {k} = {_fmt(v)}" for k, v in res.qoi_values.items()]
    lines += [f"d{q}/d{p} = {_fmt(v)}" for q, p, v, _ in res.rows()]
    report = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    return 0


def observed_order(n, err) -> float:
    """Least-squares slope of log(err) against log(n), sign flipped."""
    n, err = np.asarray(n, dtype=float), np.asarray(err, dtype=float)
    if len(n) < 2 or np.any(err <= 0) or not np.all(np.isfinite(err)):
        return math.nan
    return -float(np.polyfit(np.log(n), np.log(err), 1)[0])


def cmd_convergence(args) -> int:
    sc, sha = load_config(args.config)
    sweep = [int(s) for s in args.sweep.split(",")] if args.sweep else list(sc.time.sweep)
    if len(sweep) < 3:
        raise UsageError(f"convergence needs at least 3 sweep points, got {len(sweep)}")
    if not sc.parameters:
        print("nothing to check: no parameters configured")
        return 0
    analytic = sc.run.oracle == "analytic"
    with _mapper(args.threads) as map_fn:
        oracle_fixed = _oracle_values(sc, None, map) if analytic else None
        results = list(map_fn(lambda n: sc.sensitivities(n_main=n, scratch_dir=_scratch()), sweep))
        rows, fit = [], []
        for q in sc.qois:
            for p in sc.parameters:
                errs = []
                for n, (res, sol) in zip(sweep, results):
                    if analytic:
                        ref = oracle_fixed[q.name, p.name][0]
                    else:
                        ref = fd_sensitivities(sc, p.name, sc.run.fd_h_rel, n, map_fn)[q.name].value
                    avm = res.get(q.name, p.name)
                    err = _rel(avm, ref)
                    errs.append(err)
                    rows.append([q.name, p.name, n, len(sol.grid), avm, ref, 100.0 * err])
                fit.append([q.name, p.name, observed_order(sweep, errs)])
    out = Path(args.out)
    write_csv(out / "convergence.csv", ["qoi", "parameter", "n_main", "n_t", "avm_value",
                                        "oracle_value", "rel_error_percent"], rows, sha)
    write_csv(out / "convergence_order.csv", ["qoi", "parameter", "observed_order"], fit, sha)
    print(f"oracle: {'analytic' if analytic else 'central FD on the same time grid'}")
    print(f"{'qoi':>10} {'param':>8} {'N_t':>6} {'avm':>24} {'oracle':>24} {'rel.err %':>12}")
    for q, p, _, nt, a, r, e in rows:
        print(f"{q:>10} {p:>8} {nt:>6} {a:>24.16e} {r:>24.16e} {e:>12.4e}")
    for q, p, order in fit:
        print(f"observed order d{q}/d{p}: {'n/a' if math.isnan(order) else f'{order:.3f}'}")
    return 0


def cmd_check(args) -> int:
    sc, sha = load_config(args.config)
    if not sc.parameters or not sc.qois:
        print("nothing to check: no parameters or QoIs configured")
        return 0
    tol = args.tolerance if args.tolerance is not None else sc.run.tolerance
    res, _ = sc.sensitivities(scratch_dir=_scratch())
    with _mapper(args.threads) as map_fn:
        oracle = _oracle_values(sc, None, map_fn)
    rows, ok = [], True
    print(f"{'qoi':>10} {'param':>8} {'avm':>24} {'oracle':>24} {'rel.err':>10}  status")
    for q, p, avm, _ in res.rows():
        ref, note = oracle[q, p]
        err = _rel(avm, ref)
        passed = err <= tol
        ok &= passed
        rows.append([q, p, avm, ref, err, note, "pass" if passed else "FAIL"])
        print(f"{q:>10} {p:>8} {avm:>24.16e} {ref:>24.16e} {err:>10.3e}  "
              f"{'pass' if passed else 'FAIL'} ({note})")
    if args.out:
        write_csv(Path(args.out) / "check.csv",
                  ["qoi", "parameter", "avm_value", "oracle_value", "rel_error", "oracle", "status"],
                  rows, sha)
    print(f"tolerance {tol:g}: {'all pairs pass' if ok else 'some pairs exceed the tolerance'}")
    return 0 if ok else 1


def cmd_export(args) -> int:
    text = dump_config(BUILTIN[args.name]())
    if args.out is None:
        sys.stdout.write(text)
        return 0
    path = Path(args.out) / f"{args.name}.yaml"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    print(path)
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="eqsadj", description="Transient EQS adjoint sensitivities")
    ap.add_argument("--version", action="version", version=f"eqsadj {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="forward + adjoint run, write CSVs")
    p.add_argument("config")
    p.add_argument("--out", default="eqsadj_out")
    p.add_argument("--dry-run", action="store_true", help="validate and report the grid size only")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("convergence", parents=[common], help="time-step convergence study")
    p.add_argument("config")
    p.add_argument("--sweep", help="comma separated main step counts (default: config time.sweep)")
    p.add_argument("--out", default="eqsadj_out")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("check", parents=[common], help="compare AVM with the configured oracle")
    p.add_argument("config")
    p.add_argument("--tolerance", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("export-scenario", parents=[common], help="write a built-in scenario as YAML")
    p.add_argument("name", choices=sorted(BUILTIN))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export)
    return ap


def _fail(kind: str, exc: BaseException, code: int) -> int:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        return _fail("invalid-argument", UsageError("--threads must be >= 1"), 2)
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail("invalid-argument", exc, 2)
    except SOLVER_ERRORS as exc:
        return _fail("solver", exc, 3)
    except INPUT_ERRORS as exc:
        return _fail("validation", exc, 2)
    except OSError as exc:
        return _fail("io", exc, 2)


if __name__ == "__main__":
    sys.exit(main())
