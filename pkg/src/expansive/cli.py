"""Command-line entry point.

Exit codes: 0 success, 1 unreadable or invalid input, 2 minimizer not
converged, 3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as sio
from .errors import CollisionError, ExpansiveError, NotConverged, SpecError
from .hj import hj_residual
from .minimize import report_from_path, solve
from .paths import column_names
from .verify import run_verification

log = logging.getLogger("expansive")

EXIT_OK, EXIT_PARSE, EXIT_NOT_CONVERGED, EXIT_VERIFY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _Usage(f"{self.prog}: error: {message}")


class _Usage(Exception):
    pass


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override every random seed in the problem file")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="thread budget shared by all stages")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="print nothing on success")
    p = _Parser(prog="expansive", parents=[common],
                description="Expansive N-body motions by renormalized action minimization.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("central-config", parents=[common],
                       help="minimal central configuration of every cluster")
    c.add_argument("spec")

    s = sub.add_parser("solve", parents=[common], help="minimize and write the trajectory")
    s.add_argument("spec")
    s.add_argument("--out", required=True)

    v = sub.add_parser("verify", parents=[common], help="run the enabled checks on a report")
    v.add_argument("spec")
    v.add_argument("--report", required=True)

    h = sub.add_parser("hj", parents=[common], help="value function samples")
    h.add_argument("spec")
    h.add_argument("--x0-grid", required=True,
                   help="CSV with columns body1_x,body1_y,...; one initial point per row")
    h.add_argument("--T", type=float, default=None, help="horizon (default grid T_max)")
    h.add_argument("--nodes", type=int, default=None)
    h.add_argument("--out", default=None, help="output CSV (default stdout)")

    w = sub.add_parser("sweep", parents=[common], help="solve over a list of parameter values")
    w.add_argument("spec")
    w.add_argument("--param", required=True, help="dotted field, e.g. grid.T_max")
    w.add_argument("--values", required=True, help="comma-separated JSON values")
    w.add_argument("--out", required=True)
    return p


# -- helpers ----------------------------------------------------------------

def _apply_globals(doc, args):
    if "seed" in args:
        for key in ("solver.rng_seed", "cc.rng_seed", "verification.freetime_seed"):
            sio.set_field(doc, key, args.seed)
    if "threads" in args:
        sio.set_field(doc, "solver.threads", args.threads)
    return doc


def _load(path, args):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SpecError(exc.strerror or str(exc), str(path)) from None
    spec = sio.parse_spec(text, str(path))
    doc = _apply_globals(spec.to_dict(), args)
    return sio.parse_spec(json.dumps(doc), str(path)), doc


def _cc_doc(ref):
    out = {}
    for k, res in sorted(ref.cluster_configs.items()):
        d = res.to_dict()
        d["members"] = [i + 1 for i in ref.partition.clusters[k]]
        out[str(k + 1)] = d
    return out


def _say(args, text):
    if not getattr(args, "quiet", False):
        print(text)


def _write_solution(out, spec, ref, rep):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trajectory.csv", "w", newline="") as fh:
        sio.write_path(fh, ref, rep.path)
    with open(out / "path.csv", "w", newline="") as fh:
        from .paths import write_table
        write_table(fh, rep.path.grid.nodes, rep.path.values)
    with open(out / "trace.csv", "w", newline="") as fh:
        sio.write_trace(fh, rep.trace)
    solve_doc = rep.to_dict()
    solve_doc["regime"] = ref.regime.value
    doc = {"problem": spec.to_dict(), "central_configs": _cc_doc(ref),
           "solve": solve_doc, "trajectory": "trajectory.csv", "path": "path.csv",
           "trace": "trace.csv"}
    (out / "report.json").write_text(sio.dumps(doc))
    return doc


# -- subcommands --------------------------------------------------------------

def _cmd_central_config(args):
    spec, _ = _load(args.spec, args)
    ref = spec.reference(spec.solver.threads)
    print(sio.dumps({"regime": ref.regime.value, "central_configs": _cc_doc(ref)}), end="")
    return EXIT_OK


def _cmd_solve(args):
    spec, _ = _load(args.spec, args)
    ref = spec.reference(spec.solver.threads)
    rep = solve(ref, spec.solver, grid=spec.time_grid())
    _write_solution(Path(args.out), spec, ref, rep)
    _say(args, f"action {rep.action.total!r}  grad {rep.final_grad_norm:.3e}  "
               f"iterations {rep.iterations}  converged {rep.converged}")
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def _cmd_verify(args):
    spec, _ = _load(args.spec, args)
    ref = spec.reference(spec.solver.threads)
    report_file = Path(args.report)
    try:
        doc = json.loads(report_file.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"expansive: cannot read report: {exc}", file=sys.stderr)
        return EXIT_PARSE
    traj = report_file.parent / doc.get("trajectory", "trajectory.csv")
    try:
        with open(traj, newline="") as fh:
            path = sio.read_trajectory(fh, ref)
        rep = report_from_path(ref, path, spec.solver)
        results, failed = run_verification(ref, rep, spec.verification)
    except (OSError, ValueError, CollisionError, ArithmeticError) as exc:
        print(f"expansive: trajectory rejected: {exc}", file=sys.stderr)
        doc["verification"] = {"error": str(exc), "failed": ["trajectory"]}
        report_file.write_text(sio.dumps(doc))
        return EXIT_VERIFY
    doc["verification"] = {"checks": results, "failed": failed}
    report_file.write_text(sio.dumps(doc))
    for name in sorted(results):
        _say(args, f"{'PASS' if results[name]['passed'] else 'FAIL'} {name}")
    return EXIT_VERIFY if failed else EXIT_OK


def _read_points(fname, n, dim):
    with open(fname, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise SpecError("empty file", str(fname))
    header = [h.strip() for h in rows[0]]
    want = column_names(n, dim)[1:]
    try:
        cols = [header.index(c) for c in want]
    except ValueError:
        raise SpecError(f"expected columns {','.join(want)}", str(fname)) from None
    pts = []
    for k, r in enumerate(rows[1:], start=2):
        try:
            pts.append(np.array([float(r[c]) for c in cols]).reshape(n, dim))
        except (ValueError, IndexError):
            raise SpecError(f"bad number on line {k}", str(fname)) from None
    return pts


def _cmd_hj(args):
    spec, _ = _load(args.spec, args)
    ref = spec.reference(spec.solver.threads)
    sys_ = ref.system
    pts = _read_points(args.x0_grid, sys_.n, sys_.dim)
    T = args.T or spec.grid["T_max"]
    nodes = args.nodes or spec.grid["nodes"]
    cfg = replace(spec.solver, grad_tol=min(spec.solver.grad_tol, 1e-11))
    names = column_names(sys_.n, sys_.dim)[1:]
    header = (["index", "T", "v", "hj_residual", "grad_error"] + names
              + [f"grad_{c}" for c in names] + [f"xdot1_{c}" for c in names])
    lines = [",".join(header)]
    for k, x in enumerate(pts):
        s = hj_residual(ref, x, T, cfg=cfg, nodes=nodes, threads=cfg.threads)
        vals = [s.T, s.v_value, s.hj_residual, s.grad_error]
        vals += list(s.x0.coords.ravel()) + list(s.grad_v.ravel())
        vals += list(s.initial_velocity.ravel())
        lines.append(",".join([str(k)] + [format(v, ".17g") for v in vals]))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_sweep(args):
    spec0, doc0 = _load(args.spec, args)
    try:
        values = [json.loads(v) for v in args.values.split(",")]
    except json.JSONDecodeError as exc:
        raise SpecError(f"bad value ({exc.msg})", "--values") from None
    out = Path(args.out)
    rows = []
    status = EXIT_OK
    for k, val in enumerate(values):
        doc = json.loads(json.dumps(doc0))
        sio.set_field(doc, args.param, val)
        spec = sio.parse_spec(json.dumps(doc), f"{args.param}={val}")
        ref = spec.reference(spec.solver.threads)
        rep = solve(ref, spec.solver, grid=spec.time_grid())
        _write_solution(out / f"run{k:03d}", spec, ref, rep)
        rows.append([k, json.dumps(val), rep.action.total, rep.final_grad_norm,
                     rep.iterations, int(rep.converged)])
        if not rep.converged:
            status = EXIT_NOT_CONVERGED
        _say(args, f"{args.param}={val}: action {rep.action.total!r} converged {rep.converged}")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        fh.write(f"run,{args.param},action,grad_norm,iterations,converged\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]!r},{r[3]!r},{r[4]},{r[5]}\n")
    return status


_COMMANDS = {"central-config": _cmd_central_config, "solve": _cmd_solve,
             "verify": _cmd_verify, "hj": _cmd_hj, "sweep": _cmd_sweep}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _Usage as exc:
        print(exc, file=sys.stderr)
        return EXIT_PARSE
    logging.basicConfig(level=logging.ERROR if getattr(args, "quiet", False)
                        else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except SpecError as exc:
        print(f"expansive: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NotConverged as exc:
        print(f"expansive: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except ExpansiveError as exc:
        print(f"expansive: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
