"""Command-line front end.

Thin orchestration only: every subcommand parses flags, calls the
library, writes a result bundle into the output directory, and prints a
short human summary.  Exit codes: 0 full success, 2 when the requested
computation finished but certification failed (results are still
written), 1 on solver or input errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys as _sys

import numpy as np

from .errors import BsbError
from .extremal import ExtremalStructure
from .problems_io import (ProblemDefinition, builtin_names, export_csv,
                          load_problem, make_bundle, save_bundle)
from .shooting import (DEFAULT_SOLVER_OPTIONS, SolverOptions, continue_path,
                       newton_solve, uniqueness_scan)

__all__ = ["main", "run"]

_Z_LABELS_SUFFIX = ("tau1", "tau2", "T")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bsbshoot",
        description="Bang-singular-bang minimum-time extremals: solve, "
                    "certify, and continue through parameter changes.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--problem", required=True,
                       help="path to a problem JSON file, or one of: "
                            + ", ".join(builtin_names()))
        p.add_argument("--out", default=None,
                       help="output directory (default: $BSBSHOOT_OUT or .)")
        p.add_argument("--r", default=None, metavar="V1,V2,...",
                       help="parameter vector (default: problem default or 0)")
        p.add_argument("--newton-tol", type=float, default=None)
        p.add_argument("--sglc-tol", type=float, default=None)
        p.add_argument("--seed", type=int, default=None,
                       help="seed for the uniqueness probes")
        p.add_argument("--samples", type=int, default=200,
                       help="trajectory samples per arc in the bundle")

    for name, helptext in (
            ("solve", "find the stationary structure from the problem guess"),
            ("certify", "solve, then print the certification margins table"),
            ("continue", "follow the solution along a parameter ray"),
            ("sensitivity", "solve, then print dz/dr"),
            ("scan-uniqueness", "count distinct shooting zeros near the solution"),
            ("export", "solve (or continue), then write CSV and figures")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        if name in ("continue", "export"):
            p.add_argument("--r-ray", default=None, metavar="D1,D2;TMAX;STEPS",
                           help="parameter ray: direction, amplitude, steps")
        if name == "scan-uniqueness":
            p.add_argument("--n-probe", type=int, default=None,
                           help="number of perturbed restarts")
    return parser


def _parse_vector(text: str, m: int, what: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise BsbError(f"cannot parse {what} {text!r}: {exc}") from exc
    if len(vals) != m:
        raise BsbError(f"{what} has {len(vals)} components, expected {m}")
    return np.array(vals)


def _parse_ray(text: str, m: int) -> list[np.ndarray]:
    parts = text.split(";")
    if len(parts) != 3:
        raise BsbError(f"--r-ray must be 'dir;t_max;steps', got {text!r}")
    direction = _parse_vector(parts[0], m, "ray direction")
    try:
        t_max = float(parts[1])
        steps = int(parts[2])
    except ValueError as exc:
        raise BsbError(f"cannot parse --r-ray {text!r}: {exc}") from exc
    if steps < 1:
        raise BsbError("--r-ray needs at least one step")
    return [t * direction for t in np.linspace(0.0, t_max, steps + 1)]


def _solver_options(args, problem: ProblemDefinition) -> SolverOptions:
    opts = DEFAULT_SOLVER_OPTIONS
    overrides = dict(problem.options)
    if args.newton_tol is not None:
        overrides["newton_tol"] = args.newton_tol
    if args.sglc_tol is not None:
        overrides["sglc_tol"] = args.sglc_tol
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "n_probe", None) is not None:
        overrides["n_probe"] = args.n_probe
    certify_overrides = {k: overrides.pop(k) for k in ("grid_per_arc",
                                                       "collar_frac")
                         if k in overrides}
    if certify_overrides:
        overrides["certify"] = dataclasses.replace(
            opts.certify, **certify_overrides)
    if overrides:
        opts = dataclasses.replace(opts, **overrides)
    return opts


def _out_dir(args) -> str:
    out = args.out or os.environ.get("BSBSHOOT_OUT") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _initial_guess(problem: ProblemDefinition) -> ExtremalStructure:
    if problem.z0 is None:
        raise BsbError(f"problem {problem.name!r} has no initial guess z0")
    return problem.z0


def _fmt_times(z: ExtremalStructure) -> str:
    return (f"tau1 = {z.tau1:.7f}  tau2 = {z.tau2:.7f}  T = {z.T:.7f}")


def _print_solve_summary(problem, rec) -> None:
    r_txt = ",".join(f"{v:g}" for v in rec.r)
    print(f"problem {problem.name}  (n={problem.n}, m={problem.m})  r = [{r_txt}]")
    print(f"converged in {rec.iterations} iterations  "
          f"residual {rec.residual_norm:.3e}  condition {rec.condition:.3e}")
    print(_fmt_times(rec.structure))
    if rec.report is not None:
        print(f"certification: {'PASS' if rec.report.passed else 'FAIL'}")


def _print_margins_table(report) -> None:
    d = report.as_dict()
    d.pop("passed")
    notes = d.pop("notes")
    print(f"certification: {'PASS' if report.passed else 'FAIL'}")
    for key in sorted(d):
        value = d[key]
        if isinstance(value, float):
            txt = f"{value:.6g}"
        elif isinstance(value, list):
            txt = ", ".join(f"{v:.3g}" for v in value)
        else:
            txt = str(value)
        print(f"  {key:28s} {txt}")
    for note in notes:
        print(f"  note: {note}")


def _certified_exit(records) -> int:
    ok = all(rec.report is not None and rec.report.passed for rec in records)
    return 0 if ok else 2


def run(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        problem = load_problem(args.problem)
        sysm = problem.build_system()
        opts = _solver_options(args, problem)
        out = _out_dir(args)
        r = problem.r_or_default(
            None if args.r is None else _parse_vector(args.r, problem.m, "--r"))
        z0 = _initial_guess(problem)

        if args.command == "continue" or (
                args.command == "export" and getattr(args, "r_ray", None)):
            if getattr(args, "r_ray", None) is None:
                raise BsbError("continue requires --r-ray")
            r_path = _parse_ray(args.r_ray, problem.m)
            records = continue_path(sysm, r_path, z0, opts)
        else:
            records = [newton_solve(sysm, r, z0, opts)]

        bundle = make_bundle(problem, records, samples_per_arc=args.samples,
                             opts=opts)
        path = os.path.join(out, "bundle.json")
        save_bundle(bundle, path)

        if args.command in ("solve", "export"):
            _print_solve_summary(problem, records[-1])
        elif args.command == "certify":
            rec = records[-1]
            print(f"problem {problem.name}  " + _fmt_times(rec.structure))
            if rec.report is None:
                raise BsbError("no certification report was produced")
            _print_margins_table(rec.report)
        elif args.command == "continue":
            print(f"{'step':>4}  {'|r|':>9}  {'tau1':>10}  {'tau2':>10}  "
                  f"{'T':>10}  {'residual':>9}  cert")
            for k, rec in enumerate(records):
                z = rec.structure
                cert = "-" if rec.report is None else (
                    "PASS" if rec.report.passed else "FAIL")
                print(f"{k:>4}  {np.linalg.norm(rec.r):>9.4f}  {z.tau1:>10.7f}  "
                      f"{z.tau2:>10.7f}  {z.T:>10.7f}  "
                      f"{rec.residual_norm:>9.2e}  {cert}")
            print(f"{len(records)} records")
        elif args.command == "sensitivity":
            rec = records[-1]
            _print_solve_summary(problem, rec)
            labels = [f"omega{i+1}" for i in range(problem.n)] + list(_Z_LABELS_SUFFIX)
            print("dz/dr  (columns r1..r{}):".format(problem.m))
            for label, row in zip(labels, rec.sensitivity):
                cells = "  ".join(f"{v:>14.7e}" for v in row)
                print(f"  {label:<8s} {cells}")
        elif args.command == "scan-uniqueness":
            rec = records[-1]
            _print_solve_summary(problem, rec)
            scan = uniqueness_scan(sysm, r, rec, opts)
            print(f"uniqueness scan: {opts.n_probe} probes, seed {opts.seed}")
            print(f"distinct zeros found: {scan['n_zeros_found']}")

        if args.command == "export":
            from .report import render_figures
            for k in range(len(records)):
                suffix = "" if len(records) == 1 else f"-{k:03d}"
                export_csv(bundle, os.path.join(out, f"trajectory{suffix}.csv"), k)
            written = render_figures(bundle, out)
            print("wrote " + ", ".join(
                sorted(os.path.basename(w) for w in written)))

        print(f"wrote {path}")
        return _certified_exit(records)
    except BsbError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(run())
