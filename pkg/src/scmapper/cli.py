"""Command line front end.

Exit status: 0 on success, 1 if any run failed, 2 for unusable input
(bad arguments or a malformed spec file).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import experiments as ex
from .errors import ScMapperError
from .mapper import flip_columns, input_eps, load_mapper, rotate_columns, save_mapper, uniform, validate

ENV_OUTPUT_DIR = "SCMAPPER_OUTPUT_DIR"
ENV_WORKERS = "SCMAPPER_WORKERS"


def _ensemble_args(p: argparse.ArgumentParser, multi: bool = False, multi_boundary: bool = False) -> None:
    nargs = "+" if multi else None
    p.add_argument("--dv", type=int, default=4)
    p.add_argument("--dc", type=int, default=8)
    p.add_argument("--L", type=int, nargs=nargs, required=True)
    p.add_argument("--w", type=int, nargs=nargs, required=True)
    p.add_argument("--boundary", choices=["two_sided", "circular"], nargs="+" if multi_boundary else None,
                   default=["two_sided"] if multi_boundary else "two_sided")


def _threshold_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--channel", default="pam4", help="pam2 | pam4 | pam8 | bec | identical:<m>")
    p.add_argument("--mapper", default="uniform", help="'uniform' or a mapper CSV file")
    p.add_argument("--delta", type=float, default=1e-4)
    p.add_argument("--p-tar", dest="p_tar", type=float, default=1e-6)
    p.add_argument("--l-max", dest="l_max", type=int, default=5000)
    p.add_argument("--search", choices=["linear_scan", "bisection"], default="linear_scan")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scmapper", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("channel-table", help="bit-channel erasures over an eps_bar grid (CSV)")
    p.add_argument("--m", type=int, default=2, choices=[1, 2, 3])
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--start", type=float, default=0.0)
    p.add_argument("--stop", type=float, default=1.0)
    p.add_argument("--out", default=None)
    p.add_argument("--emit-plot-script", action="store_true")

    p = sub.add_parser("rate", help="design rates (CSV)")
    _ensemble_args(p, multi=True, multi_boundary=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("threshold", help="decoding threshold (JSON; CSV for sweeps over L/w)")
    _ensemble_args(p, multi=True)
    _threshold_args(p)
    p.add_argument("--out", default=None)
    p.add_argument("--emit-plot-script", action="store_true")

    p = sub.add_parser("wave", help="record the decoding trajectory at one eps_bar (CSV)")
    _ensemble_args(p)
    _threshold_args(p)
    p.add_argument("--eps-bar", dest="eps_bar", default=None,
                   help="operating point; defaults to the threshold stored with --mapper")
    p.add_argument("--eps", type=float, nargs="+", default=None, help="explicit BEC erasure vector")
    p.add_argument("--out", default=None)
    p.add_argument("--emit-plot-script", action="store_true")

    p = sub.add_parser("optimize", help="iterative mapper optimization")
    _ensemble_args(p)
    _threshold_args(p)
    p.add_argument("--population", type=int, default=None)
    p.add_argument("--generations", type=int, default=None)
    p.add_argument("--F", type=float, default=None)
    p.add_argument("--CR", type=float, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--init-spread", dest="init_spread", type=float, default=None)
    p.add_argument("--inner-l-max", dest="inner_l_max", type=int, default=None)
    p.add_argument("--max-outer", dest="max_outer", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start", default=None, help="mapper CSV used as the first incumbent")
    p.add_argument("--out", required=True, help="mapper CSV path (a JSON sidecar is written next to it)")
    p.add_argument("--emit-plot-script", action="store_true")

    p = sub.add_parser("lift", help="lift a 2-channel mapper to more channels")
    p.add_argument("mapper")
    p.add_argument("--target-m", dest="target_m", type=int, default=3)
    p.add_argument("--channel", default="pam4")
    p.add_argument("--target-channel", dest="target_channel", default=None)
    p.add_argument("--eps-bar", dest="eps_bar", type=float, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("mapper", help="mapper file utilities")
    msub = p.add_subparsers(dest="mapper_command", required=True)
    q = msub.add_parser("make-uniform")
    q.add_argument("--m", type=int, required=True)
    q.add_argument("--L", type=int, required=True)
    q.add_argument("--out", required=True)
    q = msub.add_parser("validate")
    q.add_argument("file")
    q = msub.add_parser("flip")
    q.add_argument("file")
    q.add_argument("--out", required=True)
    q = msub.add_parser("rotate")
    q.add_argument("file")
    q.add_argument("--k", type=int, required=True)
    q.add_argument("--out", required=True)
    q = msub.add_parser("mix")
    q.add_argument("file")
    q.add_argument("--eps-bar", dest="eps_bar", type=float, required=True)
    q.add_argument("--channel", default="pam4")

    p = sub.add_parser("run", help="execute an experiment spec (YAML)")
    p.add_argument("spec")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--output-dir", dest="output_dir", default=None)
    p.add_argument("--emit-plot-script", action="store_true")
    return ap


def _options(args: argparse.Namespace) -> dict:
    drop = {"command", "verbose", "out", "mapper_command"}
    return {k: v for k, v in vars(args).items() if k not in drop and v is not None}


def _print_json(rec) -> None:
    print(json.dumps(rec, sort_keys=True, default=ex._json_default))


def _mapper_command(args) -> int:
    cmd = args.mapper_command
    if cmd == "make-uniform":
        save_mapper(args.out, uniform(args.m, args.L))
        return 0
    A, meta = load_mapper(args.file)
    if cmd == "validate":
        rep = validate(A)
        print(rep)
        return 0 if rep.ok else 1
    if cmd == "flip":
        save_mapper(args.out, flip_columns(A), {k: v for k, v in meta.items() if k not in ("m", "L")})
        return 0
    if cmd == "rotate":
        save_mapper(args.out, rotate_columns(A, args.k), {k: v for k, v in meta.items() if k not in ("m", "L")})
        return 0
    if cmd == "mix":
        cs = ex.make_family(args.channel)(args.eps_bar)
        print(",".join(repr(float(v)) for v in np.atleast_1d(input_eps(A, cs))))
        return 0
    raise AssertionError(cmd)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "mapper":
            return _mapper_command(args)
        if args.command == "run":
            try:
                spec = ex.load_spec(args.spec)
            except ex.SpecError as exc:
                print(f"spec error: {exc}", file=sys.stderr)
                return 2
            out_dir = args.output_dir or os.environ.get(ENV_OUTPUT_DIR)
            if out_dir:
                spec.output_dir = out_dir
            workers = args.workers or (int(os.environ[ENV_WORKERS]) if os.environ.get(ENV_WORKERS) else None)
            if args.emit_plot_script:
                spec.emit_plot_script = True
            summary = ex.run_spec(spec, workers)
            _print_json({"failed": summary["failed"], "runs": [
                {"name": r["name"], "status": r["status"]} for r in summary["runs"]]})
            return 1 if summary["failed"] else 0
        opts = _options(args)
        out = getattr(args, "out", None)
        if args.command == "wave" and args.eps_bar not in (None, "threshold"):
            opts["eps_bar"] = float(args.eps_bar)
        rec = ex.TASKS[args.command](opts, out)
        if args.command in ("optimize", "lift", "wave") or (args.command == "threshold" and out):
            _print_json(rec)
        if args.command == "lift" and not rec["feasible"]:
            return 1
        return 0
    except ScMapperError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
