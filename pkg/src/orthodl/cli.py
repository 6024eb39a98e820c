"""Command line interface: ``orthodl {simulate,recover,sweep,geometry,image}``.

Exit codes: 0 ok, 1 usage or validation error, 2 I/O error, 3 recovery failed.
Machine-readable summaries go to stdout as one JSON document; logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FAILED = 0, 1, 2, 3

log = logging.getLogger("orthodl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(doc) -> None:
    sys.stdout.write(json.dumps(doc, indent=2, default=float) + "\n")
    sys.stdout.flush()


def _out_dir(path):
    if path is None:
        return None
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc}") from exc
    return path


def _write_text(path, text) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _solve_config(args):
    from .optimizer import SolveConfig, default_schedule

    kw = {"max_iters": args.max_iters, "stagnation_window": args.stagnation_window or None}
    if args.preset == "experiment":
        return SolveConfig(schedule=default_schedule(1, 0.5, "experiment"), **kw)
    return SolveConfig(schedule=default_schedule(args.n_hint, args.alpha, "theory"), **kw)


def _add_solver_flags(p):
    p.add_argument("--preset", choices=["experiment", "theory"], default="experiment",
                   help="step schedule preset (default experiment)")
    p.add_argument("--alpha", type=float, default=0.375, help="decay exponent of the theory preset")
    p.add_argument("--max-iters", type=int, default=20000, help="iterations per run")
    p.add_argument("--stagnation-window", type=int, default=500,
                   help="stop a run after this many iterations without improvement (0 disables)")


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    from .model import Theta, make_instance, save_instance

    theta = Theta(args.theta, n=args.n, override=args.theta_override)
    inst = make_instance(args.n, args.m, theta, args.dict, args.seed,
                         theta_override=args.theta_override)
    out = args.out
    if args.out_dir is not None:
        out = os.path.join(_out_dir(args.out_dir), out)
    save_instance(inst, out)
    _emit({"path": out, "n": inst.n, "m": inst.m, "theta": inst.theta, "dict_kind": inst.dict_kind,
           "seed": inst.seed, "nnz_fraction": inst.nnz_fraction()})
    return EXIT_OK


def cmd_recover(args) -> int:
    from .model import load_instance
    from .recovery import recover_dictionary

    inst = load_instance(args.instance)
    args.n_hint = inst.n
    config = _solve_config(args)
    if args.runs is not None and args.runs < 0:
        raise UsageError("--runs must be nonnegative")
    rep = recover_dictionary(inst, config, args.runs, args.tol, args.seed, args.threads, args.chunk_size)
    doc = rep.to_dict(include_timing=args.timing)
    if args.out_dir is not None:
        d = _out_dir(args.out_dir)
        _write_text(os.path.join(d, "report.json"), rep.to_json(args.timing))
        _write_text(os.path.join(d, "atoms.csv"), rep.atoms_csv())
    doc.pop("matches")
    _emit(doc)
    log.info("found %d of %d atoms in %d runs", len(rep.atoms), rep.n, rep.runs)
    return EXIT_OK if rep.success else EXIT_FAILED


def cmd_sweep(args) -> int:
    from .pipeline.sweep import SweepConfig, run_sweep

    with open(args.config) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed config {args.config}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("sweep config must be a JSON object")
    if args.seed_given:
        doc["master_seed"] = args.seed
    try:
        config = SweepConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid sweep config: {exc}") from exc
    out = _out_dir(args.out_dir or ".")
    res = run_sweep(config, args.threads, args.timing, out)
    _emit({"cells": len(res.cells), "rows": len(res.rows),
           "raw": os.path.join(out, "sweep_raw.csv"), "agg": os.path.join(out, "sweep_agg.csv"),
           "monotone_fraction": res.monotone_fraction(),
           "success_rates": [{"n": c.n, "m": c.m, "theta": c.theta, "success_rate": c.success_rate}
                             for c in res.cells]})
    mono = res.monotone_fraction()
    if mono is not None and mono < 0.9:
        log.warning("success rate increases with m in only %.0f%% of adjacent pairs", 100 * mono)
    return EXIT_OK


def cmd_geometry(args) -> int:
    from .geometry import CHECKS, report_json, run_check

    names = sorted(CHECKS) if args.check == ["all"] else args.check
    unknown = [c for c in names if c not in CHECKS]
    if unknown:
        raise UsageError(f"unknown check(s) {unknown}; choose from {sorted(CHECKS)} or 'all'")
    if args.n is not None and args.n > 22:
        raise UsageError("exact checks enumerate supports and need n <= 22")
    results = []
    for name in names:
        r = run_check(name, n=args.n, theta=args.theta, trials=args.trials, seed=args.seed, m=args.m)
        level = logging.INFO if r.passed else logging.WARNING
        log.log(level, "%s: %d/%d passed (worst slack %.3g)%s", name, r.passes, r.samples,
                r.worst_slack, "" if r.hard else " [soft]")
        results.append(r)
    text = report_json(results)
    if args.out_dir is not None:
        _write_text(os.path.join(_out_dir(args.out_dir), "report.json"), text)
    sys.stdout.write(text)
    ok = all(r.passed or not r.hard for r in results)
    return EXIT_OK if ok else EXIT_FAILED


def cmd_image(args) -> int:
    from .pipeline.image import read_pgm, run_image_pipeline

    img = read_pgm(args.image)
    H, W = img.shape
    if H % 8 or W % 8:
        raise UsageError(f"image dims {H}x{W} are not multiples of 8")
    args.n_hint = 64
    config = _solve_config(args)
    if args.runs is not None and args.runs <= 0:
        raise UsageError("--runs must be positive")
    rep = run_image_pipeline(img, _out_dir(args.out_dir or "."), args.runs, config, args.seed,
                             args.threads, args.centering, args.bins, args.chunk_size)
    rep = dict(rep)
    rep.pop("kept_runs")
    _emit(rep)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="orthodl", description="Orthogonal dictionary recovery by Riemannian subgradient descent.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, threads=True):
        sp.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
        sp.add_argument("--out-dir", default=None, help="output directory (created if absent)")
        if threads:
            sp.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                            help="worker processes; results do not depend on it")
            sp.add_argument("--timing", action="store_true",
                            help="include wall-clock timings in outputs (makes them nondeterministic)")
            sp.add_argument("--chunk-size", type=int, default=256, help="runs per solver batch")

    s = sub.add_parser("simulate", help="sample an instance and write it to a binary file")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--theta", type=float, required=True)
    s.add_argument("--dict", choices=["identity", "random_orthogonal"], default="identity")
    s.add_argument("--theta-override", action="store_true",
                   help="allow theta outside the range the theory covers")
    s.add_argument("--out", required=True, help="instance file")
    common(s, threads=False)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("recover", help="multi-restart recovery on a saved instance")
    r.add_argument("instance")
    r.add_argument("--runs", type=int, default=None, help="restarts (default round(5 n ln n))")
    r.add_argument("--tol", type=float, default=1e-3)
    _add_solver_flags(r)
    common(r)
    r.set_defaults(func=cmd_recover)

    w = sub.add_parser("sweep", help="phase-transition sweep from a JSON config")
    w.add_argument("config")
    common(w)
    w.set_defaults(func=cmd_sweep)

    g = sub.add_parser("geometry", help="numerical checks of the landscape predicates")
    g.add_argument("--check", nargs="+", default=["all"], help="check names or 'all'")
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--theta", type=float, default=None)
    g.add_argument("--trials", type=int, default=None)
    g.add_argument("--m", type=int, default=None)
    common(g, threads=False)
    g.set_defaults(func=cmd_geometry)

    i = sub.add_parser("image", help="learn a dictionary from 8x8 blocks of a PGM image")
    i.add_argument("image", help="8-bit binary PGM")
    i.add_argument("--runs", type=int, default=None, help="restarts (default round(5 n ln n))")
    i.add_argument("--centering", choices=["none", "mean"], default="none")
    i.add_argument("--bins", type=int, default=100, help="coefficient histogram bins")
    _add_solver_flags(i)
    common(i)
    i.set_defaults(func=cmd_image)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    if getattr(args, "threads", 1) < 1:
        args.threads = 1
    from .model import InstanceFormatError
    from .pipeline.image import ImageFormatError

    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (OSError, InstanceFormatError, ImageFormatError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_USAGE
    except np.linalg.LinAlgError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_FAILED
    except RuntimeError as exc:
        log.error("%s", exc)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
