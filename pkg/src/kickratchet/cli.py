"""Command-line entry point.

    kickratchet sweep run CONFIG [--workers N] [--force]
    kickratchet sweep resume STORE [--workers N] [--force]
    kickratchet point run --k K --gamma G [--tasks ...] [--config FILE] [--out DIR]
    kickratchet emit STORE --figure figN
    kickratchet validate config FILE

Exit status: 0 on success, 1 when any point or task failed, 2 for a bad config.
"""
import argparse
import json
import logging
import sys

from .errors import ConfigError, KickRatchetError, MissingArtifactError
from .sweep import FIGURES, TASKS, SweepConfig, check_writable, emit_plotdata, resume, run_point, run_sweep

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def _tasks(text):
    tasks = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = set(tasks) - set(TASKS)
    if not tasks or bad:
        raise argparse.ArgumentTypeError(f"tasks must be a comma list from {', '.join(TASKS)}")
    return tasks


def build_parser():
    parser = argparse.ArgumentParser(prog="kickratchet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("sweep", help="run or resume a (k, gamma) sweep")
    sweep_sub = sweep.add_subparsers(dest="action", required=True)
    run = sweep_sub.add_parser("run", help="start a sweep from a config file")
    run.add_argument("config", help="key = value config file")
    run.add_argument("--output", help="store directory (overrides output_dir)")
    res = sweep_sub.add_parser("resume", help="continue a sweep from its store")
    res.add_argument("store", help="store directory")
    for p in (run, res):
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: $KICKRATCHET_WORKERS or CPU count)")
        p.add_argument("--force", action="store_true", help="recompute completed ledger entries")

    point = sub.add_parser("point", help="single-point pipeline")
    point_sub = point.add_subparsers(dest="action", required=True)
    prun = point_sub.add_parser("run", help="run one (k, gamma) point")
    prun.add_argument("--k", type=float, required=True, help="kick strength (axis set by kick_axis)")
    prun.add_argument("--gamma", type=float, required=True)
    prun.add_argument("--tasks", type=_tasks, default=None, help="comma list of currents,spectra,equilibrium")
    prun.add_argument("--config", help="config file supplying numerical settings")
    prun.add_argument("--out", help="directory for artifacts (none written if omitted)")

    emit = sub.add_parser("emit", help="write plot tables from a store")
    emit.add_argument("store")
    emit.add_argument("--figure", required=True, choices=FIGURES + ("all",))
    emit.add_argument("--out", help="output directory (default STORE/figures)")

    val = sub.add_parser("validate", help="check input files")
    val_sub = val.add_subparsers(dest="action", required=True)
    vcfg = val_sub.add_parser("config", help="parse and validate a sweep config")
    vcfg.add_argument("file")
    return parser


def _sweep(args):
    if args.action == "run":
        config = SweepConfig.load(args.config)
        if args.output:
            config = config.replace(output_dir=args.output)
        store = run_sweep(config, workers=args.workers, force=args.force)
    else:
        store = resume(args.store, workers=args.workers, force=args.force)
    failed = store.failures()
    n_points = len(store.config.points())
    print(f"{store.path}: {n_points} points, {len(failed)} failed task(s)")
    for key, e in sorted(failed.items()):
        print(f"  FAILED {key} stage={e.get('stage')} {e.get('error_class')}: {e.get('message')}")
    return EXIT_PARTIAL if failed else EXIT_OK


def _point(args):
    config = SweepConfig.load(args.config) if args.config else SweepConfig()
    tasks = args.tasks or config.tasks
    # keep the sweep's seed stream when the point belongs to the configured grid
    index = config.index_of(args.k, args.gamma) or 0
    config = config.replace(k_list=(args.k,), gamma_list=(args.gamma,), tasks=tasks)
    result = run_point(args.k, args.gamma, config, tasks, point_index=index, out_dir=args.out)
    summary = {"k": result.k, "gamma": result.gamma, "record": result.record.to_dict(),
               "metrics": result.metrics, "errors": result.errors}
    print(json.dumps(summary, indent=1, sort_keys=True, default=float))
    return EXIT_OK if result.ok else EXIT_PARTIAL


def _emit(args):
    figures = FIGURES if args.figure == "all" else (args.figure,)
    status = EXIT_OK
    for fig in figures:
        try:
            for path in emit_plotdata(args.store, fig, out_dir=args.out):
                print(path)
        except MissingArtifactError as exc:
            print(f"{fig}: {exc}", file=sys.stderr)
            status = EXIT_PARTIAL
    return status


def _validate(args):
    config = SweepConfig.load(args.file)
    check_writable(config.output_dir)
    print(f"{args.file}: ok, {len(config.points())} points, tasks {', '.join(config.tasks)}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handler = {"sweep": _sweep, "point": _point, "emit": _emit, "validate": _validate}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KickRatchetError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
