"""Command-line entry point: ``inrbo optimize | evaluate | report | selftest``.

Exit codes: 0 success, 1 self-test failure, 2 configuration error, 3 I/O or
data error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .checks import run_checks
from .docs import dump_document
from .driver import TrialRecord, best, read_log, resume, run_optimization
from .errors import (ConfigError, CorruptFile, CorruptLog, EmptyRun, InvalidSpace, ModalityMismatch,
                     OutOfBounds, SettingsMismatch, UnsupportedFormat)
from .objectives import evaluate_objective
from .report import convergence_csv, write_report
from .runfile import OUTPUT_DIR_ENV, apply_overrides, load_runfile
from .space import load_configuration

EXIT_OK = 0
EXIT_TEST_FAILURE = 1
EXIT_CONFIG = 2
EXIT_IO = 3

CONFIG_ERRORS = (ConfigError, SettingsMismatch, OutOfBounds, InvalidSpace, ModalityMismatch)
IO_ERRORS = (OSError, CorruptFile, CorruptLog, UnsupportedFormat, EmptyRun)


def _err(message: str) -> None:
    print(f"inrbo: error: {message}", file=sys.stderr)


def _summary(state, wall_time: float) -> dict:
    config, trial = best(state)
    return {
        "status": state.status,
        "trials": len(state.trials),
        "best_trial": trial.index,
        "best_score": trial.score,
        "metric": trial.metric,
        "wall_time": round(wall_time, 3),
        "best_configuration": config.to_dict(),
    }


def cmd_optimize(args) -> int:
    run = load_runfile(args.run_file)
    out_dir = args.out_dir or os.environ.get(OUTPUT_DIR_ENV) or None
    run = apply_overrides(run, n_init=args.n_init, n_iter=args.n_iter, seed=args.seed,
                          epochs=args.epochs, workers=args.workers, output_dir=out_dir)
    space = run.load_space()
    settings = run.settings()
    log_path = run.output_dir / "run.jsonl"
    objective = run.objective()

    def progress(t: TrialRecord) -> None:
        flag = " (diverged)" if t.diverged else ""
        print(f"trial {t.index:4d} [{t.phase}] {t.metric}={t.score:.4f}{flag} ({t.wall_time:.1f}s)",
              flush=True)

    start = time.perf_counter()
    if log_path.exists() and not args.force:
        print(f"resuming {log_path}", flush=True)
        state = resume(log_path, objective, settings, space, on_trial=progress)
    else:
        state = run_optimization(space, objective, settings.n_init, settings.n_iter, settings,
                                 log_path=log_path, on_trial=progress)
    elapsed = time.perf_counter() - start
    (run.output_dir / "convergence.csv").write_text(convergence_csv(state), encoding="utf-8")
    summary = _summary(state, sum(t.wall_time for t in state.trials))
    summary["session_wall_time"] = round(elapsed, 3)
    (run.output_dir / "summary.yaml").write_text(dump_document(summary), encoding="utf-8")
    print(f"best {summary['metric']}={summary['best_score']:.4f} at trial {summary['best_trial']}; "
          f"outputs in {run.output_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run = load_runfile(args.run_file)
    run = apply_overrides(run, epochs=args.epochs)
    space = run.load_space()
    config = load_configuration(args.config, space)
    dataset = run.load_dataset()
    score = evaluate_objective(config, dataset, run.budget, args.seed)
    report = score.report
    result = {
        "metric": score.metric,
        "score": score.value,
        "diverged": score.diverged,
        "final_loss": report.final_loss if report else None,
        "epochs_run": report.epochs_run if report else None,
        "train_wall_time": round(report.wall_time, 3) if report else None,
        "seed": args.seed,
    }
    if args.json:
        print(json.dumps(result, sort_keys=True))
    else:
        for key, value in result.items():
            print(f"{key}: {json.dumps(value)}")
    return EXIT_OK


def cmd_report(args) -> int:
    state = read_log(args.log)
    if not state.trials:
        raise EmptyRun(f"{args.log}: log holds no trials")
    out_dir = Path(args.out_dir or os.environ.get(OUTPUT_DIR_ENV) or Path(args.log).parent)
    paths = write_report(state, out_dir)
    print(paths["top"].read_text(encoding="utf-8"), end="")
    for kind in ("csv", "svg", "top"):
        print(f"wrote {paths[kind]}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = run_checks(args.level, mutate=args.mutate, report=lambda r: print(r.line(), flush=True))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"selftest FAILED: {', '.join(failed)}")
        return EXIT_TEST_FAILURE
    print(f"selftest passed ({len(results)} checks)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inrbo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="run or resume an optimization from a run file")
    p.add_argument("run_file")
    p.add_argument("--n-init", type=int)
    p.add_argument("--n-iter", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out-dir", help=f"output directory (also settable via ${OUTPUT_DIR_ENV})")
    p.add_argument("--force", action="store_true", help="start over even if a run log exists")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("evaluate", help="train and score one configuration")
    p.add_argument("run_file")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int)
    p.add_argument("--json", action="store_true", help="print one JSON object instead of key: value lines")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="write convergence CSV, SVG plot and top-5 table")
    p.add_argument("log")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selftest", help="run the built-in oracle checks")
    p.add_argument("--level", choices=("fast", "full"), default="fast")
    p.add_argument("--mutate", choices=("ei",), help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except IO_ERRORS as exc:
        _err(str(exc))
        return EXIT_IO
    except KeyboardInterrupt:
        _err("interrupted; rerun the same command to resume")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
