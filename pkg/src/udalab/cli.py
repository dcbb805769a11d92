"""Command-line surface: run experiments, build reports, check gradients, bench.

Exit codes: 0 success, 2 invalid config or arguments, 1 runtime failure
(including a non-finite loss abort, whose message names the method and term).
"""

from __future__ import annotations

import argparse
import sys

from .bench import format_bench, run_bench
from .errors import ConfigError, NanLossError, UdalabError
from .gradcheck import run_gradcheck


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="udalab",
        description="Desk-scale unsupervised domain adaptation experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute every seed of a config file")
    run_p.add_argument("--config", required=True, help="experiment config path")
    run_p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
    run_p.add_argument("--out", default=None, help="output directory (defaults to run.out)")
    run_p.add_argument("--parallel", type=int, default=1, help="worker processes for the seed list")

    rep_p = sub.add_parser("report", help="aggregate a results directory into tables")
    rep_p.add_argument("--in", dest="results_dir", required=True, help="directory with results.csv")
    rep_p.add_argument("--compare", action="append", default=[], metavar="METHOD_A:METHOD_B",
                       help="signed-rank comparison to run (repeatable)")
    rep_p.add_argument("--alt", choices=("greater", "less"), default="greater",
                       help="one-sided alternative for the comparisons")
    rep_p.add_argument("--out", default=None, help="report output directory (defaults to --in)")

    gc_p = sub.add_parser("gradcheck", help="finite-difference check of the autodiff engine")
    gc_p.add_argument("--trials", type=int, default=100)
    gc_p.add_argument("--seed", type=int, default=0)

    bench_p = sub.add_parser("bench", help="compare the compiled and numpy kernel backends")
    bench_p.add_argument("--repeat", type=int, default=2000)
    bench_p.add_argument("--batch", type=int, default=64)
    return parser


def _cmd_run(args) -> int:
    from .config import load_config
    from .runner import resolve_out_dir, run_experiment

    cfg = load_config(args.config, args.override)
    out_dir = resolve_out_dir(cfg, args.out)
    results = run_experiment(cfg, out_dir, parallel=max(args.parallel, 1))
    print(f"results: {results}")
    return 0


def _cmd_report(args) -> int:
    from .runner import parse_compare, write_report

    written = write_report(args.results_dir, parse_compare(args.compare),
                           alternative=args.alt, out_dir=args.out)
    for path in written["tables"]:
        print(f"table: {path}")
    print(f"summary: {written['method_mean']}")
    print(f"comparisons: {written['comparisons']}")
    return 0


def _cmd_gradcheck(args) -> int:
    report = run_gradcheck(trials=args.trials, seed=args.seed)
    status = "PASS" if report.passed() else "FAIL"
    print(
        f"gradcheck {status}: {report.trials} graphs, {report.total_params} parameters, "
        f"max relative error {report.max_rel_error:.3e} (tolerance 1e-4), "
        f"{report.elapsed_s:.1f}s"
    )
    return 0 if report.passed() else 1


def _cmd_bench(args) -> int:
    print(format_bench(run_bench(repeat=args.repeat, batch=args.batch)))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "report": _cmd_report,
        "gradcheck": _cmd_gradcheck,
        "bench": _cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NanLossError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 1
    except UdalabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
