"""Command-line entry point: ``mtlalloc <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .bundle import REPORT_COLUMNS, final_metric_rows, load_bundle, save_bundle, write_csv
from .config import SCHEMES, load_config, with_overrides
from .errors import ConfigError, DataError, MtlError
from .report import AGGREGATE_COLUMNS, aggregate, read_report, to_csv, to_markdown
from .tasks import build_datasets, load_datasets, save_datasets

log = logging.getLogger("mtlalloc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _training_flags(p):
    g = p.add_argument_group("training overrides (win over the config file)")
    g.add_argument("--seed", type=int)
    g.add_argument("--t1", type=int)
    g.add_argument("--t2", type=int)
    g.add_argument("--eta", type=float)
    g.add_argument("--cadence", type=int)
    g.add_argument("--dual-mode", dest="dual_mode", choices=("projected", "unprojected"))


def build_parser() -> Parser:
    parser = Parser(prog="mtlalloc", description="Routed multi-task power allocation: data, training, evaluation, reports.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="generate train/test datasets for every configured task")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="dataset directory (config: data_dir)")
    p.add_argument("--seed", type=int)
    p.add_argument("--D", type=int, help="samples per task")

    p = sub.add_parser("train", help="train one scheme on a generated dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--scheme", choices=SCHEMES, help="config: scheme")
    p.add_argument("--data", help="dataset directory (config: data_dir)")
    p.add_argument("--out", help="model bundle directory (config: out)")
    _training_flags(p)

    p = sub.add_parser("eval", help="evaluate a saved model bundle on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="metrics CSV (report format)")

    p = sub.add_parser("report", help="aggregate metric CSVs and render figures")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--format", choices=("csv", "md"), default="csv")
    p.add_argument("--rows", action="store_true", help="emit the merged per-repetition rows instead of aggregates")
    p.add_argument("--out", help="write the table here instead of stdout")
    p.add_argument("--figures", help="figure directory (default: figures/ next to the first input)")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("run", help="full Monte Carlo experiment: data, every scheme, report")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="experiment directory (config: out)")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--schemes", nargs="+", choices=SCHEMES)
    p.add_argument("--workers", type=int, default=1)
    _training_flags(p)
    return parser


def _require(value, flag, key):
    if value is None:
        raise ConfigError(f"{flag} not given and config has no {key!r}")
    return value


def _overrides(args) -> dict:
    return {k: getattr(args, k, None) for k in ("seed", "t1", "t2", "eta", "cadence", "dual_mode")}


def cmd_gen_data(args) -> int:
    cfg = with_overrides(load_config(args.config), seed=args.seed, D=args.D)
    out = Path(_require(args.out or cfg.data_dir, "--out", "data_dir"))
    datasets = build_datasets(cfg.tasks, cfg.D, cfg.split, cfg.seed)
    save_datasets(datasets, cfg.tasks, out, cfg.seed, cfg.split)
    log.info("wrote %d task datasets to %s", len(datasets), out)
    return EXIT_OK


def _check_roster(config_specs, data_specs):
    def key(s):
        d = s.to_dict()
        d.pop("beta")
        return d

    if [key(s) for s in config_specs] != [key(s) for s in data_specs]:
        raise DataError("dataset tasks do not match the configured task roster")


def cmd_train(args) -> int:
    cfg = with_overrides(load_config(args.config), **_overrides(args))
    scheme = args.scheme or cfg.scheme or (cfg.schemes[0] if len(cfg.schemes) == 1 else None)
    scheme = _require(scheme, "--scheme", "scheme")
    data_dir = _require(args.data or cfg.data_dir, "--data", "data_dir")
    out = _require(args.out or cfg.out, "--out", "out")
    specs, datasets, data_seed = load_datasets(data_dir)
    _check_roster(cfg.tasks, specs)
    from .benchmarks import parameter_count
    from .experiment import train_scheme

    result = train_scheme(scheme, cfg.tasks, datasets, cfg.train)
    meta = {"repetition": 0, "data_seed": data_seed, "train_seed": cfg.train.seed,
            "experiment": cfg.to_dict(), "n_params": parameter_count(result.model)}
    save_bundle(out, scheme, result, cfg.tasks, meta)
    log.info("saved %s bundle to %s", scheme, out)
    return EXIT_OK


def cmd_eval(args) -> int:
    scheme, model, specs, config = load_bundle(args.model)
    data_specs, datasets, _ = load_datasets(args.data)
    _check_roster(specs, data_specs)
    rows = final_metric_rows(scheme, specs, model, datasets, config.get("repetition", 0))
    write_csv(args.out, REPORT_COLUMNS, rows)
    return EXIT_OK


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_report(args) -> int:
    rows = []
    for path in args.inputs:
        rows += read_report(path)
    header, table = (REPORT_COLUMNS, rows) if args.rows else (AGGREGATE_COLUMNS, aggregate(rows))
    _emit(to_csv(header, table) if args.format == "csv" else to_markdown(header, table), args.out)
    if not args.no_figures:
        from .plotting import render_curves, render_summary

        first = Path(args.inputs[0]).parent
        fig_dir = Path(args.figures) if args.figures else first / "figures"
        written = render_summary(aggregate(rows), fig_dir)
        if (first / "curves").is_dir():
            written += render_curves(first / "curves", fig_dir)
        log.info("wrote %d figures to %s", len(written), fig_dir)
    return EXIT_OK


def cmd_run(args) -> int:
    from .experiment import run_experiment
    from .plotting import render_curves, render_summary

    cfg = with_overrides(load_config(args.config), repetitions=args.repetitions,
                         schemes=args.schemes, **_overrides(args))
    out = Path(_require(args.out or cfg.out, "--out", "out"))
    result = run_experiment(cfg, out, workers=args.workers)
    render_summary(result.aggregates, out / "figures")
    render_curves(out / "curves", out / "figures")
    sys.stdout.write(to_markdown(AGGREGATE_COLUMNS, result.aggregates))
    for f in result.failures:
        log.error("failed: %s repetition %d (%s)", f.scheme, f.repetition, f.error)
    return result.exit_code


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "report": cmd_report, "run": cmd_run}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except MtlError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
