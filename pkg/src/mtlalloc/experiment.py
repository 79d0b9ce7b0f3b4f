"""Monte Carlo experiment driver.

For every repetition ``r`` a data seed and a training seed are derived from
the master seed, datasets are generated once, and every configured scheme is
trained on them. Results are merged in (scheme, task, repetition) order so the
report does not depend on how cells were scheduled.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .benchmarks import parameter_count, train_naive, train_single_tasks, train_zero_padding
from .bundle import REPORT_COLUMNS, final_metric_rows, reference_rows, save_bundle, write_csv, write_log
from .config import ExperimentConfig
from .errors import MtlError
from .report import AGGREGATE_COLUMNS, aggregate
from .tasks import build_datasets
from .training import train

log = logging.getLogger(__name__)

TRAINERS = {
    "proposed": train,
    "single_task": train_single_tasks,
    "zero_padding": train_zero_padding,
    "naive": train_naive,
}

_DATA_KEY, _TRAIN_KEY = 21, 22


def derive_seed(master: int, *keys: int) -> int:
    ss = np.random.SeedSequence(master, spawn_key=tuple(keys))
    return int(ss.generate_state(1, np.uint64)[0])


def repetition_seeds(master: int, repetition: int):
    """``(data_seed, train_seed)`` for one repetition."""
    return derive_seed(master, _DATA_KEY, repetition), derive_seed(master, _TRAIN_KEY, repetition)


def train_scheme(scheme, specs, datasets, train_config):
    try:
        trainer = TRAINERS[scheme]
    except KeyError:
        raise MtlError(f"unknown scheme {scheme!r}; choose from {', '.join(TRAINERS)}") from None
    return trainer(specs, datasets, train_config)


@dataclass
class CellOutcome:
    scheme: str
    repetition: int
    rows: list = field(default_factory=list)
    error: str = ""
    exit_code: int = 0


@dataclass
class ExperimentResult:
    rows: list
    aggregates: list
    failures: list
    out_dir: Path

    @property
    def exit_code(self) -> int:
        return max((f.exit_code for f in self.failures), default=0)


def _run_cell(cfg: ExperimentConfig, scheme: str, repetition: int, datasets, out_dir) -> CellOutcome:
    data_seed, train_seed = repetition_seeds(cfg.seed, repetition)
    tcfg = replace(cfg.train, seed=train_seed)
    cell_dir = Path(out_dir) / "runs" / f"rep_{repetition}" / scheme
    try:
        result = train_scheme(scheme, cfg.tasks, datasets, tcfg)
    except MtlError as exc:
        partial = getattr(exc, "partial_log", None)
        if partial:
            write_log(cell_dir / "log.csv", partial)
        log.error("%s, repetition %d failed: %s", scheme, repetition, exc)
        return CellOutcome(scheme, repetition, error=str(exc), exit_code=exc.exit_code)
    meta = {"repetition": repetition, "data_seed": data_seed, "train_seed": train_seed,
            "experiment": cfg.to_dict(), "n_params": parameter_count(result.model)}
    save_bundle(cell_dir, scheme, result, cfg.tasks, meta)
    rows = final_metric_rows(scheme, cfg.tasks, result.model, datasets, repetition, result)
    for spec in cfg.tasks:
        n = parameter_count(result.model.models[spec.id]) if scheme == "single_task" else parameter_count(result.model)
        rows.append((scheme, spec.kind, spec.dim, repetition, "n_params", n))
    return CellOutcome(scheme, repetition, rows)


def _cell_job(args):
    cfg, scheme, repetition, out_dir = args
    data_seed, _ = repetition_seeds(cfg.seed, repetition)
    datasets = build_datasets(cfg.tasks, cfg.D, cfg.split, data_seed)
    return _run_cell(cfg, scheme, repetition, datasets, out_dir)


def _sort_rows(rows, cfg):
    scheme_order = {s: i for i, s in enumerate(("reference", *cfg.schemes))}
    task_order = {(t.kind, t.dim): i for i, t in enumerate(cfg.tasks)}
    # stable sort keeps the metric order produced for each cell
    return sorted(rows, key=lambda r: (scheme_order[r[0]], task_order[(r[1], r[2])], r[3]))


def curve_rows(log_rows, task_id) -> list:
    return [(it, m, v) for it, _, tid, m, v in log_rows if tid == task_id]


def _write_curves(cfg, out_dir, outcomes):
    """Mean curve over repetitions for every (scheme, task)."""
    from .bundle import read_log

    for scheme in cfg.schemes:
        logs = []
        for o in outcomes:
            path = Path(out_dir) / "runs" / f"rep_{o.repetition}" / scheme / "log.csv"
            if o.scheme == scheme and not o.error and path.exists():
                logs.append(read_log(path))
        if not logs:
            continue
        for spec in cfg.tasks:
            acc: dict = {}
            for lg in logs:
                for it, m, v in curve_rows(lg, spec.id):
                    acc.setdefault((it, m), []).append(v)
            rows = [(it, m, float(np.mean(vs))) for (it, m), vs in acc.items()]
            write_csv(Path(out_dir) / "curves" / scheme / f"{task_label(cfg, spec)}.csv",
                      ("iteration", "metric", "value"), rows)


def task_label(cfg, spec) -> str:
    same = [t for t in cfg.tasks if (t.kind, t.dim) == (spec.kind, spec.dim)]
    return spec.name if len(same) == 1 else f"{spec.name}_id{spec.id}"


def run_experiment(cfg: ExperimentConfig, out_dir, workers: int = 1) -> ExperimentResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, s, r, out_dir) for r in range(cfg.repetitions) for s in cfg.schemes]
    rows, outcomes = [], []
    for r in range(cfg.repetitions):
        data_seed, _ = repetition_seeds(cfg.seed, r)
        rows += reference_rows(cfg.tasks, build_datasets([t for t in cfg.tasks if not t.supervised], cfg.D,
                                                         cfg.split, data_seed), r)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_cell_job, jobs))
    else:
        cache = {}
        for cfg_, scheme, r, od in jobs:
            if r not in cache:
                cache.clear()
                cache[r] = build_datasets(cfg.tasks, cfg.D, cfg.split, repetition_seeds(cfg.seed, r)[0])
            log.info("training %s, repetition %d", scheme, r)
            outcomes.append(_run_cell(cfg_, scheme, r, cache[r], od))
    for o in outcomes:
        rows += o.rows
    rows = _sort_rows(rows, cfg)
    aggregates = aggregate(rows)
    write_csv(out_dir / "report.csv", REPORT_COLUMNS, rows)
    write_csv(out_dir / "aggregate.csv", AGGREGATE_COLUMNS, aggregates)
    failures = [o for o in outcomes if o.error]
    write_csv(out_dir / "failures.csv", ("scheme", "repetition", "exit_code", "error"),
              [(o.scheme, o.repetition, o.exit_code, o.error) for o in failures])
    _write_curves(cfg, out_dir, outcomes)
    return ExperimentResult(rows, aggregates, failures, out_dir)
