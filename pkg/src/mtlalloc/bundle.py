"""Model bundles on disk and metric rows computed from them.

A bundle directory holds ``params.json``, ``masks.json``, ``duals.json`` and
``config.json``; training also leaves ``log.csv`` and ``history.csv`` next to
them. Floats go through ``repr`` in JSON and ``%.17g`` in CSV, both of which
round-trip 64-bit values exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .benchmarks import PlainModel, SingleTaskEnsemble
from .errors import DataError
from .evaluation import evaluate_task
from .nn import DenseParams
from .router import MaskSet, RouterState
from .tasks import TaskSpec, ul_reference_policy
from .training import RoutedModel

LOG_COLUMNS = ("iteration", "phase", "task_id", "metric_name", "value")
REPORT_COLUMNS = ("scheme", "task_kind", "N", "repetition", "metric", "value")


def fmt(value) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, int, np.floating, np.integer)) and not isinstance(v, bool)
                        else v for v in row])


def _dump(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def _load(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc


# ------------------------------------------------------------------ saving


def _networks(model) -> dict:
    if isinstance(model, SingleTaskEnsemble):
        return {f"task_{k}": m.base.to_dict() for k, m in model.models.items()}
    return {"shared": model.base.to_dict()}


def _mask_doc(model) -> dict:
    if isinstance(model, RoutedModel):
        return model.mask_report().to_dict()
    return {"hard": True, "order": "layer ascending, row-major", "masks": [],
            "note": "scheme has no routed hidden layers"}


def save_bundle(out_dir, scheme, result, specs, meta: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = result.model
    params = {"scheme": scheme, "networks": _networks(model)}
    if isinstance(model, RoutedModel):
        params["index_feature"] = model.index_feature
        params["gamma"] = model.gamma
        if model.router is not None:
            params["router"] = model.router.to_dict()
    _dump(out / "params.json", params)
    _dump(out / "masks.json", _mask_doc(model))
    _dump(out / "duals.json", {str(k): v for k, v in sorted(result.duals.items())})
    _dump(out / "config.json", {"scheme": scheme, "tasks": [s.to_dict() for s in specs], **meta})
    write_log(out / "log.csv", result.log)
    write_history(out / "history.csv", result.history)
    return out


def write_log(path, log) -> None:
    write_csv(path, LOG_COLUMNS, log)


def write_history(path, history) -> None:
    rows = []
    for task_id in sorted(history.get("gap", {})):
        gap, lam = history["gap"][task_id], history["lambda"][task_id]
        rows += [(i + 1, task_id, g, l) for i, (g, l) in enumerate(zip(gap, lam))]
    write_csv(path, ("iteration", "task_id", "gap", "lambda"), rows)


def read_log(path) -> list:
    with Path(path).open() as fh:
        return [(int(r["iteration"]), r["phase"], int(r["task_id"]), r["metric_name"], float(r["value"]))
                for r in csv.DictReader(fh)]


# ----------------------------------------------------------------- loading


def load_bundle(model_dir):
    """Rebuild ``(scheme, model, specs, config)`` from a bundle directory."""
    d = Path(model_dir)
    if not d.is_dir():
        raise DataError(f"model directory {d} does not exist")
    params, config = _load(d / "params.json"), _load(d / "config.json")
    masks_doc = _load(d / "masks.json")
    try:
        specs = [TaskSpec(**t) for t in config["tasks"]]
        scheme = params["scheme"]
        nets = {k: DenseParams.from_dict(v) for k, v in params["networks"].items()}
        if scheme == "single_task":
            models = {}
            for s in specs:
                solo = TaskSpec(**{**s.to_dict(), "beta": 1.0})
                models[s.id] = PlainModel([solo], nets[f"task_{s.id}"])
            model = SingleTaskEnsemble(models)
        elif scheme == "zero_padding":
            model = PlainModel(specs, nets["shared"], pad=True)
        else:
            router = RouterState.from_dict(params["router"]) if "router" in params else None
            masks = MaskSet.from_dict(masks_doc) if scheme == "proposed" else None
            model = RoutedModel(specs, nets["shared"], router=router, masks=masks,
                                gamma=params.get("gamma", 5.0), index_feature=params.get("index_feature", False))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{d}: malformed bundle ({exc})") from exc
    return scheme, model, specs, config


# ----------------------------------------------------------------- metrics


def final_metric_rows(scheme, specs, model, datasets, repetition, result=None) -> list:
    """Report rows for one trained model.

    End-of-training metrics come from evaluating ``model`` now. With a training
    ``result`` the best value over logged checkpoints is added under a
    ``best_`` name, plus dual-variable diagnostics for unsupervised tasks.
    """
    rows = []
    for spec in specs:
        key = (scheme, spec.kind, spec.dim, repetition)
        metrics = evaluate_task(model, spec, datasets[spec.id]["test"])
        rows += [(*key, name, value) for name, value in metrics.items()]
        if result is None:
            continue
        logged = [(it, m, v) for it, _, tid, m, v in result.log if tid == spec.id]
        if spec.supervised:
            rows.append((*key, "best_delay_mse", min(v for _, m, v in logged if m == "delay_mse")))
        else:
            by_it = {}
            for it, m, v in logged:
                by_it.setdefault(it, {})[m] = v
            feasible = [r["capacity"] for r in by_it.values() if r["violation"] <= 0.0]
            rows.append((*key, "best_feasible_capacity", max(feasible) if feasible else math.nan))
            gap = result.history["gap"][spec.id]
            lam = result.history["lambda"][spec.id]
            tail = max(1, len(gap) // 10)
            rows += [
                (*key, "tail_mean_gap", float(np.mean(gap[-tail:]))),
                (*key, "min_lambda", float(np.min(lam))),
                (*key, "final_lambda", float(lam[-1])),
            ]
    return rows


def reference_rows(specs, datasets, repetition) -> list:
    rows = []
    for spec in specs:
        if spec.supervised:
            continue
        cap, power = ul_reference_policy(datasets[spec.id]["test"].features, spec.p_av, spec.p_tot)
        key = ("reference", spec.kind, spec.dim, repetition)
        rows += [(*key, "capacity", cap), (*key, "mean_power", power)]
    return rows
