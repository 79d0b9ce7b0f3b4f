"""Comparison schemes: one network per task, zero-padding, and naive sharing."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import nn
from .errors import DimensionError
from .nn import DenseParams, make_rng
from .tasks import check_betas
from .training import (
    RoutedModel,
    TrainConfig,
    TrainResult,
    _RNG_THETA,
    base_widths,
    fit_shared,
    head_for,
    task_loss,
)

SCHEMES = ("proposed", "single_task", "zero_padding", "naive")


class PlainModel:
    """A mask-free dense network whose output head depends on the task.

    With ``pad=True`` inputs are zero-padded to ``maxN`` gains plus the task id
    as a last column, and the network always emits ``maxN`` values. Training
    uses the full padded output; :meth:`predict` returns the first ``N_i``
    entries, renormalised to sum to one for supervised tasks.
    """

    def __init__(self, specs, base: DenseParams, pad: bool = False):
        self.specs = list(specs)
        self.by_id = {s.id: s for s in self.specs}
        self.base = base
        self.pad = pad
        self.sl_units = "watts"
        self.max_dim = max(s.dim for s in self.specs)
        widths = base.widths
        if pad and (widths[0] != self.max_dim + 1 or widths[-1] != self.max_dim):
            raise DimensionError("padded model needs maxN + 1 inputs and maxN outputs")
        if not pad and (len(self.specs) != 1 or widths[0] != self.max_dim or widths[-1] != self.max_dim):
            raise DimensionError("unpadded model serves exactly one task of matching width")

    def prepare(self, spec, X, Y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != spec.dim:
            raise DimensionError(f"task {spec.id}: expected {spec.dim} features, got {X.shape}")
        if not self.pad:
            return X, Y
        n = X.shape[0]
        Xp = np.zeros((n, self.max_dim + 1))
        Xp[:, :spec.dim] = X
        Xp[:, -1] = float(spec.id)
        Yp = None
        if Y is not None:
            Yp = np.zeros((n, self.max_dim))
            Yp[:, :spec.dim] = Y
        return Xp, Yp

    def _forward(self, spec, Xin):
        acts = ["relu"] * (len(self.base.weights) - 1) + [head_for(spec)]
        return nn.forward(self.base.weights, self.base.biases, Xin, acts)

    def predict(self, task_id, X):
        spec = self.by_id[task_id]
        Xin, _ = self.prepare(spec, X)
        y, _ = self._forward(spec, Xin)
        y = y[:, :spec.dim]
        if self.pad and spec.supervised:
            y = y / y.sum(axis=1, keepdims=True)
        return y

    def loss_and_grads(self, batches, duals, with_router=False):
        gW = [np.zeros_like(W) for W in self.base.weights]
        gb = [np.zeros_like(b) for b in self.base.biases]
        total, gaps, losses = 0.0, {}, {}
        for task_id, (X, Y) in batches.items():
            spec = self.by_id[task_id]
            Xin, Yin = self.prepare(spec, X, Y)
            y, tape = self._forward(spec, Xin)
            gains = Xin[:, :self.max_dim] if self.pad else Xin
            loss, dy, gap = task_loss(spec, y, gains, Yin, duals.get(task_id, 0.0), self.sl_units)
            losses[task_id] = loss
            if gap is not None:
                gaps[task_id] = gap
            total += spec.beta * loss
            grads = nn.backward(tape, spec.beta * dy)
            for l in range(len(gW)):
                gW[l] += grads.weights[l]
                gb[l] += grads.biases[l]
        theta = []
        for W, b in zip(gW, gb):
            theta += [W, b]
        return total, theta, None, gaps, losses


class SingleTaskEnsemble:
    """One independently trained :class:`PlainModel` per task."""

    def __init__(self, models: dict):
        self.models = models
        self.specs = [m.specs[0] for m in models.values()]

    def predict(self, task_id, X):
        return self.models[task_id].predict(task_id, X)

    @property
    def n_params(self) -> dict:
        return {k: m.base.n_params for k, m in self.models.items()}


def _task_seed(seed: int, task_id: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(10, task_id)).generate_state(1, np.uint64)[0])


def train_single_task(spec, datasets, config: TrainConfig, max_dim=None, evaluator=None) -> TrainResult:
    """Train a network of input/output width ``N_i`` for ``t1 + t2`` steps.

    Hidden widths follow the shared base network (``max_dim`` for the first and
    last hidden layers, default ``spec.dim``).
    """
    solo = replace(spec, beta=1.0)
    cfg = replace(config, seed=_task_seed(config.seed, spec.id))
    widths = base_widths(max_dim or spec.dim, config.core_widths)
    widths[0] = widths[-1] = spec.dim
    base = DenseParams.xavier(widths, make_rng(cfg.seed, _RNG_THETA))
    model = PlainModel([solo], base)
    return fit_shared("single_task", model, [solo], {spec.id: datasets[spec.id]}, cfg, evaluator)


def train_single_tasks(specs, datasets, config: TrainConfig, evaluator=None) -> TrainResult:
    max_dim = max(s.dim for s in specs)
    results = [train_single_task(s, datasets, config, max_dim, evaluator) for s in specs]
    model = SingleTaskEnsemble({s.id: r.model for s, r in zip(specs, results)})
    duals, log, gap, lam = {}, [], {}, {}
    for r in results:
        duals.update(r.duals)
        log += r.log
        gap.update(r.history["gap"])
        lam.update(r.history["lambda"])
    log.sort(key=lambda row: (row[0], row[2]))
    history = {"loss": {s.id: r.history["loss"] for s, r in zip(specs, results)}, "gap": gap, "lambda": lam}
    return TrainResult("single_task", model, duals, log, history, {})


def train_zero_padding(specs, datasets, config: TrainConfig, evaluator=None) -> TrainResult:
    check_betas(specs)
    max_dim = max(s.dim for s in specs)
    widths = base_widths(max_dim, config.core_widths, in_extra=1)
    base = DenseParams.xavier(widths, make_rng(config.seed, _RNG_THETA))
    return fit_shared("zero_padding", PlainModel(specs, base, pad=True), specs, datasets, config, evaluator)


def train_naive(specs, datasets, config: TrainConfig, evaluator=None) -> TrainResult:
    """The routed architecture with every mask fixed to one and a task-id input."""
    max_dim = max(s.dim for s in specs)
    widths = base_widths(max_dim, config.core_widths, in_extra=1)
    base = DenseParams.xavier(widths, make_rng(config.seed, _RNG_THETA))
    model = RoutedModel(specs, base, index_feature=True)
    return fit_shared("naive", model, specs, datasets, config, evaluator)


def parameter_count(model) -> int:
    """Trainable base-network parameters (the router is excluded)."""
    if isinstance(model, SingleTaskEnsemble):
        return max(model.n_params.values())
    return model.base.n_params
