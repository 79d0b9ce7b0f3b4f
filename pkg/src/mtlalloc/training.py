"""Multi-task training with a routed base network.

The base network has ``maxN`` inputs and outputs. Task ``i`` uses the first
``N_i`` rows of the input weight matrix, the first ``N_i`` output neurons of
the last layer, and the hidden-to-hidden matrices multiplied element-wise by
its masks. During the joint phase the masks are the router's soft output and
gradients reach the router through ``H * W``; afterwards the masks are
thresholded, frozen, and only the base network is retrained.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn
from .errors import ConfigError, DataError, DimensionError, MtlError, NumericError
from .nn import DenseParams, Optimizer, make_rng
from .router import MaskSet, RouterState, harden, init_router, route_all, router_backward, split_flat
from .tasks import LN2, check_betas

log = logging.getLogger(__name__)

DUAL_MODES = ("projected", "unprojected")

# stream identifiers for make_rng(seed, stream)
_RNG_THETA, _RNG_ROUTER, _RNG_BATCH, _RNG_THETA_RETRAIN = 1, 2, 3, 4


@dataclass
class TrainConfig:
    eta: float = 1e-3
    t1: int = 5000
    t2: int = 5000
    gamma: float = 5.0
    mu: float = 0.1
    sigma: float = 0.001
    T: int = 20
    core_widths: tuple = (32, 32, 32, 32)
    seed: int = 0
    dual_mode: str = "projected"
    eta_dual: Optional[float] = None
    sampling: str = "all"
    subset_size: int = 1
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    cadence: int = 50
    reinit_theta: bool = True
    reset_duals: bool = False
    sl_loss_units: str = "watts"

    def __post_init__(self):
        self.core_widths = tuple(int(w) for w in self.core_widths)
        if self.eta <= 0 or self.gamma <= 0:
            raise ConfigError("eta and gamma must be positive")
        if self.t1 < 1 or self.t2 < 1:
            raise ConfigError("t1 and t2 must be at least 1")
        if self.dual_mode not in DUAL_MODES:
            raise ConfigError(f"dual_mode must be one of {DUAL_MODES}")
        if self.sampling not in ("all", "subset"):
            raise ConfigError("sampling must be 'all' or 'subset'")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be 'adam' or 'sgd'")
        if self.sl_loss_units not in ("fraction", "watts"):
            raise ConfigError("sl_loss_units must be 'fraction' or 'watts'")
        if self.cadence < 1 or self.T < 1 or not self.core_widths:
            raise ConfigError("cadence, T and core_widths must be positive / non-empty")

    @property
    def dual_step(self) -> float:
        return self.eta if self.eta_dual is None else self.eta_dual

    def optimizer_for(self, arrays) -> Optimizer:
        return Optimizer(arrays, self.eta, self.optimizer, self.adam_beta1, self.adam_beta2, self.adam_eps)


def base_widths(max_dim: int, core_widths, in_extra: int = 0) -> list:
    """``d_0 .. d_{L+1}`` with the first and last hidden layers as wide as the largest task."""
    return [max_dim + in_extra, max_dim, *core_widths, max_dim, max_dim]


def head_for(spec) -> str:
    return "softmax" if spec.supervised else "sigmoid"


# ------------------------------------------------------------------ losses


def task_loss(spec, y, X, Y=None, lam: float = 0.0, sl_units: str = "watts"):
    """Single-task loss on a batch of head outputs ``y`` (power fractions).

    Supervised: batch mean of the squared error norm, measured on fractions or
    (``sl_units="watts"``) on powers. Unsupervised: batch mean
    of negative capacity plus ``lam`` times the mean power excess over
    ``P_av``. Returns ``(loss, dloss/dy, power_gap)``; the gap is ``None`` for
    supervised tasks.
    """
    B = y.shape[0]
    if spec.supervised:
        if Y is None:
            raise DataError(f"task {spec.id}: supervised batch without labels")
        scale = spec.p_tot**2 if sl_units == "watts" else 1.0
        r = y - Y
        return float(scale * np.sum(r * r) / B), 2.0 * scale * r / B, None
    P = spec.p_tot * y
    S = np.sum(X * P, axis=1)
    cap = np.log2(1.0 + S)
    gap = float(P.sum(axis=1).mean() - spec.p_av)
    loss = float(-cap.mean() + lam * gap)
    dy = spec.p_tot * (-X / ((1.0 + S)[:, None] * LN2) + lam) / B
    return loss, dy, gap


def update_dual(lam: float, gap: float, step: float, mode: str) -> float:
    if mode == "projected":
        return max(0.0, lam + step * gap)
    return lam + step * max(0.0, gap)


def sample_batches(specs, datasets, rng, config: TrainConfig) -> dict:
    """``{task_id: (X, Y)}`` for the tasks trained this step."""
    chosen = list(specs)
    if config.sampling == "subset":
        m = min(config.subset_size, len(specs))
        idx = np.sort(rng.choice(len(specs), size=m, replace=False))
        chosen = [specs[i] for i in idx]
    out = {}
    for spec in chosen:
        data = datasets[spec.id]["train"]
        rows = rng.integers(0, len(data), size=spec.batch_size)
        out[spec.id] = (data.features[rows], None if data.labels is None else data.labels[rows])
    return out


# ------------------------------------------------------------- routed model


@dataclass
class SubnetView:
    """One task's slice of the base network.

    Input weights are the rows selected by ``rows`` of ``W_1``; the output layer
    keeps its first ``dim`` neurons (weight columns and bias entries).
    """

    base: DenseParams
    dim: int
    masks: Optional[list]
    rows: np.ndarray
    head: str

    def layers(self):
        W, b = self.base.weights, self.base.biases
        weights = [W[0][self.rows]] + W[1:-1] + [W[-1][:, :self.dim]]
        biases = b[:-1] + [b[-1][:self.dim]]
        return weights, biases

    def forward(self, X):
        weights, biases = self.layers()
        acts = ["relu"] * (len(weights) - 1) + [self.head]
        masks = None if self.masks is None else [None, *self.masks, None]
        return nn.forward(weights, biases, X, acts, masks)

    def scatter(self, grads: nn.Grads):
        """Full-size gradients for the base net from this view's gradients."""
        gW = [np.zeros_like(W) for W in self.base.weights]
        gb = [np.zeros_like(b) for b in self.base.biases]
        np.add.at(gW[0], self.rows, grads.weights[0])
        for l in range(1, len(gW) - 1):
            gW[l] = grads.weights[l]
            gb[l] = grads.biases[l]
        gb[0] = grads.biases[0]
        gW[-1][:, :self.dim] = grads.weights[-1]
        gb[-1][:self.dim] = grads.biases[-1]
        return gW, gb


class RoutedModel:
    """Base network shared by all tasks, optionally gated by a router.

    Mask source, in order of precedence: frozen ``masks`` (hard), the
    ``router`` (soft), otherwise no masks at all (every weight shared).
    With ``index_feature`` the task id is fed as one extra input appended after
    the ``maxN`` gain inputs.
    """

    def __init__(self, specs, base: DenseParams, router: Optional[RouterState] = None,
                 masks: Optional[MaskSet] = None, gamma: float = 5.0, index_feature: bool = False):
        check_betas(specs)
        self.specs = list(specs)
        self.by_id = {s.id: s for s in self.specs}
        self.position = {s.id: i for i, s in enumerate(self.specs)}
        self.max_dim = max(s.dim for s in self.specs)
        self.base = base
        self.router = router
        self.masks = masks
        self.gamma = gamma
        self.index_feature = index_feature
        self.sl_units = "watts"
        widths = base.widths
        if widths[1] != self.max_dim or widths[-2] != self.max_dim or widths[-1] != self.max_dim:
            raise DimensionError(f"first/last hidden and output widths must equal max task dim {self.max_dim}")
        if widths[0] != self.max_dim + int(index_feature):
            raise DimensionError(f"input width {widths[0]} does not match layout")
        if router is not None and router.n_tasks != len(self.specs):
            raise DimensionError("router one-hot width differs from task count")

    @property
    def mask_mode(self) -> str:
        if self.masks is not None:
            return "hard"
        return "soft" if self.router is not None else "ones"

    def input_rows(self, spec) -> np.ndarray:
        rows = np.arange(spec.dim)
        if self.index_feature:
            rows = np.append(rows, self.max_dim)
        return rows

    def prepare_input(self, spec, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != spec.dim:
            raise DimensionError(f"task {spec.id}: expected {spec.dim} features, got {X.shape}")
        if self.index_feature:
            X = np.hstack([X, np.full((X.shape[0], 1), float(spec.id))])
        return X

    def soft_masks(self):
        flat, cache = route_all(self.router, self.gamma)
        return flat, cache

    def current_masks(self) -> Optional[MaskSet]:
        if self.masks is not None:
            return self.masks
        if self.router is None:
            return None
        flat, _ = self.soft_masks()
        return MaskSet({s.id: split_flat(flat[self.position[s.id]], self.router.mask_shapes)
                        for s in self.specs}, hard=False)

    def view(self, task_id, masks: Optional[MaskSet] = None) -> SubnetView:
        spec = self.by_id[task_id]
        if spec.dim > self.max_dim:
            raise ConfigError(f"task {task_id}: dim {spec.dim} exceeds network width {self.max_dim}")
        if masks is None:
            masks = self.current_masks()
        return SubnetView(self.base, spec.dim, None if masks is None else masks[task_id],
                          self.input_rows(spec), head_for(spec))

    def predict(self, task_id, X):
        spec = self.by_id[task_id]
        y, _ = self.view(task_id).forward(self.prepare_input(spec, X))
        return y

    def mask_report(self) -> MaskSet:
        m = self.current_masks()
        if m is None:
            shapes = [(a, b) for a, b in
                      ((W.shape[0], W.shape[1]) for W in self.base.weights[1:-1])]
            m = MaskSet({s.id: [np.ones(sh) for sh in shapes] for s in self.specs}, hard=True)
        return m

    def loss_and_grads(self, batches, duals, with_router: bool):
        """Multi-task loss and gradients.

        Returns ``(loss, theta_grads, router_grads, gaps, per_task_loss)`` where
        ``theta_grads`` follows :meth:`DenseParams.arrays` order and
        ``router_grads`` follows :meth:`RouterState.arrays` order (or ``None``).
        """
        if with_router and (self.router is None or self.masks is not None):
            raise ConfigError("router gradients need a live router and no frozen masks")
        flat = cache = None
        if self.masks is None and self.router is not None:
            flat, cache = self.soft_masks()
        gW = [np.zeros_like(W) for W in self.base.weights]
        gb = [np.zeros_like(b) for b in self.base.biases]
        g_flat = np.zeros_like(flat) if with_router else None
        total, gaps, losses = 0.0, {}, {}
        for task_id, (X, Y) in batches.items():
            spec = self.by_id[task_id]
            if flat is not None:
                masks = split_flat(flat[self.position[task_id]], self.router.mask_shapes)
            elif self.masks is not None:
                masks = self.masks[task_id]
            else:
                masks = None
            view = SubnetView(self.base, spec.dim, masks, self.input_rows(spec), head_for(spec))
            y, tape = view.forward(self.prepare_input(spec, X))
            loss, dy, gap = task_loss(spec, y, X, Y, duals.get(task_id, 0.0), self.sl_units)
            losses[task_id] = loss
            if gap is not None:
                gaps[task_id] = gap
            total += spec.beta * loss
            grads = nn.backward(tape, spec.beta * dy)
            tw, tb = view.scatter(grads)
            for l in range(len(gW)):
                gW[l] += tw[l]
                gb[l] += tb[l]
            if with_router:
                g_flat[self.position[task_id]] = np.concatenate([g.ravel() for g in grads.masks[1:-1]])
        theta = []
        for W, b in zip(gW, gb):
            theta += [W, b]
        phi = router_backward(self.router, cache, g_flat) if with_router else None
        return total, theta, phi, gaps, losses


def multitask_loss(model: RoutedModel, batches, duals) -> float:
    return model.loss_and_grads(batches, duals, with_router=False)[0]


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    scheme: str
    model: object
    duals: dict
    log: list = field(default_factory=list)        # (iteration, phase, task_id, metric, value)
    history: dict = field(default_factory=dict)    # per-iteration arrays
    snapshots: dict = field(default_factory=dict)


class _Recorder:
    """Collects per-iteration history and test metrics at a fixed cadence."""

    def __init__(self, model, specs, datasets, config, total_steps, evaluator):
        self.model = model
        self.specs = specs
        self.datasets = datasets
        self.cadence = config.cadence
        self.total = total_steps
        self.evaluate = evaluator
        self.log = []
        self.loss = []
        self.gap = {s.id: [] for s in specs if not s.supervised}
        self.lam = {s.id: [] for s in specs if not s.supervised}

    def step(self, it, phase, loss, gaps, duals):
        self.loss.append(loss)
        for task_id in self.gap:
            self.gap[task_id].append(gaps.get(task_id, np.nan))
            self.lam[task_id].append(duals[task_id])
        if it % self.cadence == 0 or it == self.total:
            for spec in self.specs:
                for name, value in self.evaluate(self.model, spec, self.datasets[spec.id]["test"]).items():
                    self.log.append((it, phase, spec.id, name, value))
                if not spec.supervised:
                    self.log.append((it, phase, spec.id, "lambda", duals[spec.id]))

    def history(self):
        return {
            "loss": np.asarray(self.loss),
            "gap": {k: np.asarray(v) for k, v in self.gap.items()},
            "lambda": {k: np.asarray(v) for k, v in self.lam.items()},
        }


def _default_evaluator():
    from .evaluation import evaluate_task
    return evaluate_task


def _apply_step(model, optimizers, batches, duals, config, with_router, it, phase):
    loss, theta_g, phi_g, gaps, losses = model.loss_and_grads(batches, duals, with_router)
    if not np.isfinite(loss):
        bad = [k for k, v in losses.items() if not np.isfinite(v)]
        raise NumericError(f"non-finite loss at iteration {it} ({phase}); tasks {bad}; duals {duals}")
    optimizers[0].step(theta_g)
    if with_router:
        optimizers[1].step(phi_g)
    for task_id, gap in gaps.items():
        duals[task_id] = update_dual(duals[task_id], gap, config.dual_step, config.dual_mode)
    return loss, gaps


def joint_step(model: RoutedModel, optimizers, batches, duals, config: TrainConfig, it=0):
    """One primal-dual step on base and router parameters together."""
    return _apply_step(model, optimizers, batches, duals, config, True, it, "joint")


def retrain_step(model: RoutedModel, optimizer, batches, duals, config: TrainConfig, it=0):
    """One primal-dual step on the base network only, masks frozen."""
    if model.router is not None and model.masks is None:
        raise ConfigError("retrain_step needs frozen masks (or no router at all)")
    return _apply_step(model, [optimizer], batches, duals, config, False, it, "retrain")


def _check_inputs(specs, datasets):
    check_betas(specs)
    for s in specs:
        if s.id not in datasets:
            raise DataError(f"no dataset for task {s.id}")
        if s.supervised and datasets[s.id]["train"].labels is None:
            raise DataError(f"task {s.id}: supervised task without labels")


def _run_phases(model, specs, datasets, config, duals, batch_rng, rec, widths):
    # Algorithm: t1 joint steps, harden, optional fresh base draw, t2 retrain steps
    base, router = model.base, model.router
    total = config.t1 + config.t2
    opts = [config.optimizer_for(base.arrays()), config.optimizer_for(router.arrays())]
    for t in range(1, config.t1 + 1):
        batches = sample_batches(specs, datasets, batch_rng, config)
        loss, gaps = joint_step(model, opts, batches, duals, config, t)
        rec.step(t, "joint", loss, gaps, duals)

    soft = model.current_masks()
    model.masks = harden(soft)
    snapshots = {"soft_masks": soft}
    if config.reinit_theta:
        fresh = DenseParams.xavier(widths, make_rng(config.seed, _RNG_THETA_RETRAIN))
        for dst, src in zip(base.arrays(), fresh.arrays()):
            dst[...] = src
    if config.reset_duals:
        for k in duals:
            duals[k] = 0.0
    snapshots["retrain_start"] = base.copy()
    opt = config.optimizer_for(base.arrays())
    for t in range(config.t1 + 1, total + 1):
        batches = sample_batches(specs, datasets, batch_rng, config)
        loss, gaps = retrain_step(model, opt, batches, duals, config, t)
        rec.step(t, "retrain", loss, gaps, duals)

    return snapshots


def train(specs, datasets, config: TrainConfig, evaluator=None) -> TrainResult:
    """Joint router/base training, mask hardening, then base retraining."""
    _check_inputs(specs, datasets)
    evaluator = evaluator or _default_evaluator()
    max_dim = max(s.dim for s in specs)
    widths = base_widths(max_dim, config.core_widths)
    router = init_router(len(specs), config.T, widths, config.mu, config.sigma,
                         make_rng(config.seed, _RNG_ROUTER))
    base = DenseParams.xavier(widths, make_rng(config.seed, _RNG_THETA))
    model = RoutedModel(specs, base, router=router, gamma=config.gamma)
    model.sl_units = config.sl_loss_units
    duals = {s.id: 0.0 for s in specs if not s.supervised}
    batch_rng = make_rng(config.seed, _RNG_BATCH)
    total = config.t1 + config.t2
    rec = _Recorder(model, specs, datasets, config, total, evaluator)

    try:
        snapshots = _run_phases(model, specs, datasets, config, duals, batch_rng, rec, widths)
    except MtlError as exc:
        exc.partial_log = rec.log
        raise
    return TrainResult("proposed", model, duals, rec.log, rec.history(), snapshots)


def fit_shared(scheme, model, specs, datasets, config: TrainConfig, evaluator=None) -> TrainResult:
    """Train a model without a router for ``t1 + t2`` steps (budget parity).

    ``model`` needs ``base`` and ``loss_and_grads(batches, duals, False)``.
    """
    _check_inputs(specs, datasets)
    evaluator = evaluator or _default_evaluator()
    model.sl_units = config.sl_loss_units
    duals = {s.id: 0.0 for s in specs if not s.supervised}
    batch_rng = make_rng(config.seed, _RNG_BATCH)
    total = config.t1 + config.t2
    rec = _Recorder(model, specs, datasets, config, total, evaluator)
    opt = config.optimizer_for(model.base.arrays())
    try:
        for t in range(1, total + 1):
            batches = sample_batches(specs, datasets, batch_rng, config)
            loss, gaps = _apply_step(model, [opt], batches, duals, config, False, t, scheme)
            rec.step(t, "train", loss, gaps, duals)
    except MtlError as exc:
        exc.partial_log = rec.log
        raise
    return TrainResult(scheme, model, duals, rec.log, rec.history(), {})
