"""Test-set metrics shared by the training log, ``eval`` and the reports."""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .tasks import avg_power_gap


def eval_supervised(model, spec, dataset) -> float:
    """Mean squared difference between the delay of the model's allocation and
    the optimal delay, in s^2."""
    if dataset.labels is None:
        raise DataError(f"task {spec.id}: no labels to evaluate against")
    if dataset.labels.shape[0] != dataset.features.shape[0]:
        raise DataError(f"task {spec.id}: {dataset.labels.shape[0]} labels for {dataset.features.shape[0]} rows")
    y = model.predict(spec.id, dataset.features)
    d_model = spec.delay(y, dataset.features)
    d_opt = spec.delay(dataset.labels, dataset.features)
    return float(np.mean((d_model - d_opt) ** 2))


def eval_allocation(spec, fractions, gains):
    """``(mean capacity, violation, mean power)`` of a batch of allocations."""
    P = spec.p_tot * np.asarray(fractions)
    cap = float(spec.capacity(fractions, gains).mean())
    gap = avg_power_gap(P, spec.p_av)
    return cap, max(0.0, gap), gap + spec.p_av


def eval_unsupervised(model, spec, dataset):
    """``(mean capacity in bit/s/Hz, average-power violation in W)``."""
    y = model.predict(spec.id, dataset.features)
    cap, viol, _ = eval_allocation(spec, y, dataset.features)
    return cap, viol


def evaluate_task(model, spec, dataset) -> dict:
    if spec.supervised:
        return {"delay_mse": eval_supervised(model, spec, dataset)}
    y = model.predict(spec.id, dataset.features)
    cap, viol, power = eval_allocation(spec, y, dataset.features)
    return {"capacity": cap, "violation": viol, "mean_power": power}
