"""Small shared builders for the test modules."""

import numpy as np

from mtlalloc.nn import DenseParams, make_rng
from mtlalloc.router import init_router
from mtlalloc.tasks import TaskSpec, build_datasets
from mtlalloc.training import RoutedModel, TrainConfig, base_widths


def make_specs(layout, p_av=0.5):
    """``layout`` is a list of ``(kind, N)`` with kind 'S' or 'U'."""
    K = len(layout)
    specs = []
    for i, (kind, n) in enumerate(layout):
        if kind == "S":
            specs.append(TaskSpec(id=i + 1, kind="supervised", dim=n, beta=1 / K, p_tot=10.0))
        else:
            specs.append(TaskSpec(id=i + 1, kind="unsupervised", dim=n, beta=1 / K, p_tot=1.0, p_av=p_av))
    return specs


def make_data(specs, D=200, seed=0):
    return build_datasets(specs, D, (0.75, 0.25), seed=seed)


def tiny_config(**kw):
    base = dict(t1=4, t2=4, core_widths=(4, 4), T=4, cadence=2, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def mini_joint_model(seed=0, mu=0.3, sigma=0.2):
    """Two-task routed model (one SL, one UL) with widths at most 6 and T = 4."""
    specs = make_specs([("S", 2), ("U", 3)])
    widths = base_widths(3, (4, 4))
    base = DenseParams.xavier(widths, make_rng(seed, 1))
    rng = make_rng(seed, 9)
    for b in base.biases:
        b[:] = rng.normal(0, 0.1, b.shape)
    router = init_router(2, 4, widths, mu, sigma, make_rng(seed, 2))
    router.b_in[:] = rng.normal(0, 0.05, router.b_in.shape)
    return specs, RoutedModel(specs, base, router=router, gamma=5.0)


def batches_for(specs, datasets, rows=6):
    out = {}
    for s in specs:
        d = datasets[s.id]["train"]
        out[s.id] = (d.features[:rows], None if d.labels is None else d.labels[:rows])
    return out


def finite_difference_error(model, batches, duals, h=1e-5):
    """Max relative error between analytic and central-difference gradients
    over every entry of the base network and the router."""
    _, theta, phi, _, _ = model.loss_and_grads(batches, duals, with_router=True)

    def f():
        return model.loss_and_grads(batches, duals, with_router=False)[0]

    worst = 0.0
    for arrays, grads in ((model.base.arrays(), theta), (model.router.arrays(), phi)):
        for arr, g in zip(arrays, grads):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                fp = f()
                arr[idx] = old - h
                fm = f()
                arr[idx] = old
                fd = (fp - fm) / (2 * h)
                worst = max(worst, abs(fd - g[idx]) / max(1e-7, abs(fd), abs(g[idx])))
    return worst
