import numpy as np
import pytest

from helpers import make_data, make_specs, tiny_config
from mtlalloc.benchmarks import (
    PlainModel,
    parameter_count,
    train_naive,
    train_single_task,
    train_single_tasks,
    train_zero_padding,
)
from mtlalloc.errors import DimensionError
from mtlalloc.evaluation import eval_supervised
from mtlalloc.nn import DenseParams, make_rng
from mtlalloc.tasks import capacity_objective
from mtlalloc.training import TrainConfig, base_widths, train


def dense_count(widths):
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


@pytest.fixture(scope="module")
def mixed():
    specs = make_specs([("S", 2), ("U", 3), ("S", 4)])
    return specs, make_data(specs, D=120, seed=6)


def padded_model(specs):
    max_dim = max(s.dim for s in specs)
    return PlainModel(specs, DenseParams.xavier(base_widths(max_dim, (4,), in_extra=1), make_rng(0)), pad=True)


# --------------------------------------------------------- zero padding


def test_padding_layout(mixed):
    specs, data = mixed
    model = padded_model(specs)
    X, Y = data[1]["train"].features[:5], data[1]["train"].labels[:5]
    Xp, Yp = model.prepare(specs[0], X, Y)
    assert Xp.shape == (5, 5) and Yp.shape == (5, 4)
    assert np.all(Xp[:, 2:4] == 0) and np.all(Xp[:, 4] == 1.0)
    assert np.array_equal(Xp[:, :2], X)
    assert np.all(np.abs(Yp.sum(axis=1) - 1) < 1e-12)


def test_padded_bands_do_not_change_capacity():
    g = make_rng(0).exponential(size=(6, 3))
    P = make_rng(1).uniform(size=(6, 3))
    gp = np.hstack([g, np.zeros((6, 2))])
    Pp = np.hstack([P, make_rng(2).uniform(size=(6, 2))])
    assert np.array_equal(capacity_objective(P, g), capacity_objective(Pp, gp))


def test_padded_predictions_are_sliced_and_renormalised(mixed):
    specs, data = mixed
    model = padded_model(specs)
    y = model.predict(1, data[1]["test"].features)
    assert y.shape[1] == 2
    assert np.all(np.abs(y.sum(axis=1) - 1) < 1e-12)
    u = model.predict(2, data[2]["test"].features)
    assert u.shape[1] == 3 and np.all((u > 0) & (u < 1))


def test_padded_model_width_checks(mixed):
    specs, _ = mixed
    with pytest.raises(DimensionError):
        PlainModel(specs, DenseParams.xavier([4, 4, 4, 4], make_rng(0)), pad=True)


# -------------------------------------------------------- parameter counts


def test_parameter_counts(mixed):
    specs, data = mixed
    cfg = tiny_config(t1=1, t2=1)
    proposed = train(specs, data, cfg)
    zp = train_zero_padding(specs, data, cfg)
    naive = train_naive(specs, data, cfg)
    single = train_single_tasks(specs, data, cfg)
    shared = dense_count(base_widths(4, (4, 4)))
    assert parameter_count(proposed.model) == shared
    # one extra input row (the task index) for both index-fed schemes
    assert parameter_count(zp.model) == shared + 4
    assert parameter_count(naive.model) == shared + 4
    counts = single.model.n_params
    for s in specs:
        w = base_widths(4, (4, 4))
        w[0] = w[-1] = s.dim
        assert counts[s.id] == dense_count(w)


# ------------------------------------------------------------------ naive


def test_naive_masks_are_ones_and_deterministic(mixed):
    specs, data = mixed
    a = train_naive(specs, data, tiny_config(t1=5, t2=5))
    b = train_naive(specs, data, tiny_config(t1=5, t2=5))
    report = a.model.mask_report()
    assert all(np.all(m == 1.0) for ms in report.masks.values() for m in ms)
    assert a.log == b.log
    assert a.model.mask_mode == "ones" and a.model.index_feature


def test_naive_one_task_widths():
    specs = make_specs([("S", 3)])
    data = make_data(specs, D=40)
    r = train_naive(specs, data, tiny_config(t1=1, t2=1))
    single = train_single_task(specs[0], data, tiny_config(t1=1, t2=1))
    assert r.model.base.widths == [4] + single.model.base.widths[1:]


# ------------------------------------------------------------- single task


def test_budget_parity(mixed):
    specs, data = mixed
    cfg = tiny_config(t1=3, t2=4, cadence=1)
    for fn in (train_zero_padding, train_naive, train_single_tasks, train):
        r = fn(specs, data, cfg)
        assert max(row[0] for row in r.log) == 7


def test_single_task_deterministic(mixed):
    specs, data = mixed
    a = train_single_task(specs[1], data, tiny_config(t1=5, t2=5))
    b = train_single_task(specs[1], data, tiny_config(t1=5, t2=5))
    assert a.log == b.log
    assert all(np.array_equal(x, y) for x, y in zip(a.model.base.arrays(), b.model.base.arrays()))


def test_single_task_supervised_toy():
    specs = make_specs([("S", 2)])
    data = make_data(specs, D=1000, seed=0)
    r = train_single_task(specs[0], data, TrainConfig(t1=1000, t2=1000, seed=0, cadence=500))
    assert eval_supervised(r.model, specs[0], data[1]["test"]) < 1e-3


def test_single_task_learns_beyond_uniform():
    specs = make_specs([("S", 5)])
    data = make_data(specs, D=2000, seed=0)
    r = train_single_task(specs[0], data, TrainConfig(t1=1000, t2=1000, seed=0, cadence=1000))
    test = data[1]["test"]
    fit = np.mean((r.model.predict(1, test.features) - test.labels) ** 2)
    uniform = np.mean((test.labels - 0.2) ** 2)
    assert fit < 0.5 * uniform
