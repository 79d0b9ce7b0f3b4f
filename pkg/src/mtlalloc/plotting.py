"""Figures for the report: training curves and end-of-training bar charts."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SCHEME_STYLE = {
    "proposed": dict(color="tab:blue", lw=1.8),
    "single_task": dict(color="tab:green", ls="--"),
    "zero_padding": dict(color="tab:orange", ls=":"),
    "naive": dict(color="tab:red", ls="-."),
    "reference": dict(color="black", lw=0.8),
}
CURVE_METRICS = {"sl": ("delay_mse",), "ul": ("capacity", "violation")}
LOG_SCALE = {"delay_mse"}


def _read_curve(path):
    series = defaultdict(lambda: ([], []))
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            xs, ys = series[row["metric"]]
            xs.append(int(row["iteration"]))
            ys.append(float(row["value"]))
    return series


def render_curves(curves_dir, out_dir) -> list:
    """One figure per task with a line per scheme; returns the written paths."""
    curves_dir, out_dir = Path(curves_dir), Path(out_dir)
    by_task = defaultdict(dict)
    for path in sorted(curves_dir.glob("*/*.csv")):
        by_task[path.stem][path.parent.name] = _read_curve(path)
    written = []
    for task, schemes in sorted(by_task.items()):
        metrics = CURVE_METRICS.get(task.split("_")[0], ())
        fig, axes = plt.subplots(1, len(metrics), figsize=(4.2 * len(metrics), 3.2), squeeze=False)
        for ax, metric in zip(axes[0], metrics):
            for scheme, series in schemes.items():
                if metric in series:
                    xs, ys = series[metric]
                    ax.plot(xs, ys, label=scheme, **SCHEME_STYLE.get(scheme, {}))
            if metric in LOG_SCALE:
                ax.set_yscale("log")
            ax.set_xlabel("iteration")
            ax.set_ylabel(metric)
            ax.grid(alpha=0.3)
        axes[0][0].set_title(task)
        axes[0][-1].legend(fontsize=7)
        fig.tight_layout()
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"curve_{task}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def render_summary(aggregates, out_dir) -> list:
    """Grouped bars of the end-of-training headline metric against N."""
    out_dir = Path(out_dir)
    written = []
    for kind, metric in (("supervised", "delay_mse"), ("unsupervised", "capacity")):
        cells = {(s, n): (mean, std) for s, k, n, m, mean, std, _ in aggregates if k == kind and m == metric}
        if not cells:
            continue
        schemes = list(dict.fromkeys(s for s, _ in cells))
        dims = sorted({n for _, n in cells})
        x = np.arange(len(dims))
        width = 0.8 / len(schemes)
        fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(dims), 3.4))
        for j, scheme in enumerate(schemes):
            means = [cells.get((scheme, n), (np.nan, 0))[0] for n in dims]
            stds = [cells.get((scheme, n), (0, 0))[1] for n in dims]
            style = SCHEME_STYLE.get(scheme, {})
            ax.bar(x + (j - (len(schemes) - 1) / 2) * width, means, width, yerr=stds, capsize=2,
                   label=scheme, color=style.get("color"))
        ax.set_xticks(x, [f"N={n}" for n in dims])
        ax.set_ylabel(metric)
        if metric in LOG_SCALE:
            ax.set_yscale("log")
        ax.legend(fontsize=7)
        ax.set_title(f"{kind}: {metric} at end of training")
        fig.tight_layout()
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"summary_{kind}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
