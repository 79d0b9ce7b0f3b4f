"""Reading, aggregating and formatting metric reports."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

from .bundle import REPORT_COLUMNS, fmt
from .errors import DataError

AGGREGATE_COLUMNS = ("scheme", "task_kind", "N", "metric", "mean", "std", "count")


def read_report(path) -> list:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
                raise DataError(f"{path}: expected columns {','.join(REPORT_COLUMNS)}")
            return [(r["scheme"], r["task_kind"], int(r["N"]), r["repetition"], r["metric"], float(r["value"]))
                    for r in reader]
    except OSError as exc:
        raise DataError(f"cannot read report {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed row ({exc})") from exc


def aggregate(rows) -> list:
    """Mean and sample standard deviation over repetitions, first-seen order.

    NaN entries (for example a best-feasible capacity that never existed) are
    left out of the mean; ``count`` says how many values were used.
    """
    groups: dict = {}
    for scheme, kind, N, _rep, metric, value in rows:
        groups.setdefault((scheme, kind, N, metric), []).append(value)
    out = []
    for key, values in groups.items():
        vals = [v for v in values if not math.isnan(v)]
        n = len(vals)
        mean = math.fsum(vals) / n if n else math.nan
        std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1)) if n > 1 else 0.0 if n else math.nan
        out.append((*key, mean, std, n))
    return out


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v for v in row])
    return buf.getvalue()


def to_markdown(header, rows) -> str:
    def cell(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(cell(v) for v in row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def lookup(aggregates, scheme, kind, N, metric) -> float:
    for s, k, n, m, mean, _std, _count in aggregates:
        if (s, k, n, m) == (scheme, kind, N, metric):
            return mean
    raise KeyError((scheme, kind, N, metric))
