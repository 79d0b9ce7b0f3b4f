"""Experiment configuration: one JSON document validated against a schema.

Task entries may list several dimensions (``"N": [3, 5, 8]``); they expand in
order and receive ids ``1..K``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from .errors import ConfigError
from .tasks import SUPERVISED, TaskSpec, check_betas
from .training import TrainConfig

SCHEMES = ("proposed", "single_task", "zero_padding", "naive")

# JSON key -> TrainConfig field, where the names differ
_TRAIN_KEYS = {"hidden_widths": "core_widths"}
_TRAIN_ONLY = ("B", "beta_mode")


def load_schema() -> dict:
    return json.loads(resources.files("mtlalloc").joinpath("data/config.schema.json").read_text())


@dataclass
class ExperimentConfig:
    tasks: list
    train: TrainConfig
    schemes: tuple = SCHEMES
    D: int = 8000
    split: tuple = (0.75, 0.25)
    repetitions: int = 1
    seed: int = 0
    out: Optional[str] = None
    data_dir: Optional[str] = None
    scheme: Optional[str] = None
    beta_mode: str = "uniform"
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def max_dim(self) -> int:
        return max(t.dim for t in self.tasks)

    def to_dict(self) -> dict:
        """Normalised JSON form; loading it again gives the same config."""
        train = {}
        for f in fields(TrainConfig):
            if f.name == "seed":
                continue
            key = {v: k for k, v in _TRAIN_KEYS.items()}.get(f.name, f.name)
            value = getattr(self.train, f.name)
            train[key] = list(value) if isinstance(value, tuple) else value
        train["beta_mode"] = self.beta_mode
        tasks = []
        for t in self.tasks:
            entry = {"kind": t.kind, "N": t.dim, "beta": t.beta, "B": t.batch_size, "P_tot": t.p_tot}
            if t.kind == SUPERVISED:
                entry.update(L=t.bits, W=t.bandwidth, N0=t.n0_dbm_hz)
            else:
                entry.update(P_av=t.p_av, N0=t.n0_dbm_hz)
            tasks.append(entry)
        d = {
            "seed": self.seed,
            "repetitions": self.repetitions,
            "schemes": list(self.schemes),
            "data": {"D": self.D, "split": list(self.split)},
            "training": train,
            "tasks": tasks,
        }
        for key in ("out", "data_dir", "scheme"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        return d


def _expand_tasks(entries, default_B: int, beta_mode: str) -> list:
    flat = []
    for e in entries:
        dims = e["N"] if isinstance(e["N"], list) else [e["N"]]
        flat += [(e, n) for n in dims]
    K = len(flat)
    specs = []
    for i, (e, n) in enumerate(flat, start=1):
        if beta_mode == "uniform":
            beta = 1.0 / K
        elif "beta" in e:
            beta = e["beta"]
        else:
            raise ConfigError(f"task {i}: beta_mode 'explicit' needs a beta on every task")
        supervised = e["kind"] == SUPERVISED
        if not supervised and "P_av" not in e:
            raise ConfigError(f"task {i}: unsupervised tasks need P_av")
        kw = dict(
            id=i, kind=e["kind"], dim=n, beta=beta, batch_size=e.get("B", default_B),
            p_tot=e.get("P_tot", 10.0 if supervised else 1.0),
            p_av=None if supervised else e["P_av"],
            n0_dbm_hz=e.get("N0", -174.0),
        )
        if supervised:
            kw.update(bits=e.get("L", 1e6), bandwidth=e.get("W", 1e6))
        try:
            specs.append(TaskSpec(**kw))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if beta_mode == "explicit":
        # uniform weights sum to one up to rounding of 1/K, so only explicit ones are checked
        try:
            check_betas(specs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return specs


def parse_config(doc: dict) -> ExperimentConfig:
    try:
        jsonschema.validate(doc, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
    tr = dict(doc.get("training", {}))
    default_B = tr.get("B", 32)
    beta_mode = tr.get("beta_mode", "uniform")
    for key in _TRAIN_ONLY:
        tr.pop(key, None)
    tr = {_TRAIN_KEYS.get(k, k): v for k, v in tr.items()}
    seed = doc.get("seed", 0)
    try:
        train = TrainConfig(seed=seed, **tr)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training section: {exc}") from exc
    data = doc.get("data", {})
    split = tuple(data.get("split", (0.75, 0.25)))
    if abs(sum(split) - 1.0) > 1e-12:
        raise ConfigError("data.split must sum to 1")
    return ExperimentConfig(
        tasks=_expand_tasks(doc["tasks"], default_B, beta_mode),
        train=train,
        schemes=tuple(doc.get("schemes", SCHEMES)),
        D=data.get("D", 8000),
        split=split,
        repetitions=doc.get("repetitions", 1),
        seed=seed,
        out=doc.get("out"),
        data_dir=doc.get("data_dir"),
        scheme=doc.get("scheme"),
        beta_mode=beta_mode,
        raw=doc,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse_config(doc)


def with_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Apply command-line overrides; ``None`` values are ignored."""
    doc = cfg.to_dict()
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("seed", "repetitions", "out", "schemes", "data_dir", "scheme"):
            doc[key] = value
        elif key in ("D",):
            doc["data"][key] = value
        else:
            doc["training"][key] = value
    return parse_config(doc)
