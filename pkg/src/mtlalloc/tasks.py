"""Task definitions, channel data and the convex oracles.

Two task families are supported:

* ``supervised`` -- FDMA delay minimisation. Features are unit-mean Rayleigh
  power gains ``|h|^2``; labels are the optimal powers expressed as fractions
  of ``P_tot``. The physical gain ``|h|^2 / (N0 W)`` only appears inside the
  delay objective.
* ``unsupervised`` -- average sum-capacity maximisation under an average power
  budget. Features are noise-normalised gains and there are no labels.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import lambertw

from .errors import DataError, DomainError, NumericError
from .nn import make_rng

LN2 = math.log(2.0)

SUPERVISED = "supervised"
UNSUPERVISED = "unsupervised"


def dbm_per_hz_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


@dataclass
class TaskSpec:
    id: int
    kind: str
    dim: int
    beta: float
    batch_size: int = 32
    p_tot: float = 10.0
    p_av: Optional[float] = None
    bits: float = 1e6
    bandwidth: float = 1e6
    n0_dbm_hz: float = -174.0

    def __post_init__(self):
        if self.kind not in (SUPERVISED, UNSUPERVISED):
            raise ValueError(f"task {self.id}: unknown kind {self.kind!r}")
        if self.dim < 1 or self.batch_size < 1:
            raise ValueError(f"task {self.id}: dim and batch size must be positive")
        if not 0 < self.beta <= 1:
            raise ValueError(f"task {self.id}: beta must lie in (0, 1]")
        if self.kind == UNSUPERVISED and self.p_av is None:
            raise ValueError(f"task {self.id}: unsupervised tasks need p_av")

    @property
    def supervised(self) -> bool:
        return self.kind == SUPERVISED

    @property
    def noise_power(self) -> float:
        """``N0 * W`` in watts."""
        return dbm_per_hz_to_watts(self.n0_dbm_hz) * self.bandwidth

    @property
    def name(self) -> str:
        return f"{'sl' if self.supervised else 'ul'}_N{self.dim}"

    def delay(self, fractions, gains):
        """Average delay (s) of power fractions on unit-mean gains, per row."""
        return delay_objective(self.p_tot * np.asarray(fractions), np.asarray(gains) / self.noise_power,
                               self.bits, self.bandwidth)

    def capacity(self, fractions, gains):
        return capacity_objective(self.p_tot * np.asarray(fractions), gains)

    def to_dict(self) -> dict:
        return asdict(self)


def check_betas(specs, tol=1e-12):
    total = sum(s.beta for s in specs)
    if abs(total - 1.0) > tol:
        raise ValueError(f"task weights must sum to 1, got {total!r}")


# ------------------------------------------------------------------ channels


def gen_channels(N: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count x N`` matrix of i.i.d. unit-mean exponential power gains."""
    if N < 1 or count < 1:
        raise ValueError("N and count must be positive")
    return rng.exponential(1.0, size=(count, N))


# ---------------------------------------------------------------- objectives


def delay_objective(P, g, bits, bandwidth):
    """Mean over bands of ``L_n / (W log2(1 + P_n g_n))``.

    ``g`` is the noise-normalised gain. Works on vectors or on batches (rows).
    """
    P = np.asarray(P, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if np.any(P <= 0) or np.any(g <= 0):
        raise DomainError("delay is infinite for non-positive power or gain")
    rate = bandwidth * np.log2(1.0 + P * g)
    return np.mean(bits / rate, axis=-1)


def _marginal(P, c, g):
    # -d/dP of L/(W log2(1+Pg)), up to the common 1/N factor
    return c / ((1.0 + P * g) * np.log2(1.0 + P * g) ** 2)


def _power_at_level(c, g, nu):
    # per-band inverse of the marginal: (1+Pg) u^2 = c/nu with u = log2(1+Pg);
    # substituting s = u ln2 / 2 gives s e^s = ln2 sqrt(c/nu) / 2 (Lambert W)
    s = lambertw(LN2 * np.sqrt(c / nu) / 2.0).real
    return np.expm1(2.0 * s) / g


def solve_delay_min(g, bits, bandwidth, p_tot, tol=1e-12, max_iter=400):
    """Optimal FDMA powers minimising average delay under ``sum P <= P_tot``.

    ``g`` holds noise-normalised gains, one instance per row (a 1-D vector is a
    single instance). The budget multiplier is found by bisection on its
    logarithm; the per-band stationarity condition is inverted in closed form.
    """
    g = np.asarray(g, dtype=np.float64)
    single = g.ndim == 1
    g2 = np.atleast_2d(g)
    if np.any(~np.isfinite(g2)) or np.any(g2 <= 0):
        raise ValueError("gains must be strictly positive and finite")
    if p_tot <= 0 or tol <= 0:
        raise ValueError("p_tot and tol must be positive")
    N = g2.shape[1]
    c = np.broadcast_to(np.asarray(bits, dtype=np.float64), g2.shape) * g2 / (bandwidth * LN2)
    m_even = _marginal(p_tot / N, c, g2)
    # at nu = max marginal every band gets <= P_tot/N, at nu = min every band >= P_tot/N
    lo = m_even.min(axis=1, keepdims=True)
    hi = m_even.max(axis=1, keepdims=True)
    if N > 1:
        for _ in range(max_iter):
            mid = np.sqrt(lo * hi)
            over = _power_at_level(c, g2, mid).sum(axis=1, keepdims=True) > p_tot
            lo = np.where(over, mid, lo)
            hi = np.where(over, hi, mid)
            if np.all(hi / lo - 1.0 <= 1e-15):
                break
        P = _power_at_level(c, g2, np.sqrt(lo * hi))
        # remove the last ulp-level bisection residue; stationarity moves by O(1e-15)
        P *= p_tot / P.sum(axis=1, keepdims=True)
    else:
        P = np.full_like(g2, p_tot)
    if not np.all(np.isfinite(P)) or np.any(P <= 0):
        raise NumericError("delay solver produced a non-interior allocation")
    if np.any(np.abs(P.sum(axis=1) - p_tot) > tol * max(1.0, p_tot) * N):
        raise NumericError("delay solver failed to meet the power budget")
    return P[0] if single else P


def stationarity_residual(P, g, bits, bandwidth):
    """Max relative spread of the per-band marginal delays (0 at the optimum)."""
    P2 = np.atleast_2d(P)
    g2 = np.atleast_2d(g)
    c = bits * g2 / (bandwidth * LN2)
    m = _marginal(P2, c, g2)
    nu = m.mean(axis=1, keepdims=True)
    return np.max(np.abs(m - nu) / nu, axis=1)


def capacity_objective(P, g):
    """``log2(1 + sum_n g_n P_n)`` per row, in bit/s/Hz."""
    P = np.asarray(P, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    return np.log2(1.0 + np.sum(g * P, axis=-1))


def avg_power_gap(P_batch, p_av: float) -> float:
    """Batch mean of total power minus the average budget (watts, signed)."""
    P_batch = np.atleast_2d(np.asarray(P_batch, dtype=np.float64))
    if P_batch.shape[0] == 0:
        raise ValueError("empty batch")
    return float(P_batch.sum(axis=1).mean() - p_av)


def violation(P_batch, p_av: float) -> float:
    return max(0.0, avg_power_gap(P_batch, p_av))


# ------------------------------------------------------- reference UL policy


def best_band_allocation(gains, lam: float, p_tot: float):
    """Water-filling on the strongest band only, for dual level ``lam``."""
    gains = np.atleast_2d(np.asarray(gains, dtype=np.float64))
    best = gains.max(axis=1)
    P = np.zeros_like(gains)
    ok = best > 0
    level = np.zeros_like(best)
    level[ok] = np.clip(1.0 / (lam * LN2) - 1.0 / best[ok], 0.0, p_tot)
    P[np.arange(len(gains)), gains.argmax(axis=1)] = level
    return P


def ul_reference_policy(gains, p_av: float, p_tot: float, tol: float = 1e-10, return_allocation=False):
    """Near-optimal average-power-constrained policy used as an oracle.

    Returns ``(mean capacity, mean power)``; with ``return_allocation`` the
    per-sample powers are appended.
    """
    gains = np.atleast_2d(np.asarray(gains, dtype=np.float64))
    if tol <= 0:
        raise ValueError("tol must be positive")

    def mean_power(lam):
        return best_band_allocation(gains, lam, p_tot).sum(axis=1).mean()

    lam_lo, lam_hi = 1e-12, 1.0
    if mean_power(lam_lo) <= p_av:
        lam = lam_lo  # budget never binds: every sample saturates at P_tot
    else:
        while mean_power(lam_hi) > p_av:
            lam_hi *= 2.0
        for _ in range(500):
            lam = math.sqrt(lam_lo * lam_hi)
            p = mean_power(lam)
            if abs(p - p_av) <= tol:
                break
            if p > p_av:
                lam_lo = lam
            else:
                lam_hi = lam
    P = best_band_allocation(gains, lam, p_tot)
    cap = float(capacity_objective(P, gains).mean())
    power = float(P.sum(axis=1).mean())
    return (cap, power, P) if return_allocation else (cap, power)


# ------------------------------------------------------------------ datasets


@dataclass
class Dataset:
    task_id: int
    features: np.ndarray
    labels: Optional[np.ndarray]
    split: str

    def __len__(self):
        return self.features.shape[0]


def build_datasets(specs, D: int, split=(0.75, 0.25), seed: int = 0) -> dict:
    """Generate ``{task_id: {"train": Dataset, "test": Dataset}}``.

    Each task draws from its own stream derived from ``(seed, task_id)``, so a
    task's data does not depend on which other tasks are configured.
    """
    if D < 2:
        raise ValueError("D must be at least 2")
    if len(split) != 2 or abs(sum(split) - 1.0) > 1e-12:
        raise ValueError("split fractions must sum to 1")
    n_train = int(round(D * split[0]))
    if not 0 < n_train < D:
        raise ValueError("split leaves an empty partition")
    out = {}
    for spec in specs:
        rng = make_rng(seed, spec.id)
        gains = gen_channels(spec.dim, D, rng)
        labels = None
        if spec.supervised:
            if np.any(gains <= 0):
                raise DataError(f"task {spec.id}: zero channel gain drawn")
            try:
                labels = solve_delay_min(gains / spec.noise_power, spec.bits, spec.bandwidth, spec.p_tot)
            except (ValueError, NumericError) as exc:
                raise DataError(f"task {spec.id}: label solve failed: {exc}") from exc
            labels = labels / spec.p_tot
        out[spec.id] = {
            "train": Dataset(spec.id, gains[:n_train], None if labels is None else labels[:n_train], "train"),
            "test": Dataset(spec.id, gains[n_train:], None if labels is None else labels[n_train:], "test"),
        }
    return out


def save_datasets(datasets: dict, specs, out_dir, seed: int, split) -> None:
    out_dir = Path(out_dir)
    by_id = {s.id: s for s in specs}
    for task_id, parts in datasets.items():
        d = out_dir / f"task_{task_id}"
        d.mkdir(parents=True, exist_ok=True)
        train, test = parts["train"], parts["test"]
        manifest = {
            "task": by_id[task_id].to_dict(),
            "seed": seed,
            "split": list(split),
            "rows": {"train": len(train), "test": len(test)},
            "has_labels": train.labels is not None,
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
        np.savetxt(d / "features.csv", np.vstack([train.features, test.features]), fmt="%.17g", delimiter=",")
        if train.labels is not None:
            np.savetxt(d / "labels.csv", np.vstack([train.labels, test.labels]), fmt="%.17g", delimiter=",")


def load_datasets(data_dir):
    """Inverse of :func:`save_datasets`; returns ``(specs, datasets, seed)``."""
    data_dir = Path(data_dir)
    dirs = sorted(data_dir.glob("task_*"), key=lambda p: int(p.name.split("_")[1]))
    if not dirs:
        raise DataError(f"no task directories under {data_dir}")
    specs, datasets, seed = [], {}, None
    for d in dirs:
        try:
            manifest = json.loads((d / "manifest.json").read_text())
            spec = TaskSpec(**manifest["task"])
            X = np.loadtxt(d / "features.csv", delimiter=",", ndmin=2)
            Y = np.loadtxt(d / "labels.csv", delimiter=",", ndmin=2) if manifest["has_labels"] else None
        except (OSError, KeyError, ValueError, TypeError) as exc:
            raise DataError(f"cannot read dataset in {d}: {exc}") from exc
        n_train = manifest["rows"]["train"]
        if X.shape != (n_train + manifest["rows"]["test"], spec.dim):
            raise DataError(f"{d}: features have shape {X.shape}, manifest disagrees")
        if Y is not None and Y.shape != X.shape:
            raise DataError(f"{d}: labels/features row mismatch")
        specs.append(spec)
        seed = manifest["seed"]
        datasets[spec.id] = {
            "train": Dataset(spec.id, X[:n_train], None if Y is None else Y[:n_train], "train"),
            "test": Dataset(spec.id, X[n_train:], None if Y is None else Y[n_train:], "test"),
        }
    return specs, datasets, seed
