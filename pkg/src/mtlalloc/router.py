"""Router network: task one-hot -> per-layer weight masks.

The router is a two-layer dense net (``K -> T -> M``) with a ReLU hidden layer
and ``ReLU(tanh(gamma x))`` on the output. ``M`` is the total number of entries
in the maskable weight matrices of the base network, which are the hidden to
hidden matrices ``W_2 .. W_L``. The flat output is split into matrices in
ascending layer order, row-major within each matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .nn import gaussian_init, relu_tanh, relu_tanh_grad


@dataclass
class RouterState:
    w_in: np.ndarray    # K x T
    b_in: np.ndarray    # T
    w_out: np.ndarray   # T x M
    b_out: np.ndarray   # M
    mask_shapes: list   # [(d_{l-1}, d_l) for l = 2..L]

    @property
    def n_tasks(self) -> int:
        return self.w_in.shape[0]

    @property
    def hidden_width(self) -> int:
        return self.w_in.shape[1]

    @property
    def output_width(self) -> int:
        return self.w_out.shape[1]

    @property
    def n_params(self) -> int:
        return self.w_in.size + self.b_in.size + self.w_out.size + self.b_out.size

    def arrays(self) -> list:
        return [self.w_in, self.b_in, self.w_out, self.b_out]

    def to_dict(self) -> dict:
        return {
            "mask_shapes": [list(s) for s in self.mask_shapes],
            "w_in": self.w_in.tolist(),
            "b_in": self.b_in.tolist(),
            "w_out": self.w_out.tolist(),
            "b_out": self.b_out.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RouterState":
        return cls(
            np.asarray(d["w_in"], dtype=np.float64),
            np.asarray(d["b_in"], dtype=np.float64),
            np.asarray(d["w_out"], dtype=np.float64),
            np.asarray(d["b_out"], dtype=np.float64),
            [tuple(s) for s in d["mask_shapes"]],
        )


@dataclass
class MaskSet:
    """Masks per task id; each entry lists ``H_l`` for ``l = 2..L``."""

    masks: dict
    hard: bool = False

    def __getitem__(self, task_id):
        return self.masks[task_id]

    def keep_fraction(self, task_id) -> float:
        ms = self.masks[task_id]
        return float(sum(m.sum() for m in ms) / sum(m.size for m in ms))

    def to_dict(self) -> dict:
        entries = []
        for task_id, ms in self.masks.items():
            for offset, m in enumerate(ms):
                values = m.astype(int).tolist() if self.hard else m.tolist()
                entries.append({"task_id": task_id, "layer": offset + 2,
                                "shape": list(m.shape), "values": values})
        return {"hard": self.hard, "order": "layer ascending, row-major", "masks": entries}

    @classmethod
    def from_dict(cls, d: dict) -> "MaskSet":
        masks: dict = {}
        for e in sorted(d["masks"], key=lambda e: (e["task_id"], e["layer"])):
            arr = np.asarray(e["values"], dtype=np.float64).reshape(e["shape"])
            masks.setdefault(e["task_id"], []).append(arr)
        return cls(masks, bool(d["hard"]))


def mask_shapes_for(widths) -> list:
    """Shapes of the maskable matrices for a base net with widths ``d_0..d_{L+1}``."""
    # weights[l] maps widths[l] -> widths[l+1]; hidden-to-hidden are l = 1..L-1
    return [(widths[l], widths[l + 1]) for l in range(1, len(widths) - 2)]


def init_router(K: int, T: int, widths, mu: float, sigma: float, rng) -> RouterState:
    if mu <= 0 or sigma < 0 or sigma * sigma >= mu:
        raise ConfigError(f"router init requires mu > 0 and 0 <= sigma^2 < mu (mu={mu}, sigma={sigma})")
    shapes = mask_shapes_for(widths)
    if not shapes:
        raise ConfigError("base network has no hidden-to-hidden layers to mask")
    M = sum(a * b for a, b in shapes)
    return RouterState(
        gaussian_init((K, T), mu, sigma, rng),
        np.zeros(T),
        gaussian_init((T, M), mu, sigma, rng),
        np.zeros(M),
        shapes,
    )


def split_flat(flat, shapes) -> list:
    out, start = [], 0
    for a, b in shapes:
        out.append(flat[start:start + a * b].reshape(a, b))
        start += a * b
    return out


def _check_onehot(onehot, K):
    z = np.asarray(onehot)
    if z.shape != (K,) or not np.isin(z, (0, 1)).all() or z.sum() != 1:
        raise ValueError(f"expected a one-hot vector of length {K}, got {onehot!r}")
    return int(np.argmax(z))


def route(router: RouterState, task_onehot, gamma: float) -> list:
    """Soft masks for one task."""
    i = _check_onehot(task_onehot, router.n_tasks)
    # go through the batched path so a task's masks never depend on how they were requested
    flat, _ = route_all(router, gamma)
    return split_flat(flat[i], router.mask_shapes)


def route_all(router: RouterState, gamma: float):
    """Soft masks for every task at once plus a cache for :func:`router_backward`.

    Row ``i`` of the returned flat matrix belongs to one-hot position ``i``.
    """
    z1 = router.w_in + router.b_in          # identity one-hot batch selects rows
    h = np.maximum(z1, 0.0)
    z2 = h @ router.w_out + router.b_out
    return relu_tanh(z2, gamma), (z1, h, z2, gamma)


def router_backward(router: RouterState, cache, grad_flat) -> list:
    """Gradients of ``sum(grad_flat * masks)`` for ``[w_in, b_in, w_out, b_out]``."""
    z1, h, z2, gamma = cache
    if grad_flat.shape != z2.shape:
        raise DimensionError(f"mask gradient {grad_flat.shape} != router output {z2.shape}")
    gz2 = grad_flat * relu_tanh_grad(z2, gamma)
    g_wout = h.T @ gz2
    g_bout = gz2.sum(axis=0)
    gz1 = (gz2 @ router.w_out.T) * (z1 > 0)
    # one-hot inputs: d z1 / d w_in[i] is the identity for row i
    return [gz1, gz1.sum(axis=0), g_wout, g_bout]


def harden(soft):
    """Threshold soft masks at 0.5; exactly 0.5 is cut.

    Accepts a :class:`MaskSet`, a list of arrays, or a single array.
    """
    if isinstance(soft, MaskSet):
        return MaskSet({k: harden(v) for k, v in soft.masks.items()}, hard=True)
    if isinstance(soft, (list, tuple)):
        return [harden(m) for m in soft]
    return (np.asarray(soft, dtype=np.float64) > 0.5).astype(np.float64)
