"""Small dense-network engine on numpy.

Weights follow the ``W_l in R^{d_{l-1} x d_l}`` convention, so a layer computes
``z = y_prev @ (H * W) + b`` on row-major batches. Masks ``H`` are optional per
layer and are constants as far as :func:`backward` is concerned; the gradient
with respect to the effective weight is also returned so that callers who own
the mask (the router) can apply the product rule themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, NumericError

RNG_ALGORITHM = "PCG64"


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` and an optional derivation path.

    ``make_rng(s, 3, 7)`` gives a stream independent of ``make_rng(s, 3, 8)``
    and of ``make_rng(s)``; the same arguments always give the same stream.
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------- activations


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x):
    return np.tanh(x)


def softmax(x):
    """Softmax over the last axis with max-subtraction."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def relu_tanh(x, gamma: float):
    """``ReLU(tanh(gamma * x))``: a differentiable surrogate of the unit step."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return np.maximum(np.tanh(gamma * np.asarray(x, dtype=np.float64)), 0.0)


def relu_tanh_grad(x, gamma: float):
    t = np.tanh(gamma * x)
    return np.where(x > 0, gamma * (1.0 - t * t), 0.0)


ACTIVATIONS = ("relu", "sigmoid", "tanh", "softmax", "identity")


def _activate(name, z):
    if name == "relu":
        return relu(z)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "softmax":
        return softmax(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _activation_vjp(name, z, y, g):
    # vector-Jacobian product of the activation at (z, y=act(z)) with g
    if name == "relu":
        return g * (z > 0)
    if name == "sigmoid":
        return g * y * (1.0 - y)
    if name == "tanh":
        return g * (1.0 - y * y)
    if name == "softmax":
        return y * (g - (g * y).sum(axis=-1, keepdims=True))
    if name == "identity":
        return g
    raise ValueError(f"unknown activation {name!r}")


# ------------------------------------------------------------ initialisation


def xavier_init(shape, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform matrix: U(-a, a) with ``a = sqrt(6 / (rows + cols))``."""
    rows, cols = shape
    if rows < 1 or cols < 1:
        raise DimensionError(f"cannot initialise a {rows}x{cols} matrix")
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def gaussian_init(shape, mu: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rows, cols = shape
    if rows < 1 or cols < 1:
        raise DimensionError(f"cannot initialise a {rows}x{cols} matrix")
    # draw even when sigma == 0 so the stream position does not depend on sigma
    draw = rng.standard_normal(size=(rows, cols))
    if sigma == 0:
        return np.full((rows, cols), float(mu))
    return mu + sigma * draw


# ------------------------------------------------------------------ network


@dataclass
class DenseParams:
    """Weights and biases of a fully connected network.

    ``weights[l]`` has shape ``(widths[l], widths[l + 1])``.
    """

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise DimensionError("weights and biases must have the same length")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise DimensionError(f"layer {l}: weight {W.shape} / bias {b.shape} mismatch")
            if l and W.shape[0] != self.weights[l - 1].shape[1]:
                raise DimensionError(f"layer {l}: input width {W.shape[0]} does not chain")

    @classmethod
    def xavier(cls, widths: Sequence[int], rng: np.random.Generator) -> "DenseParams":
        weights = [xavier_init((a, b), rng) for a, b in zip(widths[:-1], widths[1:])]
        biases = [np.zeros(b) for b in widths[1:]]
        return cls(weights, biases)

    @property
    def widths(self) -> list:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def arrays(self) -> list:
        """Flat list ``[W_1, b_1, W_2, b_2, ...]`` used by the optimisers."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "DenseParams":
        return DenseParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def to_dict(self) -> dict:
        return {
            "widths": self.widths,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenseParams":
        weights = [np.asarray(W, dtype=np.float64).reshape(a, b)
                   for W, a, b in zip(d["weights"], d["widths"][:-1], d["widths"][1:])]
        return cls(weights, [np.asarray(b, dtype=np.float64) for b in d["biases"]])


@dataclass
class Tape:
    inputs: list = field(default_factory=list)   # y^{l-1} for every layer
    pre: list = field(default_factory=list)      # z^l
    post: list = field(default_factory=list)     # y^l
    weights: list = field(default_factory=list)  # raw W_l
    masks: list = field(default_factory=list)    # H_l or None
    activations: list = field(default_factory=list)


@dataclass
class Grads:
    weights: list
    biases: list
    # dL/d(H*W) ⊙ W for every masked layer (None elsewhere); the mask gradient
    masks: list
    inputs: np.ndarray


def forward(weights, biases, x, activations, masks=None):
    """Run a batch ``x`` (rows are samples) through the network.

    Returns the output batch and a :class:`Tape` for :func:`backward`.
    A 1-D ``x`` is treated as a single sample and the output is 1-D as well.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    y = x[None, :] if single else x
    n = len(weights)
    if len(biases) != n or len(activations) != n:
        raise DimensionError("weights, biases and activations must have equal length")
    if masks is None:
        masks = [None] * n
    elif len(masks) != n:
        raise DimensionError(f"expected {n} mask entries, got {len(masks)}")
    tape = Tape()
    for l, (W, b, act, H) in enumerate(zip(weights, biases, activations, masks)):
        if y.shape[1] != W.shape[0]:
            raise DimensionError(f"layer {l}: input width {y.shape[1]} != {W.shape[0]}")
        if H is not None and H.shape != W.shape:
            raise DimensionError(f"layer {l}: mask {H.shape} != weight {W.shape}")
        W_eff = W if H is None else H * W
        with np.errstate(over="ignore", invalid="ignore"):
            z = y @ W_eff + b
            out = _activate(act, z)
        if not np.isfinite(out).all():
            raise NumericError(f"non-finite activation in layer {l}", layer=l)
        tape.inputs.append(y)
        tape.pre.append(z)
        tape.post.append(out)
        tape.weights.append(W)
        tape.masks.append(H)
        tape.activations.append(act)
        y = out
    return (y[0] if single else y), tape


def backward(tape: Tape, upstream) -> Grads:
    """Gradients of ``sum(upstream * output)`` w.r.t. every weight and bias."""
    g = np.asarray(upstream, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != tape.post[-1].shape:
        raise DimensionError(f"upstream gradient {g.shape} != output {tape.post[-1].shape}")
    n = len(tape.weights)
    gW, gb, gH = [None] * n, [None] * n, [None] * n
    for l in range(n - 1, -1, -1):
        gz = _activation_vjp(tape.activations[l], tape.pre[l], tape.post[l], g)
        W, H = tape.weights[l], tape.masks[l]
        g_eff = tape.inputs[l].T @ gz
        gb[l] = gz.sum(axis=0)
        if H is None:
            gW[l] = g_eff
            g = gz @ W.T
        else:
            gW[l] = g_eff * H
            gH[l] = g_eff * W
            g = gz @ (H * W).T
    return Grads(gW, gb, gH, g)


# --------------------------------------------------------------- optimisers


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, params, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   0, beta1, beta2, eps)


def adam_step(params, grads, state: AdamState, lr: float):
    """In-place Adam update with bias correction; returns ``(params, state)``."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise DimensionError("params, grads and optimiser state do not align")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionError(f"gradient {g.shape} != parameter {p.shape}")
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient passed to adam_step")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def sgd_step(params, grads, lr: float):
    for p, g in zip(params, grads):
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient passed to sgd_step")
        p -= lr * g
    return params


class Optimizer:
    """Adam or plain SGD over a fixed list of arrays."""

    def __init__(self, params, lr: float, kind: str = "adam", beta1=0.9, beta2=0.999, eps=1e-8):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimiser {kind!r}")
        self.params = params
        self.lr = lr
        self.kind = kind
        self.state = AdamState.like(params, beta1, beta2, eps) if kind == "adam" else None

    def step(self, grads):
        if self.kind == "adam":
            adam_step(self.params, grads, self.state, self.lr)
        else:
            sgd_step(self.params, grads, self.lr)
