"""Small fully connected networks with hand-written backprop and Adam."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class Mlp:
    """ReLU hidden layers, identity output. Works on batches ``(N, in)``."""

    def __init__(self, sizes, rng: np.random.Generator | None = None):
        self.sizes = [int(s) for s in sizes]
        if len(self.sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if rng is None:
                W, b = np.zeros((fan_in, fan_out)), np.zeros(fan_out)
            else:
                bound = 1.0 / np.sqrt(fan_in)
                W = rng.uniform(-bound, bound, (fan_in, fan_out))
                b = rng.uniform(-bound, bound, fan_out)
            self.weights.append(W)
            self.biases.append(b)
        self._cache = None

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def set_params(self, params):
        for i in range(len(self.weights)):
            self.weights[i] = np.array(params[2 * i], dtype=float)
            self.biases[i] = np.array(params[2 * i + 1], dtype=float)

    def copy(self) -> "Mlp":
        net = Mlp(self.sizes)
        net.set_params([p.copy() for p in self.params])
        return net

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        if h.shape[1] != self.sizes[0]:
            raise ValueError(f"input dimension {h.shape[1]} != {self.sizes[0]}")
        acts = [h]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        self._cache = acts
        return h[0] if single else h

    __call__ = forward

    def backward(self, grad_out):
        """Gradients of sum(grad_out * output) w.r.t. params (same order as ``params``).

        Also returns the gradient w.r.t. the input as a second value.
        """
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        acts = self._cache
        g = np.atleast_2d(np.asarray(grad_out, dtype=float))
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (acts[i + 1] > 0)
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g


@dataclass
class AdamState:
    lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray],
              names: list[str] | None = None) -> list[np.ndarray]:
    """Update ``params`` in place and return them."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or state.m[i].shape != p.shape:
            raise ValueError(f"shape mismatch in parameter block {i}")
        if not np.all(np.isfinite(g)):
            name = names[i] if names else f"block {i}"
            raise FloatingPointError(f"non-finite gradient in {name}")
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict):
    """``.npz`` archive with a JSON ``__meta__`` entry; float64 round-trips exactly."""
    blob = dict(arrays)
    blob["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path) as z:
        arrays = {k: z[k].copy() for k in z.files if k != "__meta__"}
        meta = json.loads(bytes(z["__meta__"]).decode())
    return arrays, meta


def mlp_arrays(prefix: str, net: Mlp) -> dict[str, np.ndarray]:
    return {f"{prefix}.{i}": p for i, p in enumerate(net.params)}


def mlp_from_arrays(prefix: str, sizes, arrays) -> Mlp:
    net = Mlp(sizes)
    net.set_params([arrays[f"{prefix}.{i}"] for i in range(2 * (len(sizes) - 1))])
    return net
