"""Small dense-network primitives: activations, Adam, JSON weights.

All models in this package are dicts of named float64 arrays with explicit
analytic backward passes; this module holds the shared pieces.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def relu(x):
    return np.maximum(x, 0.0)


def drelu(pre):
    return (pre > 0.0).astype(np.float64)


def leaky_relu(x, slope: float = 0.01):
    return np.where(x > 0.0, x, slope * x)


def dleaky_relu(pre, slope: float = 0.01):
    return np.where(pre > 0.0, 1.0, slope)


def sigmoid(x):
    # stable in both tails
    out = np.empty_like(np.asarray(x, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def init_linear(rng: np.random.Generator, n_in: int, n_out: int, gain: float = 1.0):
    """Scaled Gaussian weight matrix (n_in, n_out) plus zero bias."""
    w = rng.normal(0.0, gain / np.sqrt(n_in), size=(n_in, n_out))
    return w, np.zeros(n_out)


class Adam:
    """Adaptive-moment optimizer over a dict of named parameter arrays."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            mhat = self.m[k] / c1
            vhat = self.v[k] / c2
            params[k] = params[k] - lr * mhat / (np.sqrt(vhat) + self.eps)


def stepped_lr(base: float, epoch: int, decay: float, every: int) -> float:
    """Learning rate decayed by a fixed factor every `every` epochs."""
    if every <= 0:
        return base
    return base * decay ** (epoch // every)


def flatten_params(params: dict) -> tuple[np.ndarray, list]:
    """Concatenate parameters into one vector plus a shape spec to invert."""
    spec = [(k, params[k].shape) for k in sorted(params)]
    vec = np.concatenate([params[k].ravel() for k, _ in spec]) if spec else np.empty(0)
    return vec, spec


def unflatten_params(vec: np.ndarray, spec: list) -> dict:
    out = {}
    pos = 0
    for k, shape in spec:
        n = int(np.prod(shape)) if shape else 1
        out[k] = vec[pos:pos + n].reshape(shape)
        pos += n
    return out


def params_to_jsonable(params: dict) -> dict:
    return {k: params[k].tolist() for k in sorted(params)}


def params_from_jsonable(obj: dict) -> dict:
    return {k: np.asarray(v, dtype=np.float64) for k, v in obj.items()}


def dump_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
