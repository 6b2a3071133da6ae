"""Dense-network substrate: layers, activations, parameters, Adam, seeded streams.

Matrices are 2-D float64 numpy arrays. Backward passes are written out by
hand; the network topology is fixed so no tape is needed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ShapeError",
    "dense_forward",
    "dense_backward",
    "relu",
    "relu_grad",
    "softplus",
    "softplus_grad",
    "sigmoid",
    "softmax",
    "ParamStore",
    "AdamState",
    "adam_step",
    "Rng",
]


class ShapeError(ValueError):
    pass


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.shape[-1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ShapeError(
            f"dense: input {x.shape}, weights {weights.shape}, bias {bias.shape}"
        )
    return x @ weights + bias


def dense_backward(upstream: np.ndarray, x: np.ndarray, weights: np.ndarray):
    """Returns (grad_input, grad_weights, grad_bias) for a 2-D input batch."""
    if upstream.shape != (x.shape[0], weights.shape[1]) or x.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"dense backward: upstream {upstream.shape}, input {x.shape}, weights {weights.shape}"
        )
    return upstream @ weights.T, x.T @ upstream, upstream.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    return (np.asarray(x) > 0.0).astype(np.float64)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def softplus(x):
    # ln(1 + e^x) = max(x, 0) + ln(1 + e^-|x|)
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


softplus_grad = sigmoid


def softmax(scores, axis: int = -1, mask=None) -> np.ndarray:
    """Max-shifted softmax; entries where ``mask`` is False get weight 0."""
    s = np.asarray(scores, dtype=np.float64)
    if mask is not None:
        s = np.where(mask, s, -np.inf)
    shifted = s - np.max(s, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


class ParamStore:
    """Named parameters backed by one flat vector, with a matching gradient vector.

    ``store[name]`` and ``store.grad(name)`` are reshaped views into the flat
    buffers, so optimizers work on ``store.data`` / ``store.grads`` directly.
    """

    def __init__(self, specs):
        self._slices: dict[str, tuple[slice, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in specs:
            if name in self._slices:
                raise ValueError(f"duplicate parameter name {name!r}")
            shape = tuple(int(d) for d in shape)
            size = int(np.prod(shape, dtype=np.int64))
            self._slices[name] = (slice(offset, offset + size), shape)
            offset += size
        self.data = np.zeros(offset, dtype=np.float64)
        self.grads = np.zeros(offset, dtype=np.float64)

    @property
    def names(self) -> list[str]:
        return list(self._slices)

    def shape(self, name: str) -> tuple[int, ...]:
        return self._slices[name][1]

    def specs(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(n, s) for n, (_, s) in self._slices.items()]

    def __getitem__(self, name: str) -> np.ndarray:
        sl, shape = self._slices[name]
        return self.data[sl].reshape(shape)

    def __setitem__(self, name: str, value) -> None:
        self[name][...] = value

    def __contains__(self, name: str) -> bool:
        return name in self._slices

    def __len__(self) -> int:
        return self.data.size

    def grad(self, name: str) -> np.ndarray:
        sl, shape = self._slices[name]
        return self.grads[sl].reshape(shape)

    def zero_grad(self) -> None:
        self.grads[:] = 0.0

    def copy(self) -> "ParamStore":
        other = ParamStore(self.specs())
        other.data[:] = self.data
        other.grads[:] = self.grads
        return other


@dataclass
class AdamState:
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)


def adam_step(params: ParamStore, state: AdamState) -> None:
    """One bias-corrected Adam update with decoupled weight decay, in place."""
    g = params.grads
    # the dot product is a cheap screen; it can overflow on huge finite values
    if not np.isfinite(g.dot(g)) and not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient passed to adam_step")
    if state.m is None:
        state.m = np.zeros_like(params.data)
        state.v = np.zeros_like(params.data)
    state.step += 1
    if state.weight_decay:
        params.data *= 1.0 - state.lr * state.weight_decay
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    buf = np.multiply(g, g)
    buf *= 1.0 - state.beta2
    state.v += buf
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    np.multiply(state.v, 1.0 / bc2, out=buf)
    np.sqrt(buf, out=buf)
    buf += state.eps
    np.divide(state.m, buf, out=buf)
    buf *= state.lr / bc1
    params.data -= buf


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream ids must be nonnegative")
        return int(part)
    digest = hashlib.blake2b(str(part).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """Master seed plus named, counter-based (Philox) sub-streams.

    ``Rng(seed).stream("render", 12)`` always yields the same generator state
    for the same seed and ids, regardless of what else has been drawn.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def stream(self, *ids) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=tuple(_key(i) for i in ids))
        return np.random.Generator(np.random.Philox(seq))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"
