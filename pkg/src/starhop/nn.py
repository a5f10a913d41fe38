"""Small numpy Q-networks: forward pass, backprop, SGD, target copies, replay."""

from __future__ import annotations

import copy
import json
import struct
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np


class QNetwork:
    """Fully connected net, rectifier hidden layers, linear output.

    ``weights[l]`` has shape (fan_in, fan_out) so a batch ``X`` of shape
    (B, fan_in) maps as ``X @ W + b``.
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None):
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise ValueError(f"bad layer sizes {sizes!r}")
        self.sizes = [int(s) for s in sizes]
        self.steps = 0
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                bound = np.sqrt(6.0 / fan_in)
                w = rng.uniform(-bound, bound, (fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    @property
    def n_outputs(self) -> int:
        return self.sizes[-1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got {x.shape[-1]}")
        h = x
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if l < last:
                h = np.maximum(h, 0.0)
        return h

    __call__ = forward

    def _forward_cached(self, x: np.ndarray):
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if l < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return acts

    def _backward(self, acts, dout):
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        d = dout
        for l in range(len(self.weights) - 1, -1, -1):
            grads_w[l] = acts[l].T @ d
            grads_b[l] = d.sum(axis=0)
            if l > 0:
                d = (d @ self.weights[l].T) * (acts[l] > 0)
        return [g for wb in zip(grads_w, grads_b) for g in wb]

    def regression_loss_and_gradient(self, states: np.ndarray, picks: np.ndarray,
                                     targets: np.ndarray):
        """Mean squared error between ``targets`` and the sum of the picked outputs.

        ``picks`` is (B,) for one output per sample or (B, H) to sum H outputs.
        """
        states = np.atleast_2d(np.asarray(states, dtype=float))
        picks = np.asarray(picks, dtype=int)
        if picks.ndim == 1:
            picks = picks[:, None]
        acts = self._forward_cached(states)
        q = acts[-1]
        rows = np.arange(len(states))[:, None]
        err = np.asarray(targets, dtype=float) - q[rows, picks].sum(axis=1)
        loss = float(np.mean(err ** 2))
        dout = np.zeros_like(q)
        np.add.at(dout, (np.broadcast_to(rows, picks.shape), picks),
                  np.broadcast_to((-2.0 * err / len(states))[:, None], picks.shape))
        return loss, self._backward(acts, dout)

    def copy(self) -> "QNetwork":
        return copy.deepcopy(self)

    def set_params(self, flat: Sequence[np.ndarray]) -> None:
        flat = list(flat)
        self.weights = [np.array(p, dtype=float) for p in flat[0::2]]
        self.biases = [np.array(p, dtype=float) for p in flat[1::2]]

    def save(self, path: str | Path) -> None:
        """JSON header (length-prefixed) followed by the float32 parameter blob."""
        header = json.dumps({"sizes": self.sizes, "steps": self.steps}).encode()
        blob = np.concatenate([p.ravel() for p in self.params]).astype("<f4").tobytes()
        Path(path).write_bytes(struct.pack("<I", len(header)) + header + blob)

    @classmethod
    def load(cls, path: str | Path) -> "QNetwork":
        raw = Path(path).read_bytes()
        (hlen,) = struct.unpack("<I", raw[:4])
        header = json.loads(raw[4:4 + hlen])
        net = cls(header["sizes"])
        net.steps = header["steps"]
        flat = np.frombuffer(raw[4 + hlen:], dtype="<f4").astype(float)
        out, pos = [], 0
        for p in net.params:
            out.append(flat[pos:pos + p.size].reshape(p.shape))
            pos += p.size
        if pos != flat.size:
            raise ValueError("parameter blob does not match layer sizes")
        net.set_params(out)
        return net


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray


def td_targets(target_net: QNetwork, rewards: np.ndarray, next_states: np.ndarray,
               discount: float) -> np.ndarray:
    return np.asarray(rewards, float) + discount * target_net(next_states).max(axis=1)


def td_loss_and_gradient(net: QNetwork, target_net: QNetwork, batch: Batch, discount: float):
    """Squared TD error against a frozen target net; gradient w.r.t. ``net`` only."""
    if len(batch.states) == 0:
        raise ValueError("empty batch")
    psi = td_targets(target_net, batch.rewards, np.atleast_2d(batch.next_states), discount)
    return net.regression_loss_and_gradient(batch.states, batch.actions, psi)


def _check_finite(grads: Sequence[np.ndarray]) -> None:
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise FloatingPointError(f"{bad} non-finite gradient entries in parameter block {i}")


def _clip(grads: Sequence[np.ndarray], max_norm: float | None) -> Sequence[np.ndarray]:
    if max_norm is None:
        return grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    return [g * (max_norm / norm) for g in grads] if norm > max_norm else grads


def optimizer_step(net: QNetwork, grads: Sequence[np.ndarray], step_size: float) -> QNetwork:
    """Plain gradient descent in place."""
    _check_finite(grads)
    new = [p - step_size * g for p, g in zip(net.params, grads)]
    net.set_params(new)
    net.steps += 1
    return net


class MomentumSGD:
    def __init__(self, net: QNetwork, step_size: float = 1e-3, momentum: float = 0.9,
                 max_grad_norm: float | None = 10.0):
        self.net = net
        self.step_size = step_size
        self.momentum = momentum
        self.max_grad_norm = max_grad_norm
        self.velocity = [np.zeros_like(p) for p in net.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        _check_finite(grads)
        grads = _clip(grads, self.max_grad_norm)
        params = self.net.params
        for i, (p, g) in enumerate(zip(params, grads)):
            self.velocity[i] = self.momentum * self.velocity[i] - self.step_size * g
            p += self.velocity[i]
        self.net.steps += 1


class Adam:
    """Adam with bias correction and the same optional norm clip."""

    def __init__(self, net: QNetwork, step_size: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, max_grad_norm: float | None = 10.0):
        self.net = net
        self.step_size, self.beta1, self.beta2, self.eps = step_size, beta1, beta2, eps
        self.max_grad_norm = max_grad_norm
        self.m = [np.zeros_like(p) for p in net.params]
        self.v = [np.zeros_like(p) for p in net.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        _check_finite(grads)
        grads = _clip(grads, self.max_grad_norm)
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for i, (p, g) in enumerate(zip(self.net.params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            p -= self.step_size * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
        self.net.steps += 1


def snapshot_target(net: QNetwork) -> QNetwork:
    return net.copy()


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int, rng: np.random.Generator,
                 action_shape: tuple[int, ...] = ()):
        self.capacity = int(capacity)
        self.rng = rng
        self.states = np.zeros((self.capacity, state_dim))
        self.next_states = np.zeros((self.capacity, state_dim))
        self.actions = np.zeros((self.capacity, *action_shape), dtype=int)
        self.rewards = np.zeros(self.capacity)
        self.size = 0
        self._pos = 0

    def __len__(self) -> int:
        return self.size

    def push(self, s, a, r, s2) -> None:
        i = self._pos
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s2
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> Batch:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} < {batch_size} transitions")
        idx = self.rng.integers(0, self.size, batch_size)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx])
