"""Small MLP with manual backprop, the BCE and W-MSE losses, and AdamW.

Matrix products run in numba kernels with a fixed summation order, so
forward passes and gradients are bit-reproducible regardless of BLAS
threading. Gradients accumulate over samples in input order.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from numba import njit

from .errors import ModelMismatchError

EPS = 1e-7

ACTIVATIONS = {"relu": 0, "identity": 1, "logistic": 2}
_ACT_NAMES = {v: k for k, v in ACTIVATIONS.items()}

CKPT_MAGIC = b"UGAM"
CKPT_VERSION = 1


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _matmul(a, b):
    """``a @ b`` accumulated over the inner index in ascending order."""
    n, inner = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for r in range(n):
        for k in range(inner):
            x = a[r, k]
            for j in range(m):
                out[r, j] += x * b[k, j]
    return out


@njit(cache=True)
def _matmul_at(a, b):
    """``a.T @ b`` accumulated over rows in ascending order."""
    n, inner = a.shape
    m = b.shape[1]
    out = np.zeros((inner, m))
    for r in range(n):
        for k in range(inner):
            x = a[r, k]
            for j in range(m):
                out[k, j] += x * b[r, j]
    return out


@njit(cache=True)
def _colsum(a):
    out = np.zeros(a.shape[1])
    for r in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[j] += a[r, j]
    return out


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# model


@dataclass
class Mlp:
    sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    output: str = "identity"
    hidden: str = "relu"

    @classmethod
    def init(cls, sizes: Sequence[int], output="identity", seed=0) -> "Mlp":
        """Glorot-uniform weights from a seeded generator, zero biases."""
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(sizes, weights, biases, output)

    @classmethod
    def zeros(cls, sizes: Sequence[int], output="identity") -> "Mlp":
        sizes = [int(s) for s in sizes]
        return cls(sizes, [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]], output)

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def params(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(list(self.sizes), [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.output, self.hidden)

    def _check(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = x.reshape(-1, x.shape[-1]) if x.size else x.reshape(-1, self.n_inputs)
        if x.shape[1] != self.n_inputs:
            raise ModelMismatchError(
                f"model expects {self.n_inputs} inputs, got {x.shape[1]}")
        return x, single

    def forward(self, x) -> np.ndarray:
        x, single = self._check(x)
        out, _ = self._forward(x)
        return out[0] if single else out

    __call__ = forward

    def _forward(self, x):
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = _matmul(h, w) + b
            if i < last:
                h = np.maximum(z, 0.0)
            elif self.output == "logistic":
                h = _sigmoid(z)
            else:
                h = z
            acts.append(h)
        return h, acts

    def forward_backward(self, x, loss_fn: Callable):
        """Run ``loss_fn(output) -> (loss, dloss/doutput)`` and backpropagate.

        Returns ``(loss, grads)`` with grads aligned with :meth:`params`.
        """
        x, _ = self._check(x)
        out, acts = self._forward(x)
        loss, grad = loss_fn(out)
        grad = np.asarray(grad, dtype=np.float64).reshape(out.shape)
        if self.output == "logistic":
            grad = grad * out * (1.0 - out)
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = _matmul_at(acts[i], grad)
            grads[2 * i + 1] = _colsum(grad)
            if i:
                grad = _matmul(grad, np.ascontiguousarray(self.weights[i].T))
                grad = grad * (acts[i] > 0)
        return loss, grads

    # checkpoint I/O -------------------------------------------------------

    def to_bytes(self) -> bytes:
        head = CKPT_MAGIC + struct.pack("<BI", CKPT_VERSION, len(self.sizes))
        head += struct.pack(f"<{len(self.sizes)}I", *self.sizes)
        head += struct.pack("<BB", ACTIVATIONS[self.hidden], ACTIVATIONS[self.output])
        body = b"".join(p.astype("<f8").tobytes() for p in self.params())
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "Mlp":
        if data[:4] != CKPT_MAGIC:
            raise ModelMismatchError("not a model checkpoint (bad magic)")
        version, n = struct.unpack_from("<BI", data, 4)
        if version != CKPT_VERSION:
            raise ModelMismatchError(f"unsupported checkpoint version {version}")
        pos = 9
        sizes = list(struct.unpack_from(f"<{n}I", data, pos))
        pos += 4 * n
        hidden, output = struct.unpack_from("<BB", data, pos)
        pos += 2
        model = cls.zeros(sizes, _ACT_NAMES[output])
        model.hidden = _ACT_NAMES[hidden]
        expected = pos + 8 * model.n_params
        if len(data) != expected:
            raise ModelMismatchError(f"checkpoint has {len(data)} bytes, expected {expected}")
        for p in model.params():
            p[...] = np.frombuffer(data, "<f8", p.size, pos).reshape(p.shape)
            pos += 8 * p.size
        return model

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def mlp_forward(model: Mlp, features) -> np.ndarray:
    return model.forward(features)


# ---------------------------------------------------------------------------
# losses


def bce_loss(probs, labels, eps: float = EPS):
    """Mean binary cross-entropy and its gradient w.r.t. ``probs``.

    Probabilities are clamped to ``[eps, 1 - eps]``.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty input")
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {y.shape}")
    pc = np.clip(p, eps, 1.0 - eps)
    n = p.size
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    grad = (-(y / pc) + (1.0 - y) / (1.0 - pc)) / n
    return float(loss), grad


@dataclass(frozen=True)
class WmseConfig:
    w_high: float = 2.0
    w_low: float = 0.5
    q: float = 0.4

    def __post_init__(self):
        if not (self.w_high > 0 and self.w_low > 0 and 0 < self.q < 1):
            raise ValueError(f"invalid W-MSE config {self}")


def quantile_threshold(errors, q: float) -> float:
    """Nearest-rank quantile: the ``ceil(q * N)``-th smallest value (1-based)."""
    e = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    if e.size == 0:
        raise ValueError("no errors given")
    rank = max(1, math.ceil(q * e.size))
    return float(e[rank - 1])


def wmse_weights(errors, config: WmseConfig = WmseConfig()) -> np.ndarray:
    e = np.asarray(errors, dtype=np.float64).ravel()
    t = quantile_threshold(e, config.q)
    return np.where(e > t, config.w_high, config.w_low)


def wmse_loss(pred, target, weights):
    """``(1/N) sum_i w_i |pred_i - target_i|^2`` and its gradient w.r.t. ``pred``.

    Rows are points; the squared norm is taken across channels.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    p2 = p.reshape(len(p), -1)
    d = p2 - t.reshape(p2.shape)
    w = np.asarray(weights, dtype=np.float64).ravel()
    if len(w) != len(p2):
        raise ValueError("one weight per point required")
    n = len(p2)
    loss = float(np.sum(w * np.sum(d * d, axis=1)) / n)
    grad = (2.0 / n) * w[:, None] * d
    return loss, grad.reshape(p.shape)


def point_errors(pred, target) -> np.ndarray:
    """Per-point Euclidean error norm across channels."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return np.sqrt(np.sum(d.reshape(len(d), -1) ** 2, axis=1))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamW:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: Optional[List[np.ndarray]] = field(default=None, repr=False)
    v: Optional[List[np.ndarray]] = field(default=None, repr=False)

    def step(self, params: List[np.ndarray], grads: List[np.ndarray], lr=None) -> None:
        """Update ``params`` in place."""
        lr = self.lr if lr is None else lr
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if len(grads) != len(params):
            raise ValueError("gradient list does not match parameters")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * self.weight_decay * p
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def optimizer_step(model: Mlp, grads, state: AdamW, lr: float):
    state.step(model.params(), grads, lr)
    return model, state


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 3e-3
    batch_size: int = 1024
    samples_per_epoch: int = 16384
    weight_decay: float = 0.01
    seed: int = 0
    final_lr_ratio: float = 0.1   # learning rate decays linearly to lr * ratio


def train(model: Mlp, n_samples: int, batch_fn: Callable, loss_fn: Callable,
          config: TrainConfig, log: Optional[Callable] = None) -> List[float]:
    """Generic minibatch loop.

    ``batch_fn(indices) -> (x, target)`` builds a batch and
    ``loss_fn(output, target) -> (loss, grad)``. Each epoch draws
    ``samples_per_epoch`` sample indices (all samples if fewer) from a
    generator seeded by ``config.seed``. The learning rate falls linearly
    from ``lr`` to ``lr * final_lr_ratio`` over the epochs. Returns the
    per-epoch mean loss.
    """
    if n_samples < 1:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    opt = AdamW(lr=config.lr, weight_decay=config.weight_decay)
    params = model.params()
    history = []
    for epoch in range(config.epochs):
        frac = epoch / max(config.epochs - 1, 1)
        lr = config.lr * (1.0 - (1.0 - config.final_lr_ratio) * frac)
        if n_samples <= config.samples_per_epoch:
            order = rng.permutation(n_samples)
        else:
            order = rng.choice(n_samples, config.samples_per_epoch, replace=False)
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            x, target = batch_fn(idx)
            loss, grads = model.forward_backward(x, lambda out: loss_fn(out, target))
            opt.step(params, grads, lr)
            total += loss * len(idx)
            seen += len(idx)
        history.append(total / seen)
        if log is not None:
            log(epoch, history[-1])
    return history
