"""Dense ReLU network engine: forward pass, exact backprop, momentum SGD.

Weights are stored ``(out, in)`` so that row ``j`` of a weight matrix holds the
incoming weights of output unit ``j``; a layer computes ``a @ W.T + b``.
Everything is float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_widths: tuple = ()
    num_classes: int = 2
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or any(w < 1 for w in self.hidden_widths):
            raise ValueError(f"all layer dims must be >= 1, got {self}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_widths, self.num_classes]

    @property
    def num_layers(self) -> int:
        return len(self.hidden_widths) + 1

    @property
    def feature_dim(self) -> int:
        return self.hidden_widths[-1] if self.hidden_widths else self.input_dim


@dataclass
class ParamSet:
    """Per-layer weights ``(out, in)`` and bias vectors."""

    weights: list
    biases: list

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def weight_count(self) -> int:
        return int(sum(w.size for w in self.weights))

    @property
    def total_count(self) -> int:
        return self.weight_count + int(sum(b.size for b in self.biases))

    def copy(self) -> "ParamSet":
        return ParamSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "ParamSet":
        return ParamSet([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def flat(self) -> np.ndarray:
        """Layer by layer: weight (row-major) then bias."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def flat_weights(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights])

    def like_from_flat(self, vec: np.ndarray) -> "ParamSet":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.total_count:
            raise ShapeError(f"flat vector has {vec.size} entries, expected {self.total_count}")
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vec[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            biases.append(vec[pos:pos + b.size].copy())
            pos += b.size
        return ParamSet(weights, biases)

    def combine(self, other: "ParamSet", alpha: float = 1.0, beta: float = 1.0) -> "ParamSet":
        """Return ``alpha * self + beta * other``."""
        return ParamSet(
            [alpha * w + beta * v for w, v in zip(self.weights, other.weights)],
            [alpha * b + beta * c for b, c in zip(self.biases, other.biases)],
        )

    def equal(self, other: "ParamSet") -> bool:
        """Bitwise equality."""
        if self.num_layers != other.num_layers:
            return False
        pairs = list(zip(self.weights, other.weights)) + list(zip(self.biases, other.biases))
        return all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in pairs)


def check_params(spec: MlpSpec, params: ParamSet) -> None:
    if params.num_layers != spec.num_layers or len(params.biases) != spec.num_layers:
        raise ShapeError(f"params have {params.num_layers} layers, spec expects {spec.num_layers}")
    dims = spec.dims
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if w.shape != (dims[i + 1], dims[i]):
            raise ShapeError(f"layer {i}: weight shape {w.shape}, expected {(dims[i + 1], dims[i])}")
        if b.shape != (dims[i + 1],):
            raise ShapeError(f"layer {i}: bias shape {b.shape}, expected {(dims[i + 1],)}")


def init_params(spec: MlpSpec, seed: int) -> ParamSet:
    """He fan-in Gaussian weights, zero biases."""
    rng = np.random.default_rng(seed)
    dims = spec.dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return ParamSet(weights, biases)


@dataclass
class ForwardTrace:
    pre_activations: list
    activations: list  # activations[0] is the input batch
    logits: np.ndarray

    @property
    def features(self) -> np.ndarray:
        """Post-activation output of the last hidden layer (the input if there is none)."""
        return self.activations[-1]


def as_batch(batch, input_dim: Optional[int] = None) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"batch must be 2-d, got shape {x.shape}")
    if input_dim is not None and x.shape[1] != input_dim:
        raise ShapeError(f"layer 0: batch has {x.shape[1]} columns, spec input_dim is {input_dim}")
    return x


def forward(spec: MlpSpec, params: ParamSet, batch) -> ForwardTrace:
    check_params(spec, params)
    a = as_batch(batch, spec.input_dim)
    pre, acts = [], [a]
    last = params.num_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        if i == last:
            return ForwardTrace(pre, acts, z)
        pre.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    raise AssertionError("unreachable")


def head_logits(params: ParamSet, features: np.ndarray) -> np.ndarray:
    """Apply only the final layer to penultimate features."""
    return features @ params.weights[-1].T + params.biases[-1]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample softmax cross-entropy."""
    labels = np.asarray(labels, dtype=np.int64)
    return -log_softmax(logits)[np.arange(len(labels)), labels]


def backprop(spec: MlpSpec, params: ParamSet, trace: ForwardTrace, dlogits: np.ndarray,
             dfeatures: Optional[np.ndarray] = None):
    """Chain an upstream gradient back through the network.

    ``dlogits`` is d(objective)/d(logits); ``dfeatures`` optionally adds a
    gradient arriving directly at the penultimate features. Returns
    ``(grads, input_grads)``.
    """
    n_layers = params.num_layers
    gw = [None] * n_layers
    gb = [None] * n_layers
    delta = np.asarray(dlogits, dtype=np.float64)
    for i in range(n_layers - 1, -1, -1):
        a_in = trace.activations[i]
        gw[i] = delta.T @ a_in
        gb[i] = delta.sum(axis=0)
        da = delta @ params.weights[i]
        if i == n_layers - 1 and dfeatures is not None:
            da = da + dfeatures
        if i == 0:
            return ParamSet(gw, gb), da
        delta = da * (trace.pre_activations[i - 1] > 0)
    raise AssertionError("unreachable")


def backward(spec: MlpSpec, params: ParamSet, batch, labels, mask=None):
    """Mean cross-entropy loss and its gradients.

    Returns ``(loss, grads, input_grads)``; gradients of weights removed by
    ``mask`` are exactly zero.
    """
    labels = np.asarray(labels, dtype=np.int64)
    trace = forward(spec, params, batch)
    n = trace.logits.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch of {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= spec.num_classes):
        raise ValueError(f"labels must lie in [0, {spec.num_classes})")
    loss = float(cross_entropy(trace.logits, labels).mean())
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss {loss}")
    dlogits = softmax(trace.logits)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grads, input_grads = backprop(spec, params, trace, dlogits)
    if mask is not None:
        mask.zero_masked(grads)
    return loss, grads, input_grads


@dataclass
class SgdConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 2e-4
    lr_schedule: tuple = ()  # ((epoch, multiplier), ...), multiplier applies once epoch is reached

    def __post_init__(self):
        self.lr_schedule = tuple((int(e), float(m)) for e, m in self.lr_schedule)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        epochs = [e for e, _ in self.lr_schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("lr_schedule epochs must be strictly increasing")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for the epoch that starts after ``epoch`` completed epochs."""
        mult = 1.0
        for e, m in self.lr_schedule:
            if epoch >= e:
                mult = m
        return self.learning_rate * mult


def sgd_step(params: ParamSet, grads: ParamSet, velocity: ParamSet, cfg: SgdConfig,
             mask=None, lr: Optional[float] = None):
    """One in-place momentum step; biases are not decayed."""
    lr = cfg.learning_rate if lr is None else lr
    for i in range(params.num_layers):
        w, v = params.weights[i], velocity.weights[i]
        v *= cfg.momentum
        v += grads.weights[i]
        if cfg.weight_decay:
            v += cfg.weight_decay * w
        w -= lr * v
        vb = velocity.biases[i]
        vb *= cfg.momentum
        vb += grads.biases[i]
        params.biases[i] -= lr * vb
    if mask is not None:
        mask.zero_masked(params)
        mask.zero_masked(velocity)
    return params, velocity


def batch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Seeded permutation of ``n`` sample indices for one epoch."""
    return np.random.default_rng([int(seed), int(epoch)]).permutation(n)


def iter_minibatches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield start // batch_size, order[start:start + batch_size]


def predict(spec: MlpSpec, params: ParamSet, batch) -> np.ndarray:
    return forward(spec, params, batch).logits.argmax(axis=1)


def gradient_check(spec: MlpSpec, params: ParamSet, batch, labels, h: float = 1e-5,
                   floor: float = 1e-8) -> float:
    """Max elementwise relative error of analytic vs central-difference gradients."""
    _, grads, _ = backward(spec, params, batch, labels)
    analytic = grads.flat()
    base = params.flat()
    numeric = np.empty_like(base)
    for j in range(base.size):
        plus = base.copy()
        plus[j] += h
        minus = base.copy()
        minus[j] -= h
        lp = cross_entropy(forward(spec, params.like_from_flat(plus), batch).logits, labels).mean()
        lm = cross_entropy(forward(spec, params.like_from_flat(minus), batch).logits, labels).mean()
        numeric[j] = (lp - lm) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
