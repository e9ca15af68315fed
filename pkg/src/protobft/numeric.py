"""Dense two-layer model with hand-written backpropagation.

The representation layer maps an input vector to a ``rows x cols`` feature
map (the sample's prototype) through ``relu(W_r x + b_r)``. The decision
layer maps the flattened feature map to class probabilities through a fully
connected layer followed by softmax.

Every routine works on float64 arrays. Batched variants take a leading
sample axis and are what the training loop uses; the single-sample
functions are thin wrappers kept for clarity and for the gradient checks.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .errors import ShapeError

PROB_FLOOR = 1e-12


@dataclass
class ModelParams:
    """Weights of one local model: representation part and decision part."""

    repr_w: np.ndarray  # (proto_dim, input_dim)
    repr_b: np.ndarray  # (proto_dim,)
    dec_w: np.ndarray  # (num_classes, proto_dim)
    dec_b: np.ndarray  # (num_classes,)
    proto_shape: tuple[int, int]

    def __post_init__(self) -> None:
        rows, cols = self.proto_shape
        proto_dim = rows * cols
        if self.repr_w.ndim != 2 or self.repr_w.shape[0] != proto_dim:
            raise ShapeError(
                f"repr_w has shape {self.repr_w.shape}, expected ({proto_dim}, input_dim)"
            )
        if self.repr_b.shape != (proto_dim,):
            raise ShapeError(f"repr_b has shape {self.repr_b.shape}, expected ({proto_dim},)")
        if self.dec_w.ndim != 2 or self.dec_w.shape[1] != proto_dim:
            raise ShapeError(
                f"dec_w has shape {self.dec_w.shape}, expected (num_classes, {proto_dim})"
            )
        if self.dec_b.shape != (self.dec_w.shape[0],):
            raise ShapeError(
                f"dec_b has shape {self.dec_b.shape}, expected ({self.dec_w.shape[0]},)"
            )

    @property
    def input_dim(self) -> int:
        return self.repr_w.shape[1]

    @property
    def proto_dim(self) -> int:
        return self.repr_w.shape[0]

    @property
    def num_classes(self) -> int:
        return self.dec_w.shape[0]

    def tensors(self) -> tuple[np.ndarray, ...]:
        return (self.repr_w, self.repr_b, self.dec_w, self.dec_b)

    def replace_tensors(self, tensors) -> "ModelParams":
        repr_w, repr_b, dec_w, dec_b = tensors
        return ModelParams(repr_w, repr_b, dec_w, dec_b, self.proto_shape)

    def copy(self) -> "ModelParams":
        return self.replace_tensors([t.copy() for t in self.tensors()])

    def zeros_like(self) -> "ModelParams":
        return self.replace_tensors([np.zeros_like(t) for t in self.tensors()])

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])

    def with_flat(self, vector: np.ndarray) -> "ModelParams":
        out, offset = [], 0
        for t in self.tensors():
            out.append(np.array(vector[offset : offset + t.size], dtype=np.float64).reshape(t.shape))
            offset += t.size
        if offset != vector.size:
            raise ShapeError(f"flat vector has {vector.size} entries, expected {offset}")
        return self.replace_tensors(out)

    def check_congruent(self, other: "ModelParams") -> None:
        for a, b in zip(self.tensors(), other.tensors()):
            if a.shape != b.shape:
                raise ShapeError(f"tensor shapes differ: {a.shape} vs {b.shape}")

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.tensors())


# Gradients share the parameter layout tensor for tensor.
GradientBundle = ModelParams


def init_params(
    input_dim: int,
    proto_shape: tuple[int, int],
    num_classes: int,
    rng: np.random.Generator,
) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases."""
    rows, cols = proto_shape
    proto_dim = rows * cols
    lim_r = 1.0 / np.sqrt(input_dim)
    lim_d = 1.0 / np.sqrt(proto_dim)
    return ModelParams(
        repr_w=rng.uniform(-lim_r, lim_r, size=(proto_dim, input_dim)),
        repr_b=rng.uniform(-lim_r, lim_r, size=proto_dim),
        dec_w=rng.uniform(-lim_d, lim_d, size=(num_classes, proto_dim)),
        dec_b=rng.uniform(-lim_d, lim_d, size=num_classes),
        proto_shape=(rows, cols),
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def represent_batch(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Feature maps for a batch; returns shape (B, rows, cols)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError(f"inputs have shape {X.shape}, expected (B, {params.input_dim})")
    pre = X @ params.repr_w.T + params.repr_b
    return np.maximum(pre, 0.0).reshape((X.shape[0],) + params.proto_shape)


def decide_batch(params: ModelParams, C: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch of feature maps (B, rows, cols) or (B, proto_dim)."""
    C = np.asarray(C, dtype=np.float64)
    flat = C.reshape(C.shape[0], -1)
    if flat.shape[1] != params.proto_dim:
        raise ShapeError(f"prototype has {flat.shape[1]} entries, expected {params.proto_dim}")
    return softmax(flat @ params.dec_w.T + params.dec_b)


def forward_representation(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {x.shape}")
    return represent_batch(params, x[None, :])[0]


def forward_decision(params: ModelParams, proto: np.ndarray) -> np.ndarray:
    proto = np.asarray(proto, dtype=np.float64)
    return decide_batch(params, proto.reshape(1, -1))[0]


def cross_entropy(probs: np.ndarray, label: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[-1]:
        raise IndexError(f"label {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[label], PROB_FLOOR)))


def mean_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise IndexError("label out of range")
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def backward_batch(
    params: ModelParams,
    X: np.ndarray,
    labels: np.ndarray,
    proto_loss_grad: np.ndarray | None,
    lam: float,
) -> GradientBundle:
    """Gradient of ``mean_i CE_i + lam * proto_term`` with respect to every parameter.

    ``proto_loss_grad`` holds d(proto_term)/dC_i for each sample, already
    chained through pooling, with shape (B, rows, cols). Pass ``None`` when
    the prototype term is absent.

    The probability floor in the loss is ignored here: the gradient is that
    of the unfloored cross-entropy, which differs only when a predicted
    probability drops below 1e-12.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    B = X.shape[0]
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError(f"inputs have shape {X.shape}, expected (B, {params.input_dim})")
    if labels.shape != (B,):
        raise ShapeError(f"labels have shape {labels.shape}, expected ({B},)")

    pre = X @ params.repr_w.T + params.repr_b
    C = np.maximum(pre, 0.0)
    probs = softmax(C @ params.dec_w.T + params.dec_b)

    d_logits = probs
    d_logits[np.arange(B), labels] -= 1.0
    d_logits /= B
    g_dec_w = d_logits.T @ C
    g_dec_b = d_logits.sum(axis=0)

    d_C = d_logits @ params.dec_w
    if proto_loss_grad is not None and lam != 0.0:
        pg = np.asarray(proto_loss_grad, dtype=np.float64).reshape(B, -1)
        if pg.shape[1] != params.proto_dim:
            raise ShapeError(
                f"prototype gradient has {pg.shape[1]} entries, expected {params.proto_dim}"
            )
        d_C = d_C + lam * pg
    d_pre = d_C * (pre > 0.0)
    g_repr_w = d_pre.T @ X
    g_repr_b = d_pre.sum(axis=0)
    return ModelParams(g_repr_w, g_repr_b, g_dec_w, g_dec_b, params.proto_shape)


def backward(
    params: ModelParams,
    x: np.ndarray,
    label: int,
    proto_loss_grad: np.ndarray | None,
    lam: float,
) -> GradientBundle:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {x.shape}")
    if not 0 <= label < params.num_classes:
        raise IndexError(f"label {label} out of range for {params.num_classes} classes")
    pg = None if proto_loss_grad is None else np.asarray(proto_loss_grad)[None, ...]
    return backward_batch(params, x[None, :], np.array([label]), pg, lam)


def sgd_step(params: ModelParams, grads: GradientBundle, eta: float) -> ModelParams:
    if eta < 0:
        raise ValueError("learning rate must be non-negative")
    params.check_congruent(grads)
    return params.replace_tensors([p - eta * g for p, g in zip(params, grads)])


def finite_difference_gradient(
    lossfn: Callable[[ModelParams], float],
    params: ModelParams,
    h: float = 1e-5,
) -> GradientBundle:
    """Central differences, one scalar parameter at a time."""
    if h <= 0:
        raise ValueError("step must be positive")
    base = params.flat()
    grad = np.empty_like(base)
    probe = base.copy()
    for i in range(base.size):
        probe[i] = base[i] + h
        up = lossfn(params.with_flat(probe))
        probe[i] = base[i] - h
        down = lossfn(params.with_flat(probe))
        probe[i] = base[i]
        grad[i] = (up - down) / (2.0 * h)
    return params.with_flat(grad)
