"""Client-side training: local rounds with prototype alignment, and prototype averaging.

A client keeps its raw samples private. The only thing that leaves this
module for the servers is a :class:`PrototypeSet`: per-class means of pooled
feature maps plus the per-class sample counts used as aggregation weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import numeric
from .data import ClientShard
from .errors import ConfigError, EvaluationError
from .softpool import KernelSpec, softpool_backward_batch, softpool_batch


@dataclass
class TrainingConfig:
    eta: float = 0.01
    lam: float = 1.0
    E: int = 5
    batch_size: int = 32

    def __post_init__(self) -> None:
        if self.eta < 0:
            raise ConfigError("eta must be non-negative")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.E < 1:
            raise ConfigError("E must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class PrototypeSet:
    """Per-class flattened prototypes with the sample count behind each one."""

    protos: dict[int, np.ndarray]
    counts: dict[int, int] = field(default_factory=dict)

    @property
    def classes(self) -> list[int]:
        return sorted(self.protos)

    def __len__(self) -> int:
        return len(self.protos)

    def __contains__(self, j: int) -> bool:
        return j in self.protos

    def copy(self) -> "PrototypeSet":
        return PrototypeSet({j: p.copy() for j, p in self.protos.items()}, dict(self.counts))

    def allclose(self, other: "PrototypeSet", atol: float) -> bool:
        if self.classes != other.classes:
            return False
        return all(
            self.protos[j].shape == other.protos[j].shape
            and bool(np.all(np.abs(self.protos[j] - other.protos[j]) <= atol))
            for j in self.classes
        )

    def equals(self, other: "PrototypeSet") -> bool:
        return self.classes == other.classes and all(
            np.array_equal(self.protos[j], other.protos[j]) for j in self.classes
        )


@dataclass
class ClientState:
    client_id: int
    shard: ClientShard
    params: numeric.ModelParams
    honest: bool = True
    last_loss: float | None = None


def pool(maps: np.ndarray, spec: KernelSpec | None) -> np.ndarray:
    """Pooled maps, or the maps themselves when pooling is disabled."""
    return maps if spec is None else softpool_batch(maps, spec)


def pool_backward(maps: np.ndarray, spec: KernelSpec | None, upstream: np.ndarray) -> np.ndarray:
    return upstream if spec is None else softpool_backward_batch(maps, spec, upstream)


def prototype_term(pooled: np.ndarray, labels: np.ndarray, global_protos: PrototypeSet | None):
    """Sum over classes of the mean per-sample L2 distance to the class's global prototype.

    Returns the value and its gradient with respect to every pooled map.
    Classes with no global prototype contribute nothing. At a zero distance
    the (sub)gradient is taken as zero.
    """
    grad = np.zeros_like(pooled)
    if not global_protos:
        return 0.0, grad
    flat = pooled.reshape(len(labels), -1)
    gflat = grad.reshape(len(labels), -1)
    total = 0.0
    for j in np.unique(labels):
        target = global_protos.protos.get(int(j))
        if target is None:
            continue
        members = np.flatnonzero(labels == j)
        diff = flat[members] - target
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        total += float(dist.mean())
        nz = dist > 0.0
        gflat[members[nz]] = diff[nz] / (dist[nz, None] * len(members))
    return total, grad


def batch_loss_and_grad(params, X, y, global_protos, lam, spec):
    C = numeric.represent_batch(params, X)
    probs = numeric.decide_batch(params, C)
    ce = numeric.mean_cross_entropy(probs, y)
    if global_protos and lam != 0.0:
        P = pool(C, spec)
        term, gP = prototype_term(P, y, global_protos)
        gC = pool_backward(C, spec, gP)
    else:
        term, gC = 0.0, None
    grads = numeric.backward_batch(params, X, y, gC, lam)
    return ce + lam * term, grads


def local_round(
    state: ClientState,
    global_protos: PrototypeSet | None,
    cfg: TrainingConfig,
    spec: KernelSpec | None,
    seed,
) -> ClientState:
    """E iterations of minibatch SGD on cross-entropy plus lambda-weighted prototype distance."""
    n = len(state.shard.train_y)
    if n == 0:
        raise ConfigError(f"client {state.client_id} has no training samples")
    rng = np.random.default_rng(seed)
    params = state.params
    loss = None
    for _ in range(cfg.E):
        batch = rng.permutation(n)[: cfg.batch_size]
        loss, grads = batch_loss_and_grad(
            params, state.shard.train_x[batch], state.shard.train_y[batch], global_protos, cfg.lam, spec
        )
        params = numeric.sgd_step(params, grads, cfg.eta)
    return replace(state, params=params, last_loss=loss)


def _sample_order(shard: ClientShard) -> np.ndarray:
    if shard.train_idx is None:
        return np.arange(len(shard.train_y))
    return np.argsort(shard.train_idx, kind="stable")


def prototype_average(state: ClientState, spec: KernelSpec | None) -> PrototypeSet:
    shard = state.shard
    order = _sample_order(shard)
    X, y = shard.train_x[order], shard.train_y[order]
    pooled = pool(numeric.represent_batch(state.params, X), spec).reshape(len(y), -1)
    protos, counts = {}, {}
    for j in np.unique(y):
        members = pooled[y == j]
        protos[int(j)] = members.sum(axis=0) / len(members)
        counts[int(j)] = len(members)
    return PrototypeSet(protos, counts)


def sample_prototypes(state: ClientState, spec: KernelSpec | None, split: str = "test"):
    """Flattened pooled prototype of every sample in a split, with labels."""
    shard = state.shard
    X, y = (shard.test_x, shard.test_y) if split == "test" else (shard.train_x, shard.train_y)
    if len(y) == 0:
        return np.empty((0, 0)), y
    return pool(numeric.represent_batch(state.params, X), spec).reshape(len(y), -1), y


def predict(params: numeric.ModelParams, X: np.ndarray) -> np.ndarray:
    return np.argmax(numeric.decide_batch(params, numeric.represent_batch(params, X)), axis=1)


def evaluate(state: ClientState) -> float:
    if len(state.shard.test_y) == 0:
        raise EvaluationError(f"client {state.client_id} has no test samples")
    return float(np.mean(predict(state.params, state.shard.test_x) == state.shard.test_y))


def objective(state: ClientState, global_protos: PrototypeSet | None, spec: KernelSpec | None):
    """Full-shard cross-entropy and the unweighted prototype term against ``global_protos``."""
    shard = state.shard
    C = numeric.represent_batch(state.params, shard.train_x)
    ce = numeric.mean_cross_entropy(numeric.decide_batch(state.params, C), shard.train_y)
    term, _ = prototype_term(pool(C, spec), shard.train_y, global_protos)
    return ce, term
