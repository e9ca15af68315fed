"""Security probability, prototype clustering quality, upload size and loss diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AnalysisError
from .softpool import KernelSpec


@dataclass(frozen=True)
class SecurityQuery:
    N: int
    p_m: float

    def __post_init__(self) -> None:
        if self.N < 1:
            raise AnalysisError("N must be >= 1")
        if not 0.0 <= self.p_m <= 1.0:
            raise AnalysisError("p_m must lie in [0, 1]")

    @property
    def f_max(self) -> int:
        return (self.N - 1) // 3


def security_probability(q: SecurityQuery) -> float:
    """P(#faulty <= floor((N-1)/3)) when each server is faulty independently with prob. p_m.

    Terms are evaluated in log space so large N cannot overflow the binomial
    coefficient or underflow (1-p)^N before it is weighted. When the lower
    tail dominates, the result is formed as one minus the upper tail, which
    keeps values close to 1 accurate to the last bit.
    """
    N, p, f_max = q.N, q.p_m, q.f_max
    if p == 0.0:
        return 1.0
    if p == 1.0:
        return 0.0
    log_p, log_q = math.log(p), math.log1p(-p)
    log_nf = math.lgamma(N + 1)

    def tail(indices) -> float:
        logs = [log_nf - math.lgamma(i + 1) - math.lgamma(N - i + 1) + i * log_p + (N - i) * log_q for i in indices]
        if not logs:
            return 0.0
        top = max(logs)
        return math.exp(top) * math.fsum(math.exp(v - top) for v in logs)

    lower = tail(range(f_max + 1))
    if lower <= 0.5:
        return lower
    return min(1.0, max(0.0, 1.0 - tail(range(f_max + 1, N + 1))))


def silhouette(points, labels) -> float:
    """Mean silhouette coefficient with Euclidean distance.

    Points in singleton clusters score 0, and so does any point whose
    intra- and nearest-cluster distances are both zero.
    """
    X = np.asarray(points, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or len(X) != len(y):
        raise AnalysisError("points must be (n, d) with one label per point")
    classes = np.unique(y)
    if len(classes) < 2 or len(X) < 2:
        raise AnalysisError("silhouette needs at least two classes and two points")

    diff = X[:, None, :] - X[None, :, :]
    D = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    member = y[:, None] == classes[None, :]  # (n, C)
    sums = D @ member
    sizes = member.sum(axis=0)
    own = member.argmax(axis=1)
    own_size = sizes[own]

    a = np.zeros(len(X))
    multi = own_size > 1
    a[multi] = sums[multi, own[multi]] / (own_size[multi] - 1)
    mean_other = sums / sizes
    mean_other[np.arange(len(X)), own] = np.inf
    b = mean_other.min(axis=1)

    denom = np.maximum(a, b)
    s = np.zeros(len(X))
    ok = multi & (denom > 0)
    s[ok] = (b[ok] - a[ok]) / denom[ok]
    return float(s.mean())


def comm_params(num_classes_held: int, proto_dims: tuple[int, int], spec: KernelSpec | None) -> int:
    """Scalars uploaded per round: one (pooled) map per class held."""
    rows, cols = proto_dims
    if spec is None:
        return num_classes_held * rows * cols
    prow, pcol = spec.output_shape(rows, cols)
    return num_classes_held * prow * pcol


@dataclass(frozen=True)
class TrajectorySummary:
    violations: int
    ratio: float


def loss_trajectory_report(losses) -> TrajectorySummary:
    losses = [float(v) for v in losses]
    if len(losses) < 2:
        raise AnalysisError("need at least two rounds")
    violations = sum(1 for a, b in zip(losses, losses[1:]) if b > a)
    ratio = losses[-1] / losses[0] if losses[0] != 0 else float("nan")
    return TrajectorySummary(violations, ratio)
