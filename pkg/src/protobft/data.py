"""Synthetic Gaussian-blob datasets and the non-IID client partitioner."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import CapacityError, ConfigError

TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, dim)
    labels: np.ndarray  # (n,)
    num_classes: int

    def __len__(self) -> int:
        return len(self.labels)

    def class_indices(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.labels == j)


@dataclass(frozen=True)
class PartitionSpec:
    avg: int = 3
    std: int = 2
    samples_per_class: int = 20
    allow_replacement: bool = False

    def validate(self, num_classes: int) -> None:
        if not 1 <= self.avg <= num_classes:
            raise ConfigError(f"avg={self.avg} must lie in [1, {num_classes}]")
        if self.std < 0:
            raise ConfigError("std must be non-negative")
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be positive")


@dataclass
class ClientShard:
    client_id: int
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    classes: tuple[int, ...]
    # dataset row index of every train/test sample, for auditing the split
    train_idx: np.ndarray = field(repr=False, default=None)
    test_idx: np.ndarray = field(repr=False, default=None)

    def class_counts(self) -> dict[int, int]:
        labels, counts = np.unique(self.train_y, return_counts=True)
        return {int(j): int(c) for j, c in zip(labels, counts)}


@dataclass(frozen=True)
class ShardStats:
    class_counts_per_client: dict[int, int]  # client -> number of classes held
    mean_classes: float
    std_classes: float  # sample std (ddof=1), 0 for a single client
    holders: dict[int, tuple[int, ...]]  # class -> S^(j), sorted client ids
    samples: dict[tuple[int, int], int]  # (client, class) -> |D_k^(j)|
    class_totals: dict[int, int]  # class -> |D^(j)|

    def restricted(self, clients) -> "ShardStats":
        """Statistics recomputed over a subset of clients."""
        keep = set(clients)
        samples = {kj: n for kj, n in self.samples.items() if kj[0] in keep}
        return stats_from_counts(samples)


def stats_from_counts(samples: dict[tuple[int, int], int]) -> ShardStats:
    per_client: dict[int, int] = {}
    holders: dict[int, list[int]] = {}
    totals: dict[int, int] = {}
    for (k, j), n in sorted(samples.items()):
        per_client[k] = per_client.get(k, 0) + 1
        holders.setdefault(j, []).append(k)
        totals[j] = totals.get(j, 0) + n
    counts = np.array(list(per_client.values()), dtype=np.float64)
    return ShardStats(
        class_counts_per_client=per_client,
        mean_classes=float(counts.mean()) if counts.size else 0.0,
        std_classes=float(counts.std(ddof=1)) if counts.size > 1 else 0.0,
        holders={j: tuple(v) for j, v in holders.items()},
        samples=dict(sorted(samples.items())),
        class_totals=totals,
    )


def shard_stats(shards) -> ShardStats:
    shards = list(shards)
    if not shards:
        raise ValueError("no shards")
    samples = {}
    for s in shards:
        for j, n in s.class_counts().items():
            samples[(s.client_id, j)] = n
    return stats_from_counts(samples)


def generate_synthetic(
    num_classes: int,
    dim: int,
    per_class: int,
    spread: float,
    seed: int,
    min_separation: float = 4.0,
) -> Dataset:
    """Isotropic Gaussian blobs, one per class.

    Class means are random directions rescaled so the closest pair sits
    exactly ``max(min_separation * spread, 1)`` apart.
    """
    if num_classes < 2 or dim < 2:
        raise ConfigError("need at least 2 classes and 2 dimensions")
    if min_separation < 4.0:
        raise ConfigError("min_separation must be >= 4 spreads")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_classes, dim))
    closest = min(np.linalg.norm(means[a] - means[b]) for a, b in combinations(range(num_classes), 2))
    means *= max(min_separation * spread, 1.0) / closest
    labels = np.repeat(np.arange(num_classes), per_class)
    noise = rng.standard_normal((num_classes * per_class, dim)) * spread
    features = means[labels] + noise
    return Dataset(features=features, labels=labels, num_classes=num_classes)


def sample_class_counts(K: int, spec: PartitionSpec, num_classes: int, rng) -> np.ndarray:
    raw = np.rint(rng.normal(spec.avg, spec.std, size=K)).astype(int)
    return np.clip(raw, 1, num_classes)


def partition_non_iid(ds: Dataset, K: int, spec: PartitionSpec, seed: int) -> list[ClientShard]:
    """Give each client a random set of classes and an equal number of samples per class.

    Class pools are consumed without replacement across clients, so no sample
    lands in two shards. When a pool runs dry, ``spec.allow_replacement``
    decides between resampling the full class pool and raising CapacityError.
    """
    if K < 1:
        raise ConfigError("K must be positive")
    spec.validate(ds.num_classes)
    rng = np.random.default_rng(seed)
    n_classes = sample_class_counts(K, spec, ds.num_classes, rng)
    pools = {j: list(rng.permutation(ds.class_indices(j))) for j in range(ds.num_classes)}
    n_train = max(1, int(round(TRAIN_FRACTION * spec.samples_per_class)))

    shards = []
    for k in range(K):
        classes = tuple(sorted(int(j) for j in rng.choice(ds.num_classes, size=n_classes[k], replace=False)))
        train_idx, test_idx = [], []
        for j in classes:
            pool = pools[j]
            if len(pool) >= spec.samples_per_class:
                picked = pool[: spec.samples_per_class]
                del pool[: spec.samples_per_class]
            elif spec.allow_replacement:
                picked = list(rng.choice(ds.class_indices(j), size=spec.samples_per_class, replace=True))
            else:
                raise CapacityError(
                    f"class {j} has {len(pool)} unassigned samples, "
                    f"client {k} needs {spec.samples_per_class}"
                )
            train_idx.extend(picked[:n_train])
            test_idx.extend(picked[n_train:])
        train_idx = np.array(train_idx, dtype=int)
        test_idx = np.array(test_idx, dtype=int)
        shards.append(
            ClientShard(
                client_id=k,
                train_x=ds.features[train_idx],
                train_y=ds.labels[train_idx],
                test_x=ds.features[test_idx].reshape(len(test_idx), ds.features.shape[1]),
                test_y=ds.labels[test_idx],
                classes=classes,
                train_idx=train_idx,
                test_idx=test_idx,
            )
        )
    return shards


def dump_shards_csv(shards, path) -> None:
    """Write shards as ``client_id,split,label,f0,f1,...`` rows."""
    shards = list(shards)
    dim = shards[0].train_x.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["client_id", "split", "label"] + [f"f{i}" for i in range(dim)])
        for s in shards:
            for split, X, y in (("train", s.train_x, s.train_y), ("test", s.test_x, s.test_y)):
                for row, label in zip(X, y):
                    w.writerow([s.client_id, split, int(label)] + [format(v, ".17g") for v in row])


def load_shards_csv(path) -> list[ClientShard]:
    rows: dict[int, dict[str, list]] = {}
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 3
        for rec in reader:
            k, split, label = int(rec[0]), rec[1], int(rec[2])
            entry = rows.setdefault(k, {"train": ([], []), "test": ([], [])})
            entry[split][0].append([float(v) for v in rec[3:]])
            entry[split][1].append(label)
    shards = []
    for k in sorted(rows):
        tr_x, tr_y = rows[k]["train"]
        te_x, te_y = rows[k]["test"]
        shards.append(
            ClientShard(
                client_id=k,
                train_x=np.array(tr_x, dtype=np.float64).reshape(len(tr_y), dim),
                train_y=np.array(tr_y, dtype=int),
                test_x=np.array(te_x, dtype=np.float64).reshape(len(te_y), dim),
                test_y=np.array(te_y, dtype=int),
                classes=tuple(sorted(set(tr_y) | set(te_y))),
            )
        )
    return shards
