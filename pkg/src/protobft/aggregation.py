"""Server-side prototype aggregation and quality detection."""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .client import PrototypeSet
from .data import ShardStats, stats_from_counts
from .errors import ConfigError, ConsistencyError

MODES = ("normalized", "paper-literal")


def stats_from_protosets(protosets: dict[int, PrototypeSet]) -> ShardStats:
    """Aggregation weights as reported by the clients themselves."""
    return stats_from_counts(
        {(k, j): ps.counts[j] for k, ps in protosets.items() for j in ps.classes}
    )


def _check_consistent(protosets: dict[int, PrototypeSet], stats: ShardStats) -> None:
    for k, ps in protosets.items():
        for j in ps.classes:
            if stats.samples.get((k, j)) != ps.counts.get(j):
                raise ConsistencyError(
                    f"client {k} class {j}: prototype count {ps.counts.get(j)} "
                    f"vs statistics {stats.samples.get((k, j))}"
                )


def aggregate(
    protosets: dict[int, PrototypeSet],
    stats: ShardStats,
    mode: str = "normalized",
) -> PrototypeSet:
    """Count-weighted per-class aggregate of client prototypes.

    ``normalized`` returns the convex combination
    ``sum_k |D_k^j| / sum_{k in S^j} |D_k^j| * P_k^j``. ``paper-literal``
    additionally divides by |S^j| and uses the class total |D^j| from
    ``stats`` as the denominator.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown aggregation mode {mode!r}")
    if not protosets:
        raise ConsistencyError("no prototype sets to aggregate")
    _check_consistent(protosets, stats)

    by_class: dict[int, list[int]] = {}
    for k in sorted(protosets):
        for j in protosets[k].classes:
            by_class.setdefault(j, []).append(k)

    out, counts = {}, {}
    for j in sorted(by_class):
        holders = by_class[j]
        n = np.array([protosets[k].counts[j] for k in holders], dtype=np.float64)
        stack = np.stack([protosets[k].protos[j] for k in holders])
        if mode == "normalized":
            # anchored on the first holder so identical inputs come back bit-for-bit
            out[j] = stack[0] + (n / n.sum()) @ (stack - stack[0])
        else:
            out[j] = (n / stats.class_totals[j] / len(holders)) @ stack
        counts[j] = int(n.sum())
    return PrototypeSet(out, counts)


def discrepancy(protoset: PrototypeSet, global_protos: PrototypeSet) -> float:
    """Mean L2 distance over the classes both sets contain; 0.0 if they share none."""
    shared = [j for j in protoset.classes if j in global_protos]
    if not shared:
        return 0.0
    return float(
        np.mean([np.linalg.norm(protoset.protos[j] - global_protos.protos[j]) for j in shared])
    )


@dataclass
class QualityReport:
    provisional: PrototypeSet
    discrepancies: dict[int, float]
    filtered: tuple[int, ...]  # ascending client ids
    unshared: tuple[int, ...] = ()  # clients sharing no class with the provisional set

    @property
    def retained(self) -> list[int]:
        drop = set(self.filtered)
        return [k for k in sorted(self.discrepancies) if k not in drop]


def select_largest(discrepancies: dict[int, float], psi: int) -> tuple[int, ...]:
    """Ids of the psi largest values; equal values drop the lower id first."""
    top = heapq.nsmallest(psi, discrepancies, key=lambda k: (-discrepancies[k], k))
    return tuple(sorted(top))


def quality_detect(
    protosets: dict[int, PrototypeSet],
    stats: ShardStats,
    psi: int,
    mode: str = "normalized",
) -> QualityReport:
    if psi < 0 or psi >= len(protosets):
        raise ConfigError(f"psi={psi} must lie in [0, {len(protosets) - 1}]")
    provisional = aggregate(protosets, stats, mode)
    disc, unshared = {}, []
    for k in sorted(protosets):
        disc[k] = discrepancy(protosets[k], provisional)
        if not any(j in provisional for j in protosets[k].classes):
            unshared.append(k)
    return QualityReport(provisional, disc, select_largest(disc, psi), tuple(unshared))


def global_calculate(
    protosets: dict[int, PrototypeSet],
    report: QualityReport,
    stats: ShardStats,
    mode: str = "normalized",
) -> PrototypeSet:
    retained = {k: protosets[k] for k in report.retained}
    if not retained:
        return PrototypeSet({}, {})
    return aggregate(retained, stats.restricted(retained), mode)


def filtered_global(protosets, stats, psi, mode="normalized"):
    """Quality detection followed by aggregation over the retained clients."""
    report = quality_detect(protosets, stats, psi, mode)
    return report, global_calculate(protosets, report, stats, mode)
