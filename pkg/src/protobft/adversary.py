"""Client poisoning and server fault injection."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .client import PrototypeSet
from .errors import ConfigError

BEHAVIORS = ("crash", "amnesia", "tamper", "equivocate")


@dataclass(frozen=True)
class ServerFault:
    behavior: str
    from_view: int = 0  # crash only: first view in which the server is silent
    factor: float = 1.5  # tamper/equivocate: multiplier applied to proposed prototypes

    def __post_init__(self) -> None:
        if self.behavior not in BEHAVIORS:
            raise ConfigError(f"unknown server behavior {self.behavior!r}")


@dataclass
class AttackConfig:
    zeta: int = 0
    attack_eps: float = 0.0
    byz_servers: dict[int, ServerFault] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.zeta < 0:
            raise ConfigError("zeta must be non-negative")
        if self.attack_eps < 0:
            raise ConfigError("attack_eps must be non-negative")


def parse_server_plan(text: str) -> dict[int, ServerFault]:
    """Parse ``"0:crash@1,2:tamper*2.0"`` into per-server faults.

    ``@v`` sets the first silent view for crashes, ``*x`` the tamper factor.
    """
    plan: dict[int, ServerFault] = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        try:
            sid, spec = item.split(":", 1)
            factor, from_view = 1.5, 0
            if "*" in spec:
                spec, f = spec.split("*", 1)
                factor = float(f)
            if "@" in spec:
                spec, v = spec.split("@", 1)
                from_view = int(v)
            plan[int(sid)] = ServerFault(spec.strip(), from_view=from_view, factor=factor)
        except ValueError as exc:
            raise ConfigError(f"bad server plan entry {item!r}: {exc}") from None
    return plan


def format_server_plan(plan: dict[int, ServerFault]) -> str:
    parts = []
    for sid in sorted(plan):
        f = plan[sid]
        s = f"{sid}:{f.behavior}"
        if f.behavior == "crash" and f.from_view:
            s += f"@{f.from_view}"
        if f.behavior in ("tamper", "equivocate") and f.factor != 1.5:
            s += f"*{f.factor!r}"
        parts.append(s)
    return ",".join(parts)


def poison(protoset: PrototypeSet, attack_eps: float, seed) -> PrototypeSet:
    """Add to every class prototype a random vector of L2 norm exactly ``attack_eps``."""
    if attack_eps < 0:
        raise ValueError("attack_eps must be non-negative")
    if attack_eps == 0:
        return protoset.copy()
    rng = np.random.default_rng(seed)
    out = {}
    for j in protoset.classes:
        p = protoset.protos[j]
        direction = rng.standard_normal(p.shape)
        while not np.any(direction):
            direction = rng.standard_normal(p.shape)
        out[j] = p + attack_eps * direction / np.linalg.norm(direction)
    return PrototypeSet(out, dict(protoset.counts))


def honest_spread(protosets: dict[int, PrototypeSet], honest_ids) -> float:
    """Mean L2 distance from honest client prototypes to their per-class mean."""
    by_class: dict[int, list[np.ndarray]] = {}
    for k in sorted(honest_ids):
        for j, p in protosets[k].protos.items():
            by_class.setdefault(j, []).append(p)
    dists = []
    for j in sorted(by_class):
        stack = np.stack(by_class[j])
        if len(stack) > 1:
            dists.extend(np.linalg.norm(stack - stack.mean(axis=0), axis=1))
    return float(np.mean(dists)) if dists else 0.0


def scaled(protoset: PrototypeSet, factor: float) -> PrototypeSet:
    return PrototypeSet({j: p * factor for j, p in protoset.protos.items()}, dict(protoset.counts))


def bogus_digest(server_id: int, view: int) -> bytes:
    return hashlib.sha256(f"bogus|{server_id}|{view}".encode()).digest()


def apply_server_behavior(server, step: str, payload=None):
    """Effect of a faulty server's behavior at one protocol step.

    ``server`` needs ``server_id``, ``view``, ``fault`` and ``peers`` (all
    server ids in order). Steps and return values:

    - ``"respond"``: whether the server acts at all in its current view.
    - ``"store"``: the client prototype sets the server keeps (``payload``).
    - ``"propose"``: list of ``(recipient_ids, PrototypeSet)`` to send.
      ``payload`` is the correctly computed global set.
    - ``"vote"``: digest to vote for, per recipient, as ``{recipient: digest}``;
      ``payload`` is the digest an honest server would vote for. An empty
      dict means the server abstains.
    """
    fault = getattr(server, "fault", None)
    if fault is None:
        raise ConfigError(f"server {server.server_id} has no declared fault behavior")
    peers = list(server.peers)
    b = fault.behavior

    if step == "respond":
        return not (b == "crash" and server.view >= fault.from_view)
    if step == "store":
        return {} if b == "amnesia" else payload
    if step == "propose":
        if b == "tamper":
            return [(peers, scaled(payload, fault.factor))]
        if b == "equivocate":
            half = len(peers) // 2
            return [(peers[:half], payload), (peers[half:], scaled(payload, fault.factor))]
        if b == "amnesia":
            return []
        return [(peers, payload)]
    if step == "vote":
        if b == "amnesia":
            return {}
        fake = bogus_digest(server.server_id, server.view)
        if b == "tamper":
            return {r: fake for r in peers}
        if b == "equivocate":
            half = len(peers) // 2
            return {r: (payload if i < half else fake) for i, r in enumerate(peers)}
        return {r: payload for r in peers}
    raise ValueError(f"unknown protocol step {step!r}")
