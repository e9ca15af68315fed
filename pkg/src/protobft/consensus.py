"""Leader-based prepare/commit confirmation of the filtered global prototype set.

Servers exchange messages over an in-process queue. A round proceeds in views:
the leader of view ``v`` is server ``v mod N``. It runs quality detection and
aggregation over the client submissions and proposes the result. Every server
recomputes the same thing from its own copy of the submissions and prepares
only when the proposal matches within ``tolerance``. With ``2f+1`` matching
prepares a server commits, and with ``2f+1`` commits it confirms. If honest
servers have not all confirmed once the queue drains, the view times out and
the servers rotate to the next leader.

Time is logical. Each delivered message advances a tick counter, and the
optional message trace records that tick.
"""
from __future__ import annotations

import hashlib
import hmac
import json
import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import adversary
from .aggregation import QualityReport, filtered_global, stats_from_protosets
from .client import PrototypeSet
from .errors import ConfigError

PROPOSAL = "proposal"
PREPARE = "prepare"
COMMIT = "commit"
VIEW_CHANGE = "view-change"
KINDS = (PROPOSAL, PREPARE, COMMIT, VIEW_CHANGE)


@dataclass
class ConsensusConfig:
    N: int = 4
    psi: int = 0
    f: int | None = None
    mode: str = "normalized"
    tolerance: float = 1e-9
    max_view_changes: int | None = None
    delivery_seed: int | None = None  # None: FIFO delivery; otherwise seeded random order

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if self.psi < 0:
            raise ConfigError("psi must be >= 0")
        if self.f is None:
            self.f = (self.N - 1) // 3
        if self.f < 0 or 2 * self.f + 1 > self.N:
            raise ConfigError(f"f={self.f} leaves no 2f+1 quorum among N={self.N} servers")
        if self.max_view_changes is None:
            self.max_view_changes = 2 * self.N

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1


@dataclass(frozen=True)
class ConsensusMessage:
    kind: str
    view: int
    payload_digest: bytes
    sender: int
    auth_tag: bytes = b""

    def signing_bytes(self) -> bytes:
        return f"{self.kind}|{self.view}|{self.sender}|".encode() + self.payload_digest


def server_keys(N: int, seed: int = 0) -> dict[int, bytes]:
    return {i: hashlib.sha256(f"server-key|{seed}|{i}".encode()).digest() for i in range(N)}


def sign(msg: ConsensusMessage, key: bytes) -> ConsensusMessage:
    tag = hmac.new(key, msg.signing_bytes(), hashlib.sha256).digest()
    return ConsensusMessage(msg.kind, msg.view, msg.payload_digest, msg.sender, tag)


def verify_auth(msg: ConsensusMessage, keys: dict[int, bytes]) -> bool:
    key = keys.get(msg.sender)
    if key is None:
        return False
    expected = hmac.new(key, msg.signing_bytes(), hashlib.sha256).digest()
    return hmac.compare_digest(expected, msg.auth_tag)


def proposal_digest(protos: PrototypeSet, filtered) -> bytes:
    h = hashlib.sha256()
    h.update(b"filtered:" + ",".join(str(k) for k in sorted(filtered)).encode())
    for j in protos.classes:
        p = np.ascontiguousarray(protos.protos[j], dtype="<f8")
        h.update(struct.pack("<qqq", j, protos.counts.get(j, 0), p.size))
        h.update(p.tobytes())
    return h.digest()


@dataclass
class Proposal:
    protos: PrototypeSet
    filtered: tuple[int, ...]


@dataclass
class ServerState:
    server_id: int
    peers: tuple[int, ...]
    key: bytes
    keys: dict[int, bytes]
    fault: adversary.ServerFault | None = None
    view: int = 0
    store: dict[int, PrototypeSet] = field(default_factory=dict)
    vote_log: list[tuple[str, int, str]] = field(default_factory=list)
    decisions: list[str] = field(default_factory=list)
    # per-round state
    own: tuple[QualityReport, PrototypeSet, bytes] | None = None
    accepted: dict[int, tuple[bytes, Proposal]] = field(default_factory=dict)
    seen_proposals: dict[bytes, Proposal] = field(default_factory=dict)
    prepares: dict[tuple[int, bytes], set] = field(default_factory=dict)
    commits: dict[tuple[int, bytes], set] = field(default_factory=dict)
    view_votes: dict[int, set] = field(default_factory=dict)
    committed_views: set = field(default_factory=set)
    confirmed: Proposal | None = None
    confirmed_digest: bytes | None = None

    @property
    def honest(self) -> bool:
        return self.fault is None

    def responding(self) -> bool:
        return self.honest or adversary.apply_server_behavior(self, "respond")

    def reset_round(self) -> None:
        self.own = None
        self.accepted.clear()
        self.seen_proposals.clear()
        self.prepares.clear()
        self.commits.clear()
        self.view_votes.clear()
        self.committed_views.clear()
        self.confirmed = None
        self.confirmed_digest = None

    def log(self, text: str) -> None:
        self.decisions.append(f"v{self.view}: {text}")


def make_servers(cfg: ConsensusConfig, fault_plan=None, seed: int = 0) -> list[ServerState]:
    fault_plan = fault_plan or {}
    for sid in fault_plan:
        if not 0 <= sid < cfg.N:
            raise ConfigError(f"fault plan names unknown server {sid}")
    keys = server_keys(cfg.N, seed)
    peers = tuple(range(cfg.N))
    return [ServerState(i, peers, keys[i], keys, fault_plan.get(i)) for i in range(cfg.N)]


@dataclass
class ConsensusOutcome:
    confirmed: PrototypeSet | None
    report: QualityReport | None
    view_changes: int
    final_view: int
    confirmations: dict[int, PrototypeSet]
    decisions: dict[int, list[str]]
    aborted: bool = False
    safety_risk: bool = False
    trace: list[dict] = field(default_factory=list)

    @property
    def filtered(self) -> tuple[int, ...]:
        return self.report.filtered if self.report else ()


class _Bus:
    def __init__(self, servers, cfg: ConsensusConfig, trace: list | None):
        self.servers = servers
        self.cfg = cfg
        self.queue: deque = deque()
        self.tick = 0
        self.trace = trace
        self.rng = None if cfg.delivery_seed is None else np.random.default_rng(cfg.delivery_seed)

    def send(self, sender: ServerState, kind: str, view: int, digest: bytes, recipients, payload=None):
        msg = sign(ConsensusMessage(kind, view, digest, sender.server_id), sender.key)
        sender.vote_log.append((kind, view, digest.hex()))
        for r in recipients:
            self.queue.append((r, msg, payload))

    def drain(self) -> None:
        while self.queue:
            if self.rng is None:
                r, msg, payload = self.queue.popleft()
            else:
                idx = int(self.rng.integers(len(self.queue)))
                self.queue.rotate(-idx)
                r, msg, payload = self.queue.popleft()
                self.queue.rotate(idx)
            self.tick += 1
            if self.trace is not None:
                self.trace.append(
                    {
                        "kind": msg.kind,
                        "view": msg.view,
                        "sender": msg.sender,
                        "recipient": r,
                        "digest": msg.payload_digest.hex(),
                        "delivered_at": self.tick,
                    }
                )
            receive(self.servers[r], msg, payload, self)


def _own_result(server: ServerState, cfg: ConsensusConfig):
    if server.own is None and server.store:
        stats = stats_from_protosets(server.store)
        report, protos = filtered_global(server.store, stats, cfg.psi, cfg.mode)
        server.own = (report, protos, proposal_digest(protos, report.filtered))
    return server.own


def _vote(server: ServerState, bus: _Bus, kind: str, digest: bytes) -> None:
    if server.honest:
        bus.send(server, kind, server.view, digest, server.peers)
        return
    votes = adversary.apply_server_behavior(server, "vote", digest)
    for recipient, d in votes.items():
        bus.send(server, kind, server.view, d, [recipient])


def receive(server: ServerState, msg: ConsensusMessage, payload, bus: _Bus) -> str:
    """Handle one delivered message; returns what happened to it."""
    if not server.responding():
        return "ignored-crashed"
    if not verify_auth(msg, server.keys):
        server.log(f"reject {msg.kind} from {msg.sender}: bad auth tag")
        return "auth-failed"
    if msg.kind == VIEW_CHANGE:
        voters = server.view_votes.setdefault(msg.view, set())
        voters.add(msg.sender)
        if msg.view > server.view and len(voters) >= bus.cfg.quorum:
            server.view = msg.view
            server.log(f"enter view {msg.view}")
        return "accepted"
    if msg.view != server.view:
        server.log(f"reject {msg.kind} from {msg.sender}: view {msg.view} is not current")
        return "stale-view"

    key = (msg.view, msg.payload_digest)
    if msg.kind == PROPOSAL:
        if msg.sender != msg.view % len(server.peers):
            server.log(f"reject proposal from non-leader {msg.sender}")
            return "not-leader"
        if payload is None or proposal_digest(payload.protos, payload.filtered) != msg.payload_digest:
            server.log("reject proposal: digest does not match payload")
            return "bad-digest"
        server.seen_proposals[msg.payload_digest] = payload
        if msg.view in server.accepted:
            return "duplicate"
        if server.honest:
            own = _own_result(server, bus.cfg)
            if own is None:
                return "no-local-data"
            report, protos, _ = own
            if tuple(report.filtered) != tuple(payload.filtered) or not protos.allclose(
                payload.protos, bus.cfg.tolerance
            ):
                server.log(f"reject proposal from {msg.sender}: differs from local result")
                return "rejected"
        server.accepted[msg.view] = (msg.payload_digest, payload)
        server.log(f"prepare {msg.payload_digest.hex()[:12]}")
        _vote(server, bus, PREPARE, msg.payload_digest)
    elif msg.kind == PREPARE:
        server.prepares.setdefault(key, set()).add(msg.sender)
    elif msg.kind == COMMIT:
        server.commits.setdefault(key, set()).add(msg.sender)
    else:
        return "unknown-kind"
    _advance(server, bus)
    return "accepted"


def _advance(server: ServerState, bus: _Bus) -> None:
    view = server.view
    acc = server.accepted.get(view)
    if acc is not None and view not in server.committed_views:
        digest = acc[0]
        if len(server.prepares.get((view, digest), ())) >= bus.cfg.quorum:
            server.committed_views.add(view)
            server.log(f"commit {digest.hex()[:12]}")
            _vote(server, bus, COMMIT, digest)
    if server.confirmed is not None:
        return
    for (v, digest), voters in server.commits.items():
        if v != view or len(voters) < bus.cfg.quorum:
            continue
        if server.honest:
            if acc is None or acc[0] != digest:
                continue
            proposal = acc[1]
        else:
            proposal = server.seen_proposals.get(digest)
            if proposal is None:
                continue
        server.confirmed = proposal
        server.confirmed_digest = digest
        server.log(f"confirm {digest.hex()[:12]}")
        return


def _propose(leader: ServerState, bus: _Bus) -> None:
    own = _own_result(leader, bus.cfg)
    if own is None:
        leader.log("cannot propose: no client prototypes held")
        return
    report, protos, _ = own
    if leader.honest:
        sends = [(leader.peers, protos)]
    else:
        sends = adversary.apply_server_behavior(leader, "propose", protos)
    for recipients, p in sends:
        proposal = Proposal(p, tuple(report.filtered))
        digest = proposal_digest(p, proposal.filtered)
        leader.log(f"propose {digest.hex()[:12]} to {list(recipients)}")
        bus.send(leader, PROPOSAL, leader.view, digest, recipients, proposal)


def consensus_round(
    servers: list[ServerState],
    client_protosets: dict[int, PrototypeSet],
    cfg: ConsensusConfig,
    fault_plan: dict[int, adversary.ServerFault] | None = None,
    trace: list | None = None,
) -> ConsensusOutcome:
    """Agree on one global prototype set for the given client submissions.

    ``servers`` persist across rounds (views carry over). A ``fault_plan``
    replaces the faults currently attached to the servers.
    """
    if len(servers) != cfg.N:
        raise ConfigError(f"expected {cfg.N} servers, got {len(servers)}")
    if fault_plan is not None:
        for sid in fault_plan:
            if not 0 <= sid < cfg.N:
                raise ConfigError(f"fault plan names unknown server {sid}")
        for s in servers:
            s.fault = fault_plan.get(s.server_id)
    if cfg.psi >= len(client_protosets):
        raise ConfigError(f"psi={cfg.psi} must be below the number of clients ({len(client_protosets)})")

    faulty = [s.server_id for s in servers if not s.honest]
    view = max(s.view for s in servers)
    for s in servers:
        s.reset_round()
        s.view = view
        stored = {k: ps.copy() for k, ps in client_protosets.items()}
        s.store = stored if s.honest else adversary.apply_server_behavior(s, "store", stored)
    decisions = {s.server_id: s.decisions for s in servers}

    if len(faulty) > (cfg.N - 1) // 3:
        for s in servers:
            s.log(f"abort: {len(faulty)} faulty servers exceed {(cfg.N - 1) // 3}")
        return ConsensusOutcome(None, None, 0, view, {}, decisions, aborted=True, safety_risk=True)

    bus = _Bus(servers, cfg, trace)
    honest = [s for s in servers if s.honest]
    view_changes = 0
    aborted = False
    while True:
        leader = servers[view % cfg.N]
        if leader.responding():
            _propose(leader, bus)
        bus.drain()
        if all(s.confirmed is not None for s in honest):
            break
        if view_changes >= cfg.max_view_changes:
            aborted = True
            break
        # logical timeout: every live server asks to move to the next view
        for s in servers:
            if s.responding():
                bus.send(s, VIEW_CHANGE, view + 1, b"", s.peers)
        bus.drain()
        if not any(s.view == view + 1 for s in honest):
            aborted = True
            break
        view += 1
        view_changes += 1

    confirmations = {s.server_id: s.confirmed.protos for s in servers if s.confirmed is not None}
    confirmed = report = None
    for s in honest:
        if s.confirmed is not None:
            confirmed = s.confirmed.protos
            report = s.own[0] if s.own else None
            break
    if aborted:
        for s in servers:
            s.log("abort: no confirmation within the view-change budget")
    return ConsensusOutcome(
        confirmed=confirmed,
        report=report,
        view_changes=view_changes,
        final_view=view,
        confirmations=confirmations,
        decisions=decisions,
        aborted=aborted,
        trace=trace if trace is not None else [],
    )


def write_trace(trace, path, extra: dict | None = None) -> None:
    with open(path, "a") as fh:
        for rec in trace:
            fh.write(json.dumps({**(extra or {}), **rec}) + "\n")
