"""Round loop: local training, prototype upload, poisoning, server consensus.

Randomness is split into independent substreams with
``numpy.random.SeedSequence([seed, purpose, *ids])``, so a client's draws in a
round depend only on (seed, client id, round) and never on scheduling. Purpose
tags are the ``STREAM_*`` constants below.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import adversary, client, data, numeric
from .analysis import SecurityQuery, security_probability
from .client import PrototypeSet, TrainingConfig
from .config import ExperimentConfig, config_echo
from .consensus import ConsensusConfig, consensus_round, make_servers, write_trace
from .softpool import KernelSpec

log = logging.getLogger(__name__)

STREAM_DATA = 1
STREAM_PARTITION = 2
STREAM_INIT = 3
STREAM_TRAIN = 4
STREAM_POISON = 5
STREAM_MALICIOUS = 6

ROUNDS_HEADER = ["round", "mean_acc", "std_acc", "global_obj", "proto_loss", "filtered",
                 "view_changes", "confirmed"]


def substream(seed: int, purpose: int, *ids: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, purpose, *ids])


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class RoundRecord:
    round: int
    mean_acc: float
    std_acc: float
    global_obj: float
    proto_loss: float
    filtered: tuple[int, ...]
    view_changes: int
    confirmed: bool

    def row(self) -> list[str]:
        return [
            str(self.round),
            format(self.mean_acc, ".17g"),
            format(self.std_acc, ".17g"),
            format(self.global_obj, ".17g"),
            format(self.proto_loss, ".17g"),
            ";".join(str(k) for k in self.filtered),
            str(self.view_changes),
            "true" if self.confirmed else "false",
        ]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[RoundRecord]
    clients: list[client.ClientState]
    malicious: tuple[int, ...]
    uploads: dict[int, PrototypeSet] = field(default_factory=dict)  # last round, before poisoning
    transmitted: dict[int, PrototypeSet] = field(default_factory=dict)  # last round, as sent
    global_protos: PrototypeSet | None = None
    trace: list[dict] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].mean_acc if self.records else float("nan")

    @property
    def all_aborted(self) -> bool:
        return bool(self.records) and not any(r.confirmed for r in self.records)


def kernel_spec(cfg: ExperimentConfig) -> KernelSpec | None:
    return KernelSpec(cfg.k_hat, cfg.stride) if cfg.softpool else None


def build_shards(cfg: ExperimentConfig) -> list[data.ClientShard]:
    # enough samples per class that no pool runs dry even if every client draws it
    ds = data.generate_synthetic(
        cfg.J,
        cfg.input_dim,
        cfg.K * cfg.samples_per_class,
        cfg.spread,
        _seed_int(substream(cfg.seed, STREAM_DATA)),
        cfg.min_separation,
    )
    spec = data.PartitionSpec(cfg.avg, cfg.std, cfg.samples_per_class)
    return data.partition_non_iid(ds, cfg.K, spec, _seed_int(substream(cfg.seed, STREAM_PARTITION)))


def pick_malicious(cfg: ExperimentConfig) -> tuple[int, ...]:
    if cfg.zeta == 0:
        return ()
    rng = np.random.default_rng(substream(cfg.seed, STREAM_MALICIOUS))
    return tuple(sorted(int(k) for k in rng.choice(cfg.K, size=cfg.zeta, replace=False)))


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    cfg.validate()
    spec = kernel_spec(cfg)
    shards = build_shards(cfg)
    # all clients start from one shared initialisation so early prototypes are comparable
    init = numeric.init_params(
        cfg.input_dim, (cfg.proto_rows, cfg.proto_cols), cfg.J,
        np.random.default_rng(substream(cfg.seed, STREAM_INIT)),
    )
    malicious = pick_malicious(cfg)
    states = [
        client.ClientState(s.client_id, s, init.copy(), honest=s.client_id not in malicious)
        for s in shards
    ]
    train_cfg = TrainingConfig(cfg.eta, cfg.lam, cfg.E, cfg.batch_size)
    ccfg = ConsensusConfig(N=cfg.N, psi=cfg.psi, mode=cfg.aggregation_mode)
    servers = make_servers(ccfg, adversary.parse_server_plan(cfg.byz_server_plan), cfg.seed)
    honest_ids = [s.client_id for s in states if s.honest]

    result = ExperimentResult(cfg, [], states, malicious)
    global_protos: PrototypeSet | None = None
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for t in range(cfg.rounds):
            def train(state, t=t, g=global_protos):
                return client.local_round(state, g, train_cfg, spec, substream(cfg.seed, STREAM_TRAIN, state.client_id, t))

            states = list(pool.map(train, states)) if pool else [train(s) for s in states]
            uploads = {s.client_id: client.prototype_average(s, spec) for s in states}

            transmitted = dict(uploads)
            if malicious:
                eps = cfg.attack_eps_multiplier * adversary.honest_spread(uploads, honest_ids)
                for k in malicious:
                    transmitted[k] = adversary.poison(uploads[k], eps, substream(cfg.seed, STREAM_POISON, k, t))

            trace = [] if cfg.trace else None
            outcome = consensus_round(servers, transmitted, ccfg, trace=trace)
            if trace:
                result.trace.extend({"round": t, **rec} for rec in trace)
            if outcome.confirmed is not None:
                global_protos = outcome.confirmed
            else:
                log.warning("round %d: consensus aborted, keeping previous global prototypes", t)

            accs = np.array([client.evaluate(s) for s in states])
            objs = [client.objective(s, global_protos, spec) for s in states]
            ce = np.array([o[0] for o in objs])
            dist = np.array([o[1] for o in objs])
            result.records.append(
                RoundRecord(
                    round=t,
                    mean_acc=float(accs.mean()),
                    std_acc=float(accs.std()),
                    global_obj=float(np.mean(ce + cfg.lam * dist)),
                    proto_loss=float(dist.mean()),
                    filtered=outcome.filtered if outcome.confirmed is not None else (),
                    view_changes=outcome.view_changes,
                    confirmed=outcome.confirmed is not None,
                )
            )
            result.uploads, result.transmitted = uploads, transmitted
            log.info("round %d: acc=%.4f obj=%.4f", t, accs.mean(), result.records[-1].global_obj)
    finally:
        if pool:
            pool.shutdown()
    result.clients = states
    result.global_protos = global_protos
    return result


def write_outputs(result: ExperimentResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo.txt").write_text(config_echo(result.config))
    with open(out / "rounds.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROUNDS_HEADER)
        for r in result.records:
            w.writerow(r.row())
    with open(out / "prototypes_final.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        width = max((p.size for ps in result.transmitted.values() for p in ps.protos.values()), default=0)
        w.writerow(["client_id", "class"] + [f"v{i}" for i in range(width)])
        for k in sorted(result.transmitted):
            ps = result.transmitted[k]
            for j in ps.classes:
                w.writerow([k, j] + [format(v, ".17g") for v in ps.protos[j]])
    if result.config.trace:
        path = out / "trace.jsonl"
        path.unlink(missing_ok=True)
        write_trace(result.trace, path)
    return out


def sweep_security(n_range, p_m_list) -> list[tuple[int, float, float]]:
    n_range, p_m_list = list(n_range), list(p_m_list)
    if not n_range or not p_m_list:
        raise ValueError("empty sweep")
    return [(n, p, security_probability(SecurityQuery(n, p))) for n in n_range for p in p_m_list]
