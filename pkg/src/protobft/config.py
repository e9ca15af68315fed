"""Experiment configuration: flat ``key = value`` files with a documented default per field."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .adversary import parse_server_plan
from .aggregation import MODES
from .errors import ConfigError

ALIASES = {"lambda": "lam", "T": "rounds", "k": "k_hat"}


@dataclass
class ExperimentConfig:
    seed: int = 0
    # data
    K: int = 20  # clients
    J: int = 10  # classes
    input_dim: int = 16
    spread: float = 1.0  # per-coordinate std of each class blob
    min_separation: float = 4.0  # closest class means, in units of spread
    avg: int = 3
    std: int = 2
    samples_per_class: int = 10
    # model and pooling
    proto_rows: int = 4
    proto_cols: int = 4
    softpool: bool = True
    k_hat: int = 2
    stride: int = 2
    # training
    rounds: int = 30
    E: int = 20
    eta: float = 0.01
    lam: float = 1.0
    batch_size: int = 8
    # servers and adversaries
    N: int = 4
    psi: int = 0
    zeta: int = 0
    attack_eps_multiplier: float = 10.0
    byz_server_plan: str = ""
    aggregation_mode: str = "normalized"
    # execution and output
    workers: int = 1
    trace: bool = False
    output_dir: str = "runs/default"

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        positive = ("K", "J", "input_dim", "samples_per_class", "proto_rows", "proto_cols",
                    "k_hat", "stride", "E", "batch_size", "N", "workers")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.J < 2 or self.input_dim < 2:
            raise ConfigError("need J >= 2 and input_dim >= 2")
        if not 0 <= self.psi < self.K:
            raise ConfigError(f"psi must lie in [0, {self.K - 1}]")
        if not 0 <= self.zeta <= self.K:
            raise ConfigError(f"zeta must lie in [0, {self.K}]")
        if not 1 <= self.avg <= self.J or self.std < 0:
            raise ConfigError("avg must lie in [1, J] and std must be >= 0")
        if self.eta < 0 or self.lam < 0 or self.spread < 0 or self.attack_eps_multiplier < 0:
            raise ConfigError("eta, lam, spread and attack_eps_multiplier must be >= 0")
        if self.aggregation_mode not in MODES:
            raise ConfigError(f"aggregation_mode must be one of {MODES}")
        if self.softpool and self.k_hat > min(self.proto_rows, self.proto_cols):
            raise ConfigError("pooling kernel larger than the prototype map")
        plan = parse_server_plan(self.byz_server_plan)
        if any(not 0 <= sid < self.N for sid in plan):
            raise ConfigError("byz_server_plan names a server outside [0, N)")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _coerce(name: str, typ, raw: str):
    raw = raw.strip()
    try:
        if typ in ("bool", bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ}") from None


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values = dataclasses.asdict(base) if base else {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = ALIASES.get(key, key)
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, types[key], raw)
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)


def config_echo(cfg: ExperimentConfig) -> str:
    lines = [f"{f.name} = {_fmt(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)
