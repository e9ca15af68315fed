"""Command-line entry point: ``protobft run | security-prob | partition-stats``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import data
from .config import load_config
from .errors import ProtoBFTError
from .experiment import build_shards, run_experiment, sweep_security, write_outputs

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ALL_ABORTED = 3


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protobft", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a federated training run")
    run.add_argument("--config", required=True)
    run.add_argument("--no-softpool", action="store_true", help="transmit unpooled prototypes")
    run.add_argument("--psi", type=int, help="override the number of filtered clients per round")
    run.add_argument("--out", help="output directory (defaults to output_dir from the config)")

    sec = sub.add_parser("security-prob", help="tabulate the consensus security probability")
    sec.add_argument("--n-min", type=int, required=True)
    sec.add_argument("--n-max", type=int, required=True)
    sec.add_argument("--pm", type=_float_list, required=True, help="comma-separated fault probabilities")
    sec.add_argument("--out", required=True)

    part = sub.add_parser("partition-stats", help="summarise the non-IID client partition")
    part.add_argument("--config", required=True)
    part.add_argument("--dump", help="also write the partitioned dataset to this CSV file")
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.no_softpool:
        overrides["softpool"] = False
    if args.psi is not None:
        overrides["psi"] = args.psi
    if args.out:
        overrides["output_dir"] = args.out
    cfg = cfg.replace(**overrides)
    cfg.validate()
    result = run_experiment(cfg)
    out = write_outputs(result, cfg.output_dir)
    if result.records:
        print(f"final mean accuracy {result.final_accuracy:.4f} after {len(result.records)} rounds")
    print(f"outputs written to {out}")
    if result.all_aborted:
        print("consensus aborted in every round", file=sys.stderr)
        return EXIT_ALL_ABORTED
    return EXIT_OK


def _cmd_security(args) -> int:
    if args.n_min > args.n_max:
        raise ProtoBFTError("--n-min exceeds --n-max")
    rows = sweep_security(range(args.n_min, args.n_max + 1), args.pm)
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "p_m", "probability"])
        for n, p, prob in rows:
            w.writerow([n, format(p, ".17g"), format(prob, ".17g")])
    print(f"{len(rows)} rows written to {path}")
    return EXIT_OK


def _cmd_partition(args) -> int:
    cfg = load_config(args.config)
    shards = build_shards(cfg)
    stats = data.shard_stats(shards)
    print("client,classes,train,test")
    for s in shards:
        print(f"{s.client_id},{' '.join(map(str, s.classes))},{len(s.train_y)},{len(s.test_y)}")
    print(f"mean classes per client: {stats.mean_classes:.4f}")
    print(f"std classes per client: {stats.std_classes:.4f}")
    for j in sorted(stats.holders):
        print(f"class {j}: {len(stats.holders[j])} holders, {stats.class_totals[j]} samples")
    if args.dump:
        data.dump_shards_csv(shards, args.dump)
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "security-prob": _cmd_security, "partition-stats": _cmd_partition}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ProtoBFTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
