"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.
Config precedence: defaults < ``--preset`` < ``--config`` file < flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import graphdata as gd
from .config import ConfigError, load_config
from .metrics import xi
from .numerics import make_rng
from .orchestrator import run_federation, run_seeds
from .theory import run_checks

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _write_json(doc, path) -> None:
    p = Path(path)
    if p.parent != Path(""):
        p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(doc, indent=2, sort_keys=True))


def cmd_gen_sbm(args) -> int:
    cfg = gd.SbmConfig() if args.config is None else gd.SbmConfig(**json.loads(Path(args.config).read_text()))
    g, part = gd.gen_sbm(cfg, make_rng(args.seed))
    gd.save_graph(g, args.out)
    pout = args.partition_out or str(Path(args.out).with_suffix("")) + ".partition.json"
    gd.save_partition(part, pout)
    return EXIT_OK


def cmd_run(args) -> int:
    overrides = {
        "rounds": args.rounds,
        "local_steps": args.local_steps,
        "lr": args.lr,
        "mode": args.mode,
        "seed": args.seed,
        "workers": args.workers,
        "out_dir": args.out,
    }
    cfg = load_config(args.config, args.preset, overrides)
    if args.seeds:
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"--seeds: {exc}") from exc
        doc = run_seeds(cfg, seeds, args.out)
        print(f"final mean test acc {doc['mean']:.4f} +- {doc['std']:.4f} over seeds {seeds}")
        return EXIT_OK
    res = run_federation(cfg, out_dir=args.out)
    if res.halted:
        print(f"halted: {res.halted}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"final mean test acc {res.records[-1].mean_test_acc:.4f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    report = run_checks(args.check)
    _write_json(report, args.out)
    for name, v in report.items():
        if isinstance(v, dict):
            print(f"{name}: {'pass' if v['passed'] else 'FAIL'}")
    return EXIT_OK if report["passed"] else EXIT_RUNTIME


def cmd_metrics(args) -> int:
    g = gd.load_graph(args.graph)
    part = gd.load_partition(args.partition)
    if len(part.assignment) != g.n:
        raise ConfigError("partition length does not match the graph")
    rep = xi(g, part)
    _write_json(rep.to_dict(), args.out)
    print(f"jsd={rep.jsd:.4f} mmd={rep.mmd:.4f} xi={rep.xi:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="apvfl", description="APV-based personalised subgraph federated learning")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-sbm", help="write a synthetic SBM graph and its block partition")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", help="JSON object of SBM parameters")
    s.add_argument("--partition-out")
    s.set_defaults(fn=cmd_gen_sbm)

    s = sub.add_parser("run", help="run a federation")
    s.add_argument("--config")
    s.add_argument("--preset")
    s.add_argument("--out", required=True)
    s.add_argument("--seeds", help="comma-separated seeds; summary reports mean and std")
    s.add_argument("--seed", type=int)
    s.add_argument("--rounds", type=int)
    s.add_argument("--local-steps", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--mode")
    s.add_argument("--workers", type=int)
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("verify", help="numerical checks of the gradients and the theory")
    s.add_argument("--check", choices=["gradients", "oja", "sorting-limit", "all"], default="all")
    s.add_argument("--out", default="verify_report.json")
    s.set_defaults(fn=cmd_verify)

    s = sub.add_parser("metrics", help="non-IIDness of a partition")
    s.add_argument("--graph", required=True)
    s.add_argument("--partition", required=True)
    s.add_argument("--out", default="noniid_report.json")
    s.set_defaults(fn=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, gd.GraphFormatError, ValueError, TypeError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
