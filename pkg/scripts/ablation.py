"""Final test accuracy of fedaux, fedaux_hard, fedavg and local training on
the SBM fixture, mean and std over seeds.

    python3 scripts/ablation.py --seeds 0,1,2 --out results/ablation
"""
import argparse
import json
from pathlib import Path

from apvfl.config import FederationConfig
from apvfl.orchestrator import run_seeds

MODES = ("fedaux", "fedaux_hard", "fedavg", "local")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--rounds", type=int, default=50)
    ap.add_argument("--modes", default=",".join(MODES))
    ap.add_argument("--out", default="results/ablation")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    table = {}
    for mode in args.modes.split(","):
        doc = run_seeds(FederationConfig(mode=mode, rounds=args.rounds), seeds, out / mode)
        table[mode] = doc
        print(f"{mode:12s} {100 * doc['mean']:.2f} +- {100 * doc['std']:.2f}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(table, indent=2))


if __name__ == "__main__":
    main()
