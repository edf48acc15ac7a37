"""Federated vs local-only training over several seeds with the default data.

Writes round trends, deviation trends and the test-reward table to --out.
A full 3-seed run takes roughly 20 minutes on one core.

    python3 scripts/compare_federated_local.py --seeds 1,2,3 --out results/comparison
"""

import argparse
import csv
import sys
from pathlib import Path

from fedmmg.config import MmgConfig, load_config
from fedmmg.evaluation import MODES
from fedmmg.experiments import compare
from fedmmg.scenario import default_scenario, load_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", default="1,2,3")
    ap.add_argument("--config")
    ap.add_argument("--scenario", default="default")
    ap.add_argument("--out", default="results/comparison")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else MmgConfig()
    scenario = default_scenario() if args.scenario == "default" else load_scenario(args.scenario)
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cmp = compare(cfg, scenario, seeds, progress=lambda m: print(m, file=sys.stderr, flush=True))

    with open(out / "round_trends.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("seed", "mg", "round1_eval_mean", "last_round_eval_mean", "improved"))
        for t in cmp.round_trends():
            for j, (a, b) in enumerate(zip(t.first, t.last)):
                w.writerow((t.seed, j + 1, repr(a), repr(b), int(b >= a)))

    with open(out / "deviation_trends.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("seed", "mg", "epoch1_abs_dev", "final_abs_dev", "ratio"))
        for t in cmp.deviation_trends(range(cfg.n_mg)):
            w.writerow((t.seed, t.mg + 1, repr(t.first), repr(t.last), repr(t.ratio)))

    with open(out / "test_rewards.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("mode", "mg", "federated", "local_only", "federated_wins"))
        for mode in MODES:
            fed, loc = cmp.mean_test_reward(mode)
            for j in range(cfg.n_mg):
                w.writerow((mode, j + 1, repr(float(fed[j])), repr(float(loc[j])), int(fed[j] >= loc[j])))

    for mode in MODES:
        fed, loc = cmp.mean_test_reward(mode)
        print(f"{mode:>18}: federated {fed.round(1).tolist()}  local-only {loc.round(1).tolist()}"
              f"  wins {cmp.federated_wins(mode)}/{cfg.n_mg}")
    print(f"total {cmp.seconds:.0f} s, results in {out}")


if __name__ == "__main__":
    main()
