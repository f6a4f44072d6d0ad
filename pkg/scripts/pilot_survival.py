"""Pilot run fixing the survival threshold at 75 % loss.

Runs the shipped loss-sweep scenario at loss rate 0.75 on a seed range that
the acceptance suite never uses and stores the lower end of the 95 % Wilson
score interval of the survival fraction.

    python3 scripts/pilot_survival.py [--trials 400]
"""

import argparse
import json
from pathlib import Path

import numpy as np

from wcps.config import build_scenario, load_config
from wcps.sim import run_sweep

ROOT = Path(__file__).resolve().parent.parent
PILOT_SEED = 900_000
LOSS = 0.75
Z95 = 1.959963984540054


def wilson_lower(successes: int, n: int, z: float = Z95) -> float:
    p = successes / n
    centre = p + z * z / (2 * n)
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return float((centre - half) / (1 + z * z / n))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=400)
    args = ap.parse_args()
    cfg = load_config(ROOT / "configs" / "loss_sweep.ini")
    sc = build_scenario(cfg, seed=PILOT_SEED, trials=args.trials)
    res = run_sweep(sc, "loss_rate", [LOSS])
    survived = sum(r["survived"] for r in res.rows)
    record = {
        "config": "configs/loss_sweep.ini",
        "loss_rate": LOSS,
        "pilot_seeds": [PILOT_SEED, PILOT_SEED + args.trials - 1],
        "trials": args.trials,
        "survived": survived,
        "survival_fraction": survived / args.trials,
        "threshold_wilson95_lower": wilson_lower(survived, args.trials),
    }
    out = ROOT / "tests" / "fixtures" / "loss75_survival.json"
    out.write_text(json.dumps(record, indent=2) + "\n")
    print(json.dumps(record, indent=2))


if __name__ == "__main__":
    main()
