"""Regenerate src/pdmpctl/data/pinned_oracles.json.

Run from the repository root:  python bench/pin_oracles.py [--jobs N]
"""
import argparse
import os

from pdmpctl import config, io
from pdmpctl.benchmarks import oracle_average, oracle_discounted

HERE = os.path.dirname(os.path.abspath(__file__))
TARGET = os.path.join(HERE, "..", "src", "pdmpctl", "data", "pinned_oracles.json")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    cfg = config.loads(config.builtin_text("A"))
    avg = oracle_average("A", horizon=100.0, reps=8, seed=0, jobs=args.jobs)
    disc = oracle_discounted("A", [0.7], 0.5, reps=32, seed=0, jobs=args.jobs)
    data = {
        "A": {
            "config_digest": cfg.digest(),
            "average": dict(avg.as_dict(), horizon=100.0, reps=8),
            "discounted": dict(disc.as_dict(), alpha=0.5, x0=[0.7], reps=32),
        }
    }
    io.write_json(TARGET, data)
    print(io.dumps(data))


if __name__ == "__main__":
    main()
