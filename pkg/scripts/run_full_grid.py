#!/usr/bin/env python3
"""End-to-end experiment: generate the corpus, run the 3x3x3 grid against
the toy victim, and render the report tables.

Usage: python scripts/run_full_grid.py [workdir] [--iterations N] [--seed S]
Expect roughly 15-30 minutes single-threaded at the default N=300.
"""

import argparse
import json
import sys
from pathlib import Path

from skelattack.cli_report import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("workdir", nargs="?", default="runs/full_grid")
    ap.add_argument("--iterations", type=int, default=300)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--n-images", type=int, default=40)
    args = ap.parse_args()

    work = Path(args.workdir)
    data = work / "data"
    out = work / "out"
    work.mkdir(parents=True, exist_ok=True)

    rc = cli_main(["gen-dataset", "--n", str(args.n_images),
                   "--seed", str(args.seed), "--out", str(data)])
    if rc != 0:
        return rc

    config = {
        "dataset": str(data),
        "output_dir": str(out),
        "seed": args.seed,
        "iterations": args.iterations,
        "threshold": 128,
        "perturb": {"model": "toggle"},
        "oracle": {"kind": "toy", "query_budget": 10_000_000},
        "grid": {
            "modes": ["full", "character", "skeleton"],
            "budgets": [15, 20, 25],
            "optimizers": ["random", "cmaes", "tpe"],
        },
    }
    cfg_path = work / "config.json"
    cfg_path.write_text(json.dumps(config, indent=2) + "\n")

    rc = cli_main(["attack", "--config", str(cfg_path)])
    if rc not in (0, 4):
        return rc

    return cli_main(["report", "--traces", str(out / "traces")])


if __name__ == "__main__":
    sys.exit(main())
