#!/usr/bin/env python3
"""End-to-end desk demo: small pool, short training run, explain a CSV, validate.

Usage: python scripts/run_desk_demo.py [--out DIR] [--n-tasks N] [--steps N]
Finishes in a couple of minutes on a laptop CPU.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from zeroshap import cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_run", help="working directory")
    parser.add_argument("--n-tasks", type=int, default=150)
    parser.add_argument("--steps", type=int, default=800)
    parser.add_argument("--workers", type=int, default=2)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = out / "demo.cfg"
    config.write_text(f"""\
seed = 42
output_dir = {out}
pool.path = {out / 'pool'}
pool.n_tasks = {args.n_tasks}
pool.workers = {args.workers}
explainer.train_steps = {args.steps}
explainer.restarts = 1
explainer.lr_low = 5e-5
explainer.lr_high = 1e-4
""")

    print("== generating pool ==")
    if cli.main(["generate", "--config", str(config)]) != 0:
        return 1
    print("== training explainer ==")
    if cli.main(["train", "--config", str(config)]) != 0:
        return 1

    query = out / "query.csv"
    rng = np.random.default_rng(0)
    X = rng.normal(size=(12, 4))
    pred = 1.0 / (1.0 + np.exp(-(X[:, 0] - 0.5 * X[:, 2])))
    with open(query, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "x3", "x4", "prediction"])
        for i in range(12):
            writer.writerow([repr(float(v)) for v in X[i]] + [repr(float(pred[i]))])

    print("== explaining query.csv ==")
    if cli.main(["explain", "--config", str(config), "--input", str(query),
                 "--output", str(out / "attributions.csv")]) != 0:
        return 1
    print("== validating artifacts ==")
    return cli.main(["validate", "--pool", str(out / "pool"),
                     "--checkpoint", str(out / "explainer.ckpt")])


if __name__ == "__main__":
    sys.exit(main())
