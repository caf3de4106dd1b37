#!/usr/bin/env python3
"""Convergence comparison: decomposed vs classical consensus vs gradient descent.

Generates a seeded consistent augmented system, runs all three solver modes
against the same reference solution, writes one trace CSV per mode, and prints
the MSE at a few checkpoint epochs.

Example:
    python scripts/convergence_experiment.py --n 64 --total-rows 256 \
        --num-partitions 4 --epochs 200 --out-dir results/convergence
"""

import argparse
from pathlib import Path

from apcsolve.engine import SolverParams, reference_solution, run_apc, run_dgd
from apcsolve.partition import extract_block, plan_partitions
from apcsolve.synthetic import augmented_fixture

CHECKPOINTS = (0, 1, 5, 10, 25, 50, 100, 200)


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=64, help="number of unknowns")
    p.add_argument("--total-rows", type=int, default=256, help="rows after augmentation")
    p.add_argument("--num-partitions", type=int, default=4)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--eta", type=float, default=0.9)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out-dir", type=Path, default=Path("results/convergence"))
    return p.parse_args()


def main():
    args = parse_args()
    system = augmented_fixture(n=args.n, total_rows=args.total_rows, seed=args.seed)
    x_ref, residual = reference_solution(system.a, system.b)
    print(f"system: {system.a.shape[0]}x{system.a.shape[1]}  "
          f"reference residual {residual:.3e}  seed {args.seed}")

    plan = plan_partitions(args.total_rows, args.n, args.num_partitions)
    blocks = [extract_block(system.a, system.b, plan, j)
              for j in range(args.num_partitions)]

    common = dict(num_partitions=args.num_partitions, epochs=args.epochs,
                  seed=args.seed)
    traces = {
        "decomposed": run_apc(
            blocks,
            SolverParams(eta=args.eta, gamma=args.gamma, mode="decomposed", **common),
            x_ref,
        ),
        "classical": run_apc(
            blocks,
            SolverParams(eta=args.eta, gamma=args.gamma, mode="classical", **common),
            x_ref,
        ),
        "dgd": run_dgd(blocks, SolverParams(mode="dgd", **common), x_ref),
    }

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, trace in traces.items():
        path = args.out_dir / f"trace_{name}.csv"
        trace.write_csv(path)
        print(f"wrote {path}")

    epochs = [e for e in CHECKPOINTS if e <= args.epochs]
    header = "epoch " + "".join(f"{name:>14}" for name in traces)
    print(header)
    for e in epochs:
        row = f"{e:5d} " + "".join(
            f"{traces[name].mse_values[e]:>14.3e}" for name in traces
        )
        print(row)


if __name__ == "__main__":
    main()
