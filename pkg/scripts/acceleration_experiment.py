#!/usr/bin/env python3
"""Wall-time comparison of decomposed vs classical initialization.

For each problem size, builds a seeded augmented system, runs both solver
variants end to end with the threaded backend, and reports initialization
time, total time, and the acceleration ratio (classical / decomposed).

Example:
    python scripts/acceleration_experiment.py --sizes 256,512,1024 \
        --num-partitions 2 --epochs 20
"""

import argparse
import time

from apcsolve.engine import SolverParams, reference_solution
from apcsolve.runtime import BackendConfig, scheduler_run
from apcsolve.synthetic import augmented_fixture


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=lambda s: [int(t) for t in s.split(",")],
                   default=[256, 512, 1024],
                   help="comma-separated unknown counts; rows = 4x each")
    p.add_argument("--num-partitions", type=int, default=2)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--eta", type=float, default=0.9)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=41)
    return p.parse_args()


def run_variant(system, x_ref, mode, args):
    params = SolverParams(eta=args.eta, gamma=args.gamma, mode=mode,
                          num_partitions=args.num_partitions,
                          epochs=args.epochs, seed=args.seed)
    start = time.perf_counter()
    trace = scheduler_run(system.a, system.b, params, BackendConfig(), x_ref)
    wall = time.perf_counter() - start
    return trace, wall


def main():
    args = parse_args()
    print(f"{'n':>6} {'rows':>6} {'cls init':>9} {'dec init':>9} "
          f"{'cls total':>10} {'dec total':>10} {'accel':>6}")
    for n in args.sizes:
        system = augmented_fixture(n=n, total_rows=4 * n, seed=args.seed)
        x_ref, _ = reference_solution(system.a, system.b)
        cls, cls_wall = run_variant(system, x_ref, "classical", args)
        dec, dec_wall = run_variant(system, x_ref, "decomposed", args)
        accel = cls_wall / dec_wall
        print(f"{n:>6} {4 * n:>6} {cls.init_seconds:>9.3f} {dec.init_seconds:>9.3f} "
              f"{cls_wall:>10.3f} {dec_wall:>10.3f} {accel:>6.2f}")
        gap = max(abs(a - b) for a, b in zip(cls.mse_values, dec.mse_values))
        if gap > 1e-6:
            print(f"    warning: variant traces diverge (max gap {gap:.2e})")


if __name__ == "__main__":
    main()
