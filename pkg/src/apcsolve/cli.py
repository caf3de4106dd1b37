"""Command-line front end: solve, augment, bench.

Exit codes: 0 success, 2 usage (argparse), 3 input file problems,
4 numerical/infeasibility errors, 5 runtime/protocol failures.  Errors print
a single diagnostic line to stderr.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .engine import (
    MODE_CLASSICAL,
    MODE_DECOMPOSED,
    MODE_DGD,
    DivergenceError,
    SolverParams,
    reference_solution,
)
from .linalg import ShapeError, SingularMatrixError, SingularPivotError
from .mmio import (
    MatrixMarketError,
    SparseMatrixCSR,
    as_dense_vector,
    read_matrix_market,
    write_matrix_market_file,
)
from .partition import (
    InfeasiblePartitionError,
    augment_system,
    plan_partitions,
    stack_augmented,
)
from .protocol import FrameError
from .runtime import (
    BACKEND_LOCAL_THREADS,
    BACKEND_SOCKETS,
    BackendConfig,
    ProtocolError,
    scheduler_run,
)

__all__ = ["build_parser", "main", "main_entry"]

_BACKEND_CHOICES = {"local": BACKEND_LOCAL_THREADS, "sockets": BACKEND_SOCKETS}


def _add_system_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--coefficient-matrix-path",
        required=True,
        help="Matrix Market coordinate file holding A",
    )
    parser.add_argument(
        "--constant-terms-vector-path",
        required=True,
        help="Matrix Market file holding b (array vector or Nx1 coordinate)",
    )


def _add_iteration_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--number-of-partitions",
        type=int,
        default=1,
        help="row blocks / workers (default %(default)s)",
    )
    parser.add_argument(
        "--epochs", type=int, default=100, help="consensus rounds (default %(default)s)"
    )
    parser.add_argument(
        "--eta", type=float, default=0.9, help="consensus relaxation in (0, 1]"
    )
    parser.add_argument(
        "--gamma", type=float, default=0.9, help="projection step in (0, 1]"
    )
    parser.add_argument("--seed", type=int, default=0, help="generator seed")


def _add_backend_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--backend",
        choices=sorted(_BACKEND_CHOICES),
        default="local",
        help="where partitions execute (default %(default)s)",
    )
    parser.add_argument(
        "--worker-endpoints",
        default="",
        help="comma-separated host:port list, one per partition (sockets backend)",
    )
    parser.add_argument(
        "--epoch-timeout",
        type=float,
        default=60.0,
        help="seconds to wait for a worker's epoch update (default %(default)s)",
    )
    parser.add_argument(
        "--spool-threshold-bytes",
        type=int,
        default=None,
        help="ship partitions via files above this inline payload size",
    )
    parser.add_argument(
        "--keep-workers",
        action="store_true",
        help="do not send SHUTDOWN to socket workers when the run finishes",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="apcsolve",
        description="Distributed projection-consensus solver for consistent linear systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run the solver and write trace + solution")
    _add_system_arguments(solve)
    _add_iteration_arguments(solve)
    _add_backend_arguments(solve)
    solve.add_argument(
        "--mode",
        choices=[MODE_DECOMPOSED, MODE_CLASSICAL, MODE_DGD],
        default=MODE_DECOMPOSED,
        help="initialization variant or gradient-descent baseline",
    )
    solve.add_argument(
        "--dgd-step",
        type=float,
        default=None,
        help="gradient step size (default: 1/lambda_max estimated by power iteration)",
    )
    solve.add_argument(
        "--x-ref-path",
        default=None,
        help="reference solution file; omitted = solve once by QR for the trace MSE",
    )
    solve.add_argument(
        "--output-csv", default="trace.csv", help="per-epoch trace (default %(default)s)"
    )
    solve.add_argument(
        "--output-solution",
        default="solution.mtx",
        help="final consensus vector (default %(default)s)",
    )
    solve.set_defaults(handler=_cmd_solve)

    augment = sub.add_parser(
        "augment", help="stack seeded row combinations onto a square system"
    )
    _add_system_arguments(augment)
    augment.add_argument(
        "--extra-rows", type=int, required=True, help="rows to append"
    )
    augment.add_argument("--seed", type=int, default=0, help="generator seed")
    augment.add_argument("--output-matrix-path", required=True)
    augment.add_argument("--output-rhs-path", required=True)
    augment.set_defaults(handler=_cmd_augment)

    bench = sub.add_parser(
        "bench", help="time classical vs decomposed initialization on one system"
    )
    _add_system_arguments(bench)
    _add_iteration_arguments(bench)
    _add_backend_arguments(bench)
    bench.add_argument(
        "--output-csv-prefix",
        default="bench",
        help="writes PREFIX.classical.csv and PREFIX.decomposed.csv",
    )
    bench.set_defaults(handler=_cmd_bench)

    return parser


def _load_system(args) -> tuple[SparseMatrixCSR, np.ndarray]:
    a = read_matrix_market(args.coefficient_matrix_path)
    if not isinstance(a, SparseMatrixCSR):
        raise MatrixMarketError(
            f"{args.coefficient_matrix_path}: expected a coordinate matrix, got a vector"
        )
    b = as_dense_vector(read_matrix_market(args.constant_terms_vector_path))
    if b.shape != (a.nrows,):
        raise ShapeError(
            f"rhs length {b.shape[0]} does not match matrix rows {a.nrows}"
        )
    return a, b


def _backend_config(args, num_partitions: int) -> BackendConfig:
    kind = _BACKEND_CHOICES[args.backend]
    endpoints: tuple[str, ...] = ()
    if kind == BACKEND_SOCKETS:
        endpoints = tuple(e.strip() for e in args.worker_endpoints.split(",") if e.strip())
        if len(endpoints) != num_partitions:
            raise ProtocolError(
                f"--worker-endpoints must list exactly {num_partitions} endpoints, "
                f"got {len(endpoints)}"
            )
    return BackendConfig(
        kind=kind,
        worker_endpoints=endpoints,
        epoch_timeout=args.epoch_timeout,
        spool_threshold_bytes=args.spool_threshold_bytes,
        spool_dir=None,
        shutdown_at_end=not args.keep_workers,
    )


def _cmd_solve(args) -> int:
    a, b = _load_system(args)
    params = SolverParams(
        eta=args.eta,
        gamma=args.gamma,
        num_partitions=args.number_of_partitions,
        epochs=args.epochs,
        mode=args.mode,
        dgd_step=args.dgd_step,
        seed=args.seed,
    )
    backend = _backend_config(args, params.num_partitions)
    plan_partitions(a.nrows, a.ncols, params.num_partitions)  # fail fast on geometry

    if args.x_ref_path is not None:
        x_ref = as_dense_vector(read_matrix_market(args.x_ref_path))
        if x_ref.shape != (a.ncols,):
            raise ShapeError(
                f"reference length {x_ref.shape[0]} does not match {a.ncols} columns"
            )
    else:
        x_ref, residual = reference_solution(a, b)
        print(f"reference solved by QR: max |Ax-b| = {residual:.3e}")
    trace = scheduler_run(a, b, params, backend, x_ref)
    trace.write_csv(args.output_csv)
    write_matrix_market_file(args.output_solution, trace.final_x)
    print(
        f"mode={params.mode} partitions={params.num_partitions} epochs={params.epochs} "
        f"final_mse={trace.records[-1].mse:.17g} "
        f"init_seconds={trace.init_seconds:.3f} "
        f"iterate_seconds={trace.records[-1].elapsed_seconds:.3f}"
    )
    print(f"wrote {args.output_csv} and {args.output_solution}")
    return 0


def _cmd_augment(args) -> int:
    a, b = _load_system(args)
    aug = augment_system(a, b, extra_rows=args.extra_rows, seed=args.seed)
    a_full, b_full = stack_augmented(a, b, aug)
    write_matrix_market_file(args.output_matrix_path, a_full)
    write_matrix_market_file(args.output_rhs_path, b_full)
    print(
        f"augmented {a.nrows}x{a.ncols} -> {a_full.nrows}x{a_full.ncols} "
        f"(seed {args.seed}); wrote {args.output_matrix_path} and {args.output_rhs_path}"
    )
    return 0


def _cmd_bench(args) -> int:
    a, b = _load_system(args)
    plan_partitions(a.nrows, a.ncols, args.number_of_partitions)  # fail fast on geometry
    x_ref, residual = reference_solution(a, b)
    print(f"reference solved by QR: max |Ax-b| = {residual:.3e}")

    totals = {}
    for mode in (MODE_CLASSICAL, MODE_DECOMPOSED):
        params = SolverParams(
            eta=args.eta,
            gamma=args.gamma,
            num_partitions=args.number_of_partitions,
            epochs=args.epochs,
            mode=mode,
            seed=args.seed,
        )
        backend = _backend_config(args, params.num_partitions)
        backend.shutdown_at_end = False  # keep workers alive between the two phases
        trace = scheduler_run(a, b, params, backend, x_ref)
        out_path = f"{args.output_csv_prefix}.{mode}.csv"
        trace.write_csv(out_path)
        totals[mode] = trace.total_seconds
        print(
            f"{mode}: init_seconds={trace.init_seconds:.3f} "
            f"iterate_seconds={trace.records[-1].elapsed_seconds:.3f} "
            f"final_mse={trace.records[-1].mse:.3e} -> {out_path}"
        )
    acceleration = (
        totals[MODE_CLASSICAL] / totals[MODE_DECOMPOSED]
        if totals[MODE_DECOMPOSED] > 0
        else float("inf")
    )
    print(
        f"bench: shape={a.nrows}x{a.ncols} partitions={args.number_of_partitions} "
        f"epochs={args.epochs} classical_seconds={totals[MODE_CLASSICAL]:.3f} "
        f"decomposed_seconds={totals[MODE_DECOMPOSED]:.3f} "
        f"acceleration={acceleration:.2f}"
    )
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (MatrixMarketError, FileNotFoundError, IsADirectoryError) as exc:
        return _fail(exc, 3)
    except (FrameError, ProtocolError) as exc:
        return _fail(exc, 5)
    except (
        ShapeError,
        SingularPivotError,
        SingularMatrixError,
        InfeasiblePartitionError,
        DivergenceError,
        ValueError,
    ) as exc:
        return _fail(exc, 4)
    except OSError as exc:
        return _fail(exc, 5)


def _fail(exc: BaseException, code: int) -> int:
    message = str(exc).replace("\n", " ")
    print(f"apcsolve: error: {message}", file=sys.stderr)
    return code


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
