"""Distributed projection-consensus solver for consistent linear systems."""

from .engine import (
    MODE_CLASSICAL,
    MODE_DECOMPOSED,
    MODE_DGD,
    ConvergenceTrace,
    DivergenceError,
    SolverParams,
    reference_solution,
    run_apc,
    run_dgd,
)
from .mmio import (
    SparseMatrixCSR,
    parse_matrix_market,
    read_matrix_market,
    write_matrix_market,
    write_matrix_market_file,
)
from .partition import augment_system, plan_partitions, stack_augmented
from .runtime import BackendConfig, scheduler_run, start_worker_process, worker_serve
from .synthetic import augmented_fixture, random_sparse_system

__version__ = "0.1.0"

__all__ = [
    "MODE_CLASSICAL",
    "MODE_DECOMPOSED",
    "MODE_DGD",
    "ConvergenceTrace",
    "DivergenceError",
    "SolverParams",
    "SparseMatrixCSR",
    "BackendConfig",
    "augment_system",
    "augmented_fixture",
    "parse_matrix_market",
    "plan_partitions",
    "random_sparse_system",
    "read_matrix_market",
    "reference_solution",
    "run_apc",
    "run_dgd",
    "scheduler_run",
    "stack_augmented",
    "start_worker_process",
    "worker_serve",
    "write_matrix_market",
    "write_matrix_market_file",
    "__version__",
]
