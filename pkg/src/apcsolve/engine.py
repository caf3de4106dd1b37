"""Projection-consensus solver core and the gradient-descent baseline.

Worker j factors its row block A_j = Q1 R once, solves for a local estimate,
and afterwards only applies the fixed projector P_j = I - Q1^T Q1 to the
consensus difference.  Two arrangements matter for exact reproducibility:

* ``consensus_update`` computes ``m + (1 - eta) * (x_bar - m)`` (m = component
  mean).  At a reached fixed point m == x_bar bitwise, so the consensus stays
  bit-stable, and eta = 1 returns the mean exactly.
* ``local_update`` computes ``x + gamma * P (x_bar - x)``.  When x_bar == x
  the correction is exactly zero and the estimate does not move.

All reductions (mean, MSE, matvec) run in ascending index order, so traces
are bit-identical across runs and backends.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .linalg import (
    ShapeError,
    SingularMatrixError,
    SingularPivotError,
    QRFactors,
    back_substitute,
    dot,
    gauss_jordan_inverse,
    householder_qr_economy,
    matmul_transpose_self,
    matvec,
    matvec_transposed,
)
from .mmio import SparseMatrixCSR, csr_row_block_dense
from .partition import PartitionBlock

__all__ = [
    "MODE_DECOMPOSED",
    "MODE_CLASSICAL",
    "MODE_DGD",
    "DivergenceError",
    "SolverParams",
    "WorkerState",
    "TraceRecord",
    "ConvergenceTrace",
    "init_worker_decomposed",
    "init_worker_classical",
    "average_initial",
    "local_update",
    "consensus_update",
    "mse",
    "reference_solution",
    "run_apc",
    "run_dgd",
]

MODE_DECOMPOSED = "decomposed"
MODE_CLASSICAL = "classical"
MODE_DGD = "dgd"
_MODES = (MODE_DECOMPOSED, MODE_CLASSICAL, MODE_DGD)


class DivergenceError(RuntimeError):
    """Gradient descent blew up; carries the step size used."""

    def __init__(self, message: str, step: float):
        super().__init__(message)
        self.step = step


@dataclass
class SolverParams:
    """Iteration hyper-parameters shared by every backend."""

    eta: float = 0.9
    gamma: float = 0.9
    num_partitions: int = 1
    epochs: int = 100
    mode: str = MODE_DECOMPOSED
    dgd_step: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.num_partitions < 1:
            raise ValueError(f"num_partitions must be >= 1, got {self.num_partitions}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.dgd_step is not None and not self.dgd_step > 0.0:
            raise ValueError(f"dgd_step must be positive, got {self.dgd_step}")


@dataclass
class WorkerState:
    """Per-partition solver state after initialization.

    ``p_max`` is the largest projector magnitude, a diagnostic: square
    full-rank blocks have P numerically zero.
    """

    j: int
    qr: QRFactors
    p: np.ndarray  # (n, n) projector I - Q1^T Q1
    x: np.ndarray  # (n,) current local estimate
    p_max: float


@dataclass
class TraceRecord:
    epoch: int
    mse: float
    elapsed_seconds: float


@dataclass
class ConvergenceTrace:
    """Per-epoch MSE trace plus the final consensus vector.

    ``elapsed_seconds`` is cumulative iteration wall time (epoch 0 = 0.0);
    initialization cost is tracked separately in ``init_seconds`` because
    wall-clock fields are the one part of a trace that cannot be bit-stable.
    """

    records: list[TraceRecord] = field(default_factory=list)
    final_x: np.ndarray | None = None
    init_seconds: float = 0.0

    @property
    def mse_values(self) -> np.ndarray:
        return np.array([r.mse for r in self.records], dtype=np.float64)

    @property
    def total_seconds(self) -> float:
        last = self.records[-1].elapsed_seconds if self.records else 0.0
        return self.init_seconds + last

    def to_csv(self) -> str:
        lines = ["epoch,mse,elapsed_seconds"]
        for r in self.records:
            lines.append(
                f"{r.epoch},{format(r.mse, '.17g')},{format(r.elapsed_seconds, '.17g')}"
            )
        lines.append("")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_csv())


@njit(cache=True, nogil=True)
def _mse(a, b):
    n = a.shape[0]
    s = 0.0
    for i in range(n):
        d = a[i] - b[i]
        s += d * d
    return s / n


def mse(x_hat, x) -> float:
    """Mean squared error, fixed ascending accumulation order."""
    x_hat = np.ascontiguousarray(x_hat, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x_hat.shape != x.shape or x_hat.ndim != 1:
        raise ValueError(f"length mismatch: {x_hat.shape} vs {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("empty vectors")
    return float(_mse(x_hat, x))


def _init_common(block: PartitionBlock) -> tuple[QRFactors, np.ndarray, np.ndarray, float]:
    try:
        factors = householder_qr_economy(block.a_block)
    except ShapeError as exc:
        raise ShapeError(f"partition {block.j}: {exc}") from None
    y = matvec_transposed(factors.q1, block.b_block)
    n = factors.r.shape[0]
    p = np.eye(n) - matmul_transpose_self(factors.q1)
    return factors, y, p, float(np.abs(p).max()) if n else 0.0


def init_worker_decomposed(block: PartitionBlock) -> WorkerState:
    """Factor the block and back-substitute R x = Q1^T b for the initial estimate."""
    factors, y, p, p_max = _init_common(block)
    try:
        x0 = back_substitute(factors.r, y)
    except SingularPivotError as exc:
        raise SingularPivotError(f"partition {block.j}: {exc}", index=exc.index) from None
    return WorkerState(j=block.j, qr=factors, p=p, x=x0, p_max=p_max)


def init_worker_classical(block: PartitionBlock) -> WorkerState:
    """Factor the block and solve via an explicit R inverse (the costly variant)."""
    factors, y, p, p_max = _init_common(block)
    try:
        r_inv = gauss_jordan_inverse(factors.r)
    except SingularMatrixError as exc:
        raise SingularMatrixError(
            f"partition {block.j}: {exc}", column=exc.column
        ) from None
    x0 = matvec(r_inv, y)
    return WorkerState(j=block.j, qr=factors, p=p, x=x0, p_max=p_max)


def average_initial(xs: list[np.ndarray]) -> np.ndarray:
    """Plain component mean over partitions, accumulated in ascending j order."""
    if not xs:
        raise ValueError("no estimates to average")
    n = xs[0].shape[0]
    acc = np.zeros(n, dtype=np.float64)
    for x in xs:
        if x.shape != (n,):
            raise ValueError(f"length mismatch: {x.shape} vs ({n},)")
        acc += x
    return acc / len(xs)


def local_update(state: WorkerState, x_bar: np.ndarray, gamma: float) -> np.ndarray:
    """One projection step: x + gamma * P (x_bar - x).  Does not mutate inputs."""
    if x_bar.shape != state.x.shape:
        raise ValueError(f"length mismatch: {x_bar.shape} vs {state.x.shape}")
    return state.x + gamma * matvec(state.p, x_bar - state.x)


def consensus_update(
    xs: list[np.ndarray], x_bar_prev: np.ndarray, eta: float
) -> np.ndarray:
    """Relaxed averaging: eta * mean + (1 - eta) * previous consensus.

    Evaluated as ``m + (1 - eta) * (x_bar_prev - m)`` so that eta = 1 returns
    the mean bitwise and a reached fixed point stays bit-stable.
    """
    m = average_initial(xs)
    if x_bar_prev.shape != m.shape:
        raise ValueError(f"length mismatch: {x_bar_prev.shape} vs {m.shape}")
    return m + (1.0 - eta) * (x_bar_prev - m)


def reference_solution(a: SparseMatrixCSR, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve the full system by one economy QR; returns (x, max-norm residual)."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (a.nrows,):
        raise ShapeError(f"rhs length {b.shape} does not match {a.nrows} rows")
    dense = csr_row_block_dense(a, 0, a.nrows)
    factors = householder_qr_economy(dense)
    x = back_substitute(factors.r, matvec_transposed(factors.q1, b))
    residual = float(np.abs(matvec(dense, x) - b).max()) if a.nrows else 0.0
    return x, residual


def _trace_mse(x: np.ndarray, x_ref: np.ndarray | None) -> float:
    return mse(x, x_ref) if x_ref is not None else float("nan")


def run_apc(
    blocks: list[PartitionBlock],
    params: SolverParams,
    x_ref: np.ndarray | None = None,
) -> ConvergenceTrace:
    """Run the consensus iteration in-process over pre-extracted blocks."""
    if params.mode == MODE_DGD:
        return run_dgd(blocks, params, x_ref)
    if len(blocks) != params.num_partitions:
        raise ValueError(
            f"got {len(blocks)} blocks for num_partitions={params.num_partitions}"
        )
    init_fn = (
        init_worker_decomposed if params.mode == MODE_DECOMPOSED else init_worker_classical
    )
    t0 = time.perf_counter()
    states = [init_fn(block) for block in blocks]
    init_seconds = time.perf_counter() - t0

    x_bar = average_initial([s.x for s in states])
    records = [TraceRecord(0, _trace_mse(x_bar, x_ref), 0.0)]
    elapsed = 0.0
    for t in range(params.epochs):
        t0 = time.perf_counter()
        new_xs = [local_update(state, x_bar, params.gamma) for state in states]
        for state, x_new in zip(states, new_xs):
            state.x = x_new
        x_bar = consensus_update(new_xs, x_bar, params.eta)
        elapsed += time.perf_counter() - t0
        records.append(TraceRecord(t + 1, _trace_mse(x_bar, x_ref), elapsed))
    return ConvergenceTrace(records=records, final_x=x_bar, init_seconds=init_seconds)


def _dgd_auto_step(blocks: list[PartitionBlock], seed: int) -> float:
    """1 / lambda_max(A^T A), lambda_max estimated by 50 power iterations."""
    n = blocks[0].a_block.shape[1]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v = v / np.sqrt(dot(v, v))
    lam = 0.0
    for _ in range(50):
        w = np.zeros(n, dtype=np.float64)
        for block in blocks:
            w += matvec_transposed(block.a_block, matvec(block.a_block, v))
        lam = np.sqrt(dot(w, w))
        if lam == 0.0:
            return 1.0  # zero operator: any step, gradient is identically zero
        v = w / lam
    return 1.0 / lam


def run_dgd(
    blocks: list[PartitionBlock],
    params: SolverParams,
    x_ref: np.ndarray | None = None,
) -> ConvergenceTrace:
    """Distributed gradient descent baseline from x = 0.

    Step size is ``params.dgd_step`` or the auto estimate 1/lambda_max(A^T A).
    Raises DivergenceError when the MSE grows past 1e6x its initial value or
    the iterate stops being finite.
    """
    if not blocks:
        raise ValueError("no blocks")
    n = blocks[0].a_block.shape[1]
    t0 = time.perf_counter()
    step = params.dgd_step if params.dgd_step is not None else _dgd_auto_step(
        blocks, params.seed
    )
    init_seconds = time.perf_counter() - t0

    x = np.zeros(n, dtype=np.float64)
    mse0 = _trace_mse(x, x_ref)
    records = [TraceRecord(0, mse0, 0.0)]
    elapsed = 0.0
    for t in range(params.epochs):
        t0 = time.perf_counter()
        grad = np.zeros(n, dtype=np.float64)
        for block in blocks:
            r = matvec(block.a_block, x) - block.b_block
            grad += matvec_transposed(block.a_block, r)
        x = x - step * grad
        elapsed += time.perf_counter() - t0
        m = _trace_mse(x, x_ref)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(
                f"gradient descent produced non-finite iterate at epoch {t + 1} "
                f"with step {step:.6g}",
                step=step,
            )
        if x_ref is not None and np.isfinite(mse0) and mse0 > 0.0 and m > 1e6 * mse0:
            raise DivergenceError(
                f"gradient descent diverging at epoch {t + 1} with step {step:.6g}: "
                f"mse {m:.3e} vs initial {mse0:.3e}",
                step=step,
            )
        records.append(TraceRecord(t + 1, m, elapsed))
    return ConvergenceTrace(records=records, final_x=x, init_seconds=init_seconds)
