"""Row-block partitioning and system augmentation.

A consistent square system ``A x = b`` is made over-determined by appending
``extra_rows`` seeded-random combinations of its own rows, then split into
``num_partitions`` contiguous row blocks.  Every extra row anchors on source
row ``i mod n`` (plus distinct random others), which guarantees that any
contiguous window of at least n rows touches every row of A — without the
anchor, 3-sparse random combinations leave square blocks rank-deficient with
high probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ShapeError, householder_qr_economy, pivot_threshold
from .mmio import SparseMatrixCSR, csr_from_coo, csr_row_block_dense, csr_vstack

__all__ = [
    "InfeasiblePartitionError",
    "PartitionPlan",
    "PartitionBlock",
    "AugmentedSystem",
    "plan_partitions",
    "extract_block",
    "combine_rows",
    "augment_system",
    "stack_augmented",
    "validate_rank",
]


class InfeasiblePartitionError(ValueError):
    """The requested block geometry cannot yield full-rank blocks."""


@dataclass
class PartitionPlan:
    """Contiguous row ranges covering ``total_rows`` in ``num_partitions`` blocks.

    The first ``num_partitions - 1`` blocks have ``chunk_size`` rows; the last
    absorbs the remainder.
    """

    total_rows: int
    n_cols: int
    num_partitions: int
    chunk_size: int
    ranges: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class PartitionBlock:
    """Dense row block j: ``a_block`` is (m_j, n), ``b_block`` is (m_j,)."""

    j: int
    a_block: np.ndarray
    b_block: np.ndarray


@dataclass
class AugmentedSystem:
    """Extra rows D_A (sparse) and extra rhs entries d_b produced from a seed."""

    d_a: SparseMatrixCSR
    d_b: np.ndarray
    seed: int


def plan_partitions(total_rows: int, n_cols: int, num_partitions: int) -> PartitionPlan:
    """Split ``total_rows`` into contiguous blocks of ``total_rows // num_partitions``.

    Raises ValueError for degenerate requests (fewer than one partition, or
    more partitions than rows) and InfeasiblePartitionError when the resulting
    chunk is shorter than ``n_cols`` (blocks could not be full column rank).
    """
    if num_partitions < 1:
        raise ValueError(f"need at least one partition, got {num_partitions}")
    if total_rows < num_partitions:
        raise ValueError(
            f"cannot split {total_rows} rows into {num_partitions} partitions"
        )
    chunk = total_rows // num_partitions
    if chunk < n_cols:
        raise InfeasiblePartitionError(
            f"chunk size {chunk} = {total_rows} // {num_partitions} is below the "
            f"column count {n_cols}; blocks would be rank deficient. "
            f"Need total_rows // num_partitions >= n_cols."
        )
    ranges = []
    for j in range(num_partitions):
        start = j * chunk
        end = (j + 1) * chunk if j < num_partitions - 1 else total_rows
        ranges.append((start, end))
    return PartitionPlan(total_rows, n_cols, num_partitions, chunk, ranges)


def extract_block(
    a: SparseMatrixCSR, b: np.ndarray, plan: PartitionPlan, j: int
) -> PartitionBlock:
    """Densify block j of the planned partition."""
    if not (0 <= j < plan.num_partitions):
        raise IndexError(f"partition index {j} outside 0..{plan.num_partitions - 1}")
    if a.nrows != plan.total_rows or a.ncols != plan.n_cols:
        raise ShapeError(
            f"matrix {a.nrows}x{a.ncols} does not match plan "
            f"{plan.total_rows}x{plan.n_cols}"
        )
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (plan.total_rows,):
        raise ShapeError(f"rhs length {b.shape} does not match {plan.total_rows} rows")
    start, end = plan.ranges[j]
    return PartitionBlock(
        j=j,
        a_block=csr_row_block_dense(a, start, end),
        b_block=b[start:end].copy(),
    )


def _concat_ranges(starts: np.ndarray, lens: np.ndarray) -> np.ndarray:
    """Indices [s0, s0+1, ..., s0+l0-1, s1, ...] without a Python loop."""
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    rel = np.arange(total, dtype=np.int64)
    offsets = np.repeat(np.cumsum(lens) - lens, lens)
    return rel - offsets + np.repeat(starts, lens)


def combine_rows(
    a: SparseMatrixCSR, b: np.ndarray, sources: np.ndarray, coefficients: np.ndarray
) -> tuple[SparseMatrixCSR, np.ndarray]:
    """Form extra rows as explicit linear combinations of rows of ``a``.

    ``sources`` and ``coefficients`` are (extra_rows, s): extra row i is
    ``sum_k coefficients[i, k] * a[sources[i, k], :]`` and the matching rhs
    entry combines ``b`` the same way.  Column collisions between source rows
    are summed.
    """
    sources = np.asarray(sources, dtype=np.int64)
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if sources.ndim != 2 or sources.shape != coefficients.shape:
        raise ShapeError("sources and coefficients must be equal-shape 2-D arrays")
    if sources.size and (sources.min() < 0 or sources.max() >= a.nrows):
        raise IndexError(f"source row outside 0..{a.nrows - 1}")
    extra, s = sources.shape
    b = np.asarray(b, dtype=np.float64)

    flat_src = sources.ravel()
    starts = a.row_ptr[flat_src]
    lens = a.row_ptr[flat_src + 1] - starts
    take = _concat_ranges(starts, lens)
    cols = a.col_idx[take]
    vals = a.values[take] * np.repeat(coefficients.ravel(), lens)
    rows = np.repeat(
        np.arange(extra, dtype=np.int64), lens.reshape(extra, s).sum(axis=1)
    )
    d_a = csr_from_coo(extra, a.ncols, rows, cols, vals)
    d_b = (coefficients * b[sources]).sum(axis=1) if extra else np.empty(0)
    return d_a, d_b


def augment_system(
    a: SparseMatrixCSR,
    b: np.ndarray,
    extra_rows: int,
    seed: int,
    num_sources: int = 3,
) -> AugmentedSystem:
    """Generate ``extra_rows`` seeded combinations of rows of the square system.

    Extra row i combines source row ``i mod n`` (anchor) with
    ``num_sources - 1`` distinct other rows, coefficients drawn U(-1, 1).
    The anchor makes every contiguous window of >= n extra rows touch every
    row of ``a``, keeping partition blocks full rank.
    """
    if a.nrows != a.ncols:
        raise ShapeError(f"matrix must be square to augment, got {a.nrows}x{a.ncols}")
    if extra_rows < 1:
        raise ValueError(f"extra_rows must be positive, got {extra_rows}")
    n = a.nrows
    if not (1 <= num_sources <= n):
        raise ValueError(f"num_sources must be in 1..{n}, got {num_sources}")
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (n,):
        raise ShapeError(f"rhs length {b.shape} does not match {n} rows")

    rng = np.random.default_rng(seed)
    sources = np.empty((extra_rows, num_sources), dtype=np.int64)
    sources[:, 0] = np.arange(extra_rows, dtype=np.int64) % n
    for i in range(extra_rows):
        # draw from 0..n-2 and shift past the anchor to keep sources distinct
        others = rng.choice(n - 1, size=num_sources - 1, replace=False)
        anchor = sources[i, 0]
        others = np.where(others >= anchor, others + 1, others)
        sources[i, 1:] = others
    coefficients = rng.uniform(-1.0, 1.0, size=(extra_rows, num_sources))
    d_a, d_b = combine_rows(a, b, sources, coefficients)
    return AugmentedSystem(d_a=d_a, d_b=d_b, seed=seed)


def stack_augmented(
    a: SparseMatrixCSR, b: np.ndarray, aug: AugmentedSystem
) -> tuple[SparseMatrixCSR, np.ndarray]:
    """Stack [A; D_A] and [b; d_b] into the over-determined system."""
    b = np.asarray(b, dtype=np.float64)
    return csr_vstack(a, aug.d_a), np.concatenate([b, aug.d_b])


def validate_rank(block: PartitionBlock) -> bool:
    """True when the block has full column rank (smallest R diagonal above
    the pivot threshold)."""
    factors = householder_qr_economy(block.a_block)
    n = factors.r.shape[0]
    if n == 0:
        return True
    tol = pivot_threshold(n, float(np.abs(block.a_block).max()))
    return bool(np.min(np.diagonal(factors.r)) > tol)
