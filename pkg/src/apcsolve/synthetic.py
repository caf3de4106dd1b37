"""Seeded generators for solvable test systems.

The base matrix is sparse and diagonally dominant (hence comfortably
invertible), b is manufactured from a known x_true, and the augmented
variant stacks seeded row combinations on top so the system can be split
into full-rank row blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mmio import SparseMatrixCSR, csr_from_coo, csr_matvec
from .partition import augment_system, stack_augmented

__all__ = ["random_sparse_system", "SyntheticSystem", "augmented_fixture"]


def random_sparse_system(
    n: int, density: float = 0.08, seed: int = 0
) -> tuple[SparseMatrixCSR, np.ndarray, np.ndarray]:
    """Square sparse diagonally-dominant system; returns (a, b, x_true)."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if not (0.0 <= density <= 1.0):
        raise ValueError(f"density must be in [0, 1], got {density}")
    rng = np.random.default_rng(seed)
    mask = rng.random((n, n)) < density
    np.fill_diagonal(mask, False)
    rows, cols = np.nonzero(mask)
    vals = rng.uniform(-1.0, 1.0, size=rows.shape[0])

    # dominant diagonal with random sign keeps every row well conditioned
    off_rowsum = np.zeros(n)
    np.add.at(off_rowsum, rows, np.abs(vals))
    diag = (off_rowsum + rng.uniform(0.5, 1.5, size=n)) * rng.choice([-1.0, 1.0], size=n)

    rows = np.concatenate([rows, np.arange(n)])
    cols = np.concatenate([cols, np.arange(n)])
    vals = np.concatenate([vals, diag])
    a = csr_from_coo(n, n, rows, cols, vals)

    x_true = rng.standard_normal(n)
    b = csr_matvec(a, x_true)
    return a, b, x_true


@dataclass
class SyntheticSystem:
    """An augmented over-determined consistent system with known solution."""

    a: SparseMatrixCSR  # (total_rows, n) stacked [base; extra]
    b: np.ndarray
    x_true: np.ndarray
    base: SparseMatrixCSR
    seed: int


def augmented_fixture(
    n: int = 64, total_rows: int = 256, seed: int = 7, density: float = 0.08
) -> SyntheticSystem:
    """Build the standard test system: square base plus seeded extra rows."""
    if total_rows <= n:
        raise ValueError(f"total_rows must exceed n, got {total_rows} <= {n}")
    base, b, x_true = random_sparse_system(n, density=density, seed=seed)
    aug = augment_system(base, b, extra_rows=total_rows - n, seed=seed + 1)
    a_full, b_full = stack_augmented(base, b, aug)
    return SyntheticSystem(a=a_full, b=b_full, x_true=x_true, base=base, seed=seed)
