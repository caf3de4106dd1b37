"""Dense kernels: Householder QR, triangular solve, Gauss-Jordan inverse.

Every reduction here runs as a strictly ascending-index loop inside an
``@njit`` kernel (numba's default fastmath=False keeps IEEE evaluation
order), so results are bit-identical run to run and process to process.
That rules out BLAS-backed ``np.dot``/``@`` on the hot paths.

The QR kernels work on the transposed (n, m) layout internally so that the
columns being reflected are contiguous in memory; public arrays keep the
natural (m, n) orientation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "ShapeError",
    "SingularPivotError",
    "SingularMatrixError",
    "QRFactors",
    "pivot_threshold",
    "householder_qr_economy",
    "back_substitute",
    "gauss_jordan_inverse",
    "matvec",
    "matvec_transposed",
    "matmul_transpose_self",
    "dot",
]

_EPS = float(np.finfo(np.float64).eps)


class ShapeError(ValueError):
    """Operand dimensions do not conform."""


class SingularPivotError(ValueError):
    """Back-substitution hit a diagonal entry below the singularity threshold."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class SingularMatrixError(ValueError):
    """Gauss-Jordan elimination found no usable pivot in some column."""

    def __init__(self, message: str, column: int):
        super().__init__(message)
        self.column = column


def pivot_threshold(n: int, max_abs: float) -> float:
    """Singularity cutoff: pivots with magnitude <= this are rejected."""
    return 1e3 * _EPS * n * max_abs


@dataclass
class QRFactors:
    """Economy factorization A = q1 @ r.

    ``q1`` is (m, n) with orthonormal columns, ``r`` is (n, n) upper
    triangular with non-negative diagonal and exact zeros below it.
    """

    q1: np.ndarray
    r: np.ndarray


@njit(cache=True, nogil=True)
def _qr_decompose_t(at, taus):
    # at is (n, m): row j holds column j of the matrix being factored.
    # On exit: R sits in at[j, k] for k <= j; Householder vectors below.
    n, m = at.shape
    for k in range(n):
        s = 0.0
        for i in range(k + 1, m):
            s += at[k, i] * at[k, i]
        alpha = at[k, k]
        nrm = np.sqrt(alpha * alpha + s)
        if nrm == 0.0:
            taus[k] = 0.0
            at[k, k] = 0.0
            continue
        # stable reflector sign: v0 = alpha + sign(alpha)*nrm
        if alpha >= 0.0:
            v0 = alpha + nrm
            beta = -nrm
        else:
            v0 = alpha - nrm
            beta = nrm
        tau = 2.0 * v0 * v0 / (v0 * v0 + s)
        for i in range(k + 1, m):
            at[k, i] /= v0
        taus[k] = tau
        at[k, k] = beta
        for j in range(k + 1, n):
            w = at[j, k]
            for i in range(k + 1, m):
                w += at[k, i] * at[j, i]
            w *= tau
            at[j, k] -= w
            for i in range(k + 1, m):
                at[j, i] -= at[k, i] * w


@njit(cache=True, nogil=True)
def _qr_form_q1_t(at, taus, qt):
    # qt is (n, m): row j will hold column j of Q1.  Start from the leading
    # n columns of I and apply reflectors H_{n-1} ... H_0.
    n, m = at.shape
    for j in range(n):
        for i in range(m):
            qt[j, i] = 0.0
        qt[j, j] = 1.0
    for k in range(n - 1, -1, -1):
        tau = taus[k]
        if tau == 0.0:
            continue
        for j in range(n):
            w = qt[j, k]
            for i in range(k + 1, m):
                w += at[k, i] * qt[j, i]
            w *= tau
            qt[j, k] -= w
            for i in range(k + 1, m):
                qt[j, i] -= at[k, i] * w


@njit(cache=True, nogil=True)
def _gram_t(qt, out):
    # out[i, j] = <column i, column j> of Q1 (rows of qt); mirror the upper
    # triangle so the result is exactly symmetric.
    n, m = qt.shape
    for i in range(n):
        for j in range(i, n):
            s = 0.0
            for k in range(m):
                s += qt[i, k] * qt[j, k]
            out[i, j] = s
            out[j, i] = s


@njit(cache=True, nogil=True)
def _back_substitute(r, y, out, tol):
    n = r.shape[0]
    for k in range(n - 1, -1, -1):
        piv = r[k, k]
        if abs(piv) <= tol:
            return k
        s = y[k]
        for j in range(k + 1, n):
            s -= r[k, j] * out[j]
        out[k] = s / piv
    return -1


@njit(cache=True, nogil=True)
def _gauss_jordan(aug, tol):
    # aug is (n, 2n) = [M | I]; reduced in place to [I | M^-1].
    n = aug.shape[0]
    w = aug.shape[1]
    for col in range(n):
        piv_row = col
        best = abs(aug[col, col])
        for i in range(col + 1, n):
            cand = abs(aug[i, col])
            if cand > best:
                best = cand
                piv_row = i
        if best <= tol:
            return col
        if piv_row != col:
            for j in range(w):
                tmp = aug[col, j]
                aug[col, j] = aug[piv_row, j]
                aug[piv_row, j] = tmp
        piv = aug[col, col]
        for j in range(w):
            aug[col, j] /= piv
        for i in range(n):
            if i == col:
                continue
            factor = aug[i, col]
            if factor != 0.0:
                for j in range(w):
                    aug[i, j] -= factor * aug[col, j]
    return -1


@njit(cache=True, nogil=True)
def _matvec(m, v, out):
    rows, cols = m.shape
    for i in range(rows):
        s = 0.0
        for j in range(cols):
            s += m[i, j] * v[j]
        out[i] = s


@njit(cache=True, nogil=True)
def _matvec_t(m, v, out):
    # out = m.T @ v without materializing the transpose.
    rows, cols = m.shape
    for j in range(cols):
        s = 0.0
        for i in range(rows):
            s += m[i, j] * v[i]
        out[j] = s


@njit(cache=True, nogil=True)
def _dot(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={a.ndim}")
    return a


def _as_vector(v, name: str) -> np.ndarray:
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got ndim={v.ndim}")
    return v


def householder_qr_economy(a) -> QRFactors:
    """Economy QR of a tall matrix via Householder reflections.

    Parameters
    ----------
    a : (m, n) array, m >= n, finite entries.

    Returns
    -------
    QRFactors with ``q1`` (m, n) and ``r`` (n, n) upper triangular,
    diagonal of ``r`` non-negative.
    """
    a = _as_matrix(a, "a")
    m, n = a.shape
    if m < n:
        raise ShapeError(f"need rows >= cols for economy QR, got {m}x{n}")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite entry in matrix")
    at = a.T.copy()  # (n, m), C-contiguous
    taus = np.empty(n, dtype=np.float64)
    _qr_decompose_t(at, taus)
    qt = np.empty((n, m), dtype=np.float64)
    _qr_form_q1_t(at, taus, qt)
    r = np.triu(at[:, :n].T)
    # enforce non-negative diagonal: flipping row k of R and column k of Q1
    # leaves the product unchanged
    for k in range(n):
        if r[k, k] < 0.0:
            r[k, k:] = -r[k, k:]
            qt[k, :] = -qt[k, :]
    return QRFactors(q1=qt.T.copy(), r=r)


def back_substitute(r, y) -> np.ndarray:
    """Solve r @ x = y for upper-triangular r.

    Raises SingularPivotError naming the first (highest) diagonal index whose
    magnitude falls at or below ``pivot_threshold``.
    """
    r = _as_matrix(r, "r")
    y = _as_vector(y, "y")
    n = r.shape[0]
    if r.shape[1] != n:
        raise ShapeError(f"r must be square, got {r.shape[0]}x{r.shape[1]}")
    if y.shape[0] != n:
        raise ShapeError(f"y length {y.shape[0]} does not match r ({n}x{n})")
    tol = pivot_threshold(n, float(np.abs(r).max()) if n else 0.0)
    out = np.empty(n, dtype=np.float64)
    bad = _back_substitute(r, y, out, tol)
    if bad >= 0:
        raise SingularPivotError(
            f"singular pivot at diagonal index {bad}: |{r[bad, bad]:.3e}| <= {tol:.3e}",
            index=bad,
        )
    return out


def gauss_jordan_inverse(m) -> np.ndarray:
    """Invert a square matrix by Gauss-Jordan elimination with partial pivoting.

    Raises SingularMatrixError naming the column where no pivot above the
    singularity threshold exists.
    """
    m = _as_matrix(m, "m")
    n = m.shape[0]
    if m.shape[1] != n:
        raise ShapeError(f"matrix must be square, got {m.shape[0]}x{m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise ValueError("non-finite entry in matrix")
    tol = pivot_threshold(n, float(np.abs(m).max()) if n else 0.0)
    aug = np.zeros((n, 2 * n), dtype=np.float64)
    aug[:, :n] = m
    aug[np.arange(n), n + np.arange(n)] = 1.0
    bad = _gauss_jordan(aug, tol)
    if bad >= 0:
        raise SingularMatrixError(
            f"no pivot above {tol:.3e} in column {bad}", column=bad
        )
    return np.ascontiguousarray(aug[:, n:])


def matvec(m, v) -> np.ndarray:
    """m @ v with a fixed ascending-index accumulation order."""
    m = _as_matrix(m, "m")
    v = _as_vector(v, "v")
    if m.shape[1] != v.shape[0]:
        raise ShapeError(f"shapes {m.shape} and {v.shape} do not conform")
    out = np.empty(m.shape[0], dtype=np.float64)
    _matvec(m, v, out)
    return out


def matvec_transposed(m, v) -> np.ndarray:
    """m.T @ v with a fixed ascending-index accumulation order."""
    m = _as_matrix(m, "m")
    v = _as_vector(v, "v")
    if m.shape[0] != v.shape[0]:
        raise ShapeError(f"shapes {m.shape}.T and {v.shape} do not conform")
    out = np.empty(m.shape[1], dtype=np.float64)
    _matvec_t(m, v, out)
    return out


def matmul_transpose_self(q) -> np.ndarray:
    """q.T @ q, exactly symmetric (upper triangle computed, then mirrored)."""
    q = _as_matrix(q, "q")
    qt = np.ascontiguousarray(q.T)
    out = np.empty((q.shape[1], q.shape[1]), dtype=np.float64)
    _gram_t(qt, out)
    return out


def dot(a, b) -> float:
    """Inner product with a fixed ascending-index accumulation order."""
    a = _as_vector(a, "a")
    b = _as_vector(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(_dot(a, b))
