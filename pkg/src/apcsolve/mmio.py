"""Matrix Market I/O and the CSR sparse matrix type.

Coordinate files parse to :class:`SparseMatrixCSR`; single-column ``array``
files parse to a dense 1-D vector.  Only the ``real`` field with ``general``
or ``symmetric`` symmetry is supported.  Parsing canonicalizes: indices are
sorted, duplicate entries are summed (tie order is value-sorted, so the result
is independent of entry order in the file), and written output is therefore
byte-stable for equal logical content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MatrixMarketError",
    "MatrixMarketFormatError",
    "MatrixMarketBoundsError",
    "UnsupportedFieldError",
    "SparseMatrixCSR",
    "csr_from_coo",
    "csr_row_block_dense",
    "csr_slice_rows",
    "csr_vstack",
    "csr_matvec",
    "parse_matrix_market",
    "read_matrix_market",
    "write_matrix_market",
    "write_matrix_market_file",
    "as_dense_vector",
]


class MatrixMarketError(ValueError):
    """Base class for Matrix Market parse errors."""


class MatrixMarketFormatError(MatrixMarketError):
    """Malformed header, size line, or entry line (carries the line number)."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MatrixMarketBoundsError(MatrixMarketError):
    """Entry index outside the declared dimensions."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedFieldError(MatrixMarketError):
    """Legal Matrix Market file using a field/symmetry we do not handle."""


@dataclass
class SparseMatrixCSR:
    """Compressed sparse row matrix with canonical (sorted, deduplicated) layout.

    Invariants: ``row_ptr`` has ``nrows + 1`` non-decreasing entries starting
    at 0 and ending at ``nnz``; within each row ``col_idx`` is strictly
    increasing; all values are finite.
    """

    nrows: int
    ncols: int
    row_ptr: np.ndarray  # int64, (nrows + 1,)
    col_idx: np.ndarray  # int64, (nnz,)
    values: np.ndarray  # float64, (nnz,)

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseMatrixCSR):
            return NotImplemented
        return (
            self.nrows == other.nrows
            and self.ncols == other.ncols
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.values, other.values)
        )

    def check(self) -> None:
        """Raise ValueError if any structural invariant is violated."""
        if self.nrows < 0 or self.ncols < 0:
            raise ValueError("negative dimensions")
        if self.row_ptr.shape != (self.nrows + 1,):
            raise ValueError("row_ptr length must be nrows + 1")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != len(self.col_idx):
            raise ValueError("row_ptr must start at 0 and end at nnz")
        if np.any(np.diff(self.row_ptr) < 0):
            raise ValueError("row_ptr must be non-decreasing")
        if len(self.col_idx) != len(self.values):
            raise ValueError("col_idx and values length mismatch")
        if len(self.col_idx) and (
            self.col_idx.min() < 0 or self.col_idx.max() >= self.ncols
        ):
            raise ValueError("column index out of range")
        for i in range(self.nrows):
            s, e = self.row_ptr[i], self.row_ptr[i + 1]
            if np.any(np.diff(self.col_idx[s:e]) <= 0):
                raise ValueError(f"row {i}: column indices not strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite value")


def csr_from_coo(nrows, ncols, rows, cols, vals) -> SparseMatrixCSR:
    """Build a canonical CSR matrix from 0-based triplets, summing duplicates.

    Triplets are sorted by (row, col, value) before duplicate summation so the
    result — including the order in which duplicate values are added — does
    not depend on the input permutation.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if not (len(rows) == len(cols) == len(vals)):
        raise ValueError("triplet arrays must have equal length")
    if len(rows):
        order = np.lexsort((vals, cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        fresh = np.empty(len(rows), dtype=bool)
        fresh[0] = True
        fresh[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        starts = np.flatnonzero(fresh)
        vals = np.add.reduceat(vals, starts)
        rows, cols = rows[starts], cols[starts]
        counts = np.bincount(rows, minlength=nrows)
    else:
        counts = np.zeros(nrows, dtype=np.int64)
    row_ptr = np.zeros(nrows + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    return SparseMatrixCSR(nrows, ncols, row_ptr, cols, vals)


def csr_row_block_dense(m: SparseMatrixCSR, row_start: int, row_end: int) -> np.ndarray:
    """Densify rows ``[row_start, row_end)`` into a (row_end-row_start, ncols) array."""
    if not (0 <= row_start <= row_end <= m.nrows):
        raise IndexError(
            f"row range [{row_start}, {row_end}) outside matrix with {m.nrows} rows"
        )
    out = np.zeros((row_end - row_start, m.ncols), dtype=np.float64)
    for i in range(row_start, row_end):
        s, e = m.row_ptr[i], m.row_ptr[i + 1]
        out[i - row_start, m.col_idx[s:e]] = m.values[s:e]
    return out


def csr_slice_rows(m: SparseMatrixCSR, row_start: int, row_end: int) -> SparseMatrixCSR:
    """Extract rows ``[row_start, row_end)`` as a new CSR matrix (same ncols)."""
    if not (0 <= row_start <= row_end <= m.nrows):
        raise IndexError(
            f"row range [{row_start}, {row_end}) outside matrix with {m.nrows} rows"
        )
    s, e = m.row_ptr[row_start], m.row_ptr[row_end]
    row_ptr = (m.row_ptr[row_start : row_end + 1] - s).astype(np.int64)
    return SparseMatrixCSR(
        row_end - row_start, m.ncols, row_ptr, m.col_idx[s:e].copy(), m.values[s:e].copy()
    )


def csr_vstack(top: SparseMatrixCSR, bottom: SparseMatrixCSR) -> SparseMatrixCSR:
    """Stack two CSR matrices vertically; column counts must agree."""
    if top.ncols != bottom.ncols:
        raise ValueError(f"column mismatch: {top.ncols} vs {bottom.ncols}")
    row_ptr = np.concatenate([top.row_ptr, bottom.row_ptr[1:] + top.nnz])
    return SparseMatrixCSR(
        top.nrows + bottom.nrows,
        top.ncols,
        row_ptr,
        np.concatenate([top.col_idx, bottom.col_idx]),
        np.concatenate([top.values, bottom.values]),
    )


def csr_matvec(m: SparseMatrixCSR, v: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product (row-major accumulation order)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (m.ncols,):
        raise ValueError(f"vector length {v.shape} incompatible with {m.shape}")
    out = np.zeros(m.nrows, dtype=np.float64)
    prods = m.values * v[m.col_idx]
    row_of = np.repeat(np.arange(m.nrows), np.diff(m.row_ptr))
    np.add.at(out, row_of, prods)
    return out


# --- parsing ---------------------------------------------------------------

_SYMMETRIES = ("general", "symmetric")


def _parse_header(line: str) -> tuple[str, str]:
    tokens = line.split()
    if len(tokens) != 5 or tokens[0].lower() != "%%matrixmarket":
        raise MatrixMarketFormatError(
            "header must be '%%MatrixMarket matrix <format> <field> <symmetry>'", 1
        )
    obj, fmt, field, symmetry = (t.lower() for t in tokens[1:])
    if obj != "matrix":
        raise MatrixMarketFormatError(f"unsupported object {obj!r}", 1)
    if fmt not in ("coordinate", "array"):
        raise MatrixMarketFormatError(f"unsupported format {fmt!r}", 1)
    if field != "real":
        raise UnsupportedFieldError(f"unsupported field {field!r} (only 'real')")
    if symmetry not in _SYMMETRIES:
        raise UnsupportedFieldError(
            f"unsupported symmetry {symmetry!r} (only {', '.join(_SYMMETRIES)})"
        )
    return fmt, symmetry


def _data_lines(lines):
    """Yield (line_number, stripped_text) skipping comments and blanks."""
    for lineno, raw in lines:
        text = raw.strip()
        if not text or text.startswith("%"):
            continue
        yield lineno, text


def _parse_int(token: str, lineno: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise MatrixMarketFormatError(f"bad {what} {token!r}", lineno) from None


def _parse_real(token: str, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise MatrixMarketFormatError(f"bad real value {token!r}", lineno) from None
    if not np.isfinite(value):
        raise MatrixMarketFormatError(f"non-finite value {token!r}", lineno)
    return value


def _parse_stream(lines) -> SparseMatrixCSR | np.ndarray:
    try:
        first_no, first = next(iter(lines))
    except StopIteration:
        raise MatrixMarketFormatError("empty input", 1) from None
    fmt, symmetry = _parse_header(first)

    data = _data_lines(lines)
    try:
        size_no, size_line = next(data)
    except StopIteration:
        raise MatrixMarketFormatError("missing size line") from None
    size_tokens = size_line.split()

    if fmt == "coordinate":
        if len(size_tokens) != 3:
            raise MatrixMarketFormatError(
                "coordinate size line must be 'nrows ncols nnz'", size_no
            )
        nrows = _parse_int(size_tokens[0], size_no, "row count")
        ncols = _parse_int(size_tokens[1], size_no, "column count")
        nnz = _parse_int(size_tokens[2], size_no, "entry count")
        if nrows < 0 or ncols < 0 or nnz < 0:
            raise MatrixMarketFormatError("negative size", size_no)
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        k = 0
        for lineno, text in data:
            if k >= nnz:
                raise MatrixMarketFormatError(
                    f"more than the declared {nnz} entries", lineno
                )
            tokens = text.split()
            if len(tokens) != 3:
                raise MatrixMarketFormatError(
                    f"entry needs 'row col value', got {len(tokens)} tokens", lineno
                )
            i = _parse_int(tokens[0], lineno, "row index")
            j = _parse_int(tokens[1], lineno, "column index")
            if not (1 <= i <= nrows):
                raise MatrixMarketBoundsError(
                    f"row index {i} outside 1..{nrows}", lineno
                )
            if not (1 <= j <= ncols):
                raise MatrixMarketBoundsError(
                    f"column index {j} outside 1..{ncols}", lineno
                )
            rows[k] = i - 1
            cols[k] = j - 1
            vals[k] = _parse_real(tokens[2], lineno)
            k += 1
        if k < nnz:
            raise MatrixMarketFormatError(f"only {k} of the declared {nnz} entries")
        if symmetry == "symmetric":
            if nrows != ncols:
                raise MatrixMarketFormatError(
                    "symmetric matrix must be square", size_no
                )
            off = rows != cols  # mirror strictly off-diagonal entries
            rows, cols, vals = (
                np.concatenate([rows, cols[off]]),
                np.concatenate([cols, rows[off]]),
                np.concatenate([vals, vals[off]]),
            )
        return csr_from_coo(nrows, ncols, rows, cols, vals)

    # array format: dense column vector only
    if len(size_tokens) != 2:
        raise MatrixMarketFormatError("array size line must be 'nrows ncols'", size_no)
    nrows = _parse_int(size_tokens[0], size_no, "row count")
    ncols = _parse_int(size_tokens[1], size_no, "column count")
    if ncols != 1:
        raise MatrixMarketFormatError(
            f"array format with {ncols} columns not supported (vectors only)", size_no
        )
    if symmetry != "general":
        raise MatrixMarketFormatError("array vector must be 'general'", size_no)
    out = np.empty(nrows, dtype=np.float64)
    k = 0
    for lineno, text in data:
        for token in text.split():
            if k >= nrows:
                raise MatrixMarketFormatError(
                    f"more than the declared {nrows} values", lineno
                )
            out[k] = _parse_real(token, lineno)
            k += 1
    if k < nrows:
        raise MatrixMarketFormatError(f"only {k} of the declared {nrows} values")
    return out


def parse_matrix_market(data: bytes | str) -> SparseMatrixCSR | np.ndarray:
    """Parse Matrix Market content from memory.

    Returns a :class:`SparseMatrixCSR` for coordinate files or a 1-D float64
    array for single-column ``array`` files.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    return _parse_stream(enumerate(data.splitlines(), start=1))


def read_matrix_market(path) -> SparseMatrixCSR | np.ndarray:
    """Parse a Matrix Market file, streaming line-by-line."""
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        return _parse_stream(enumerate(fh, start=1))


# --- writing ---------------------------------------------------------------


def _fmt(value: float) -> str:
    # 17 significant digits: round-trips any float64 exactly.
    return format(value, ".17g")


def write_matrix_market(m: SparseMatrixCSR | np.ndarray) -> bytes:
    """Serialize a CSR matrix (coordinate/general) or 1-D vector (array/general).

    Output is canonical: entries in (row, col) order, 17 significant digits,
    so equal logical content always serializes to identical bytes.
    """
    if isinstance(m, SparseMatrixCSR):
        lines = [
            "%%MatrixMarket matrix coordinate real general",
            f"{m.nrows} {m.ncols} {m.nnz}",
        ]
        for i in range(m.nrows):
            s, e = m.row_ptr[i], m.row_ptr[i + 1]
            for j, v in zip(m.col_idx[s:e], m.values[s:e]):
                lines.append(f"{i + 1} {j + 1} {_fmt(v)}")
    else:
        v = np.asarray(m, dtype=np.float64)
        if v.ndim != 1:
            raise TypeError("only 1-D arrays serialize to array format")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite value")
        lines = ["%%MatrixMarket matrix array real general", f"{len(v)} 1"]
        lines.extend(_fmt(x) for x in v)
    lines.append("")
    return "\n".join(lines).encode("ascii")


def write_matrix_market_file(path, m) -> None:
    with open(path, "wb") as fh:
        fh.write(write_matrix_market(m))


def as_dense_vector(parsed) -> np.ndarray:
    """Normalize a parse result to a 1-D vector.

    Accepts the vector form directly, or a CSR matrix shaped Nx1 or 1xN.
    """
    if isinstance(parsed, np.ndarray):
        return parsed
    if isinstance(parsed, SparseMatrixCSR):
        if parsed.ncols == 1:
            return csr_row_block_dense(parsed, 0, parsed.nrows)[:, 0]
        if parsed.nrows == 1:
            return csr_row_block_dense(parsed, 0, 1)[0]
    raise MatrixMarketFormatError(
        f"expected a vector, got a {parsed.nrows}x{parsed.ncols} matrix"
    )
