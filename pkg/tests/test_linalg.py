import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from apcsolve.linalg import (
    QRFactors,
    ShapeError,
    SingularMatrixError,
    SingularPivotError,
    back_substitute,
    dot,
    gauss_jordan_inverse,
    householder_qr_economy,
    matmul_transpose_self,
    matvec,
    matvec_transposed,
    pivot_threshold,
)
from oracles import naive_dot, naive_gram, naive_matmul, naive_matvec, naive_matvec_t

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def random_tall(rng, max_n=24):
    n = int(rng.integers(1, max_n))
    m = n + int(rng.integers(0, max_n))
    return rng.standard_normal((m, n))


# --- fixed-order reductions are bit-exact against pure Python ---------------


@given(seeds)
def test_matvec_bitwise_matches_python_loop(seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((int(rng.integers(1, 20)), int(rng.integers(1, 20))))
    v = rng.standard_normal(m.shape[1])
    assert np.array_equal(matvec(m, v), naive_matvec(m, v))


@given(seeds)
def test_matvec_transposed_bitwise_matches_python_loop(seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((int(rng.integers(1, 20)), int(rng.integers(1, 20))))
    v = rng.standard_normal(m.shape[0])
    assert np.array_equal(matvec_transposed(m, v), naive_matvec_t(m, v))


@given(seeds)
def test_gram_bitwise_matches_python_loop(seed):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((int(rng.integers(1, 15)), int(rng.integers(1, 8))))
    assert np.array_equal(matmul_transpose_self(q), naive_gram(q))


@given(seeds)
def test_dot_bitwise_matches_python_loop(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(int(rng.integers(1, 50)))
    b = rng.standard_normal(a.shape[0])
    assert dot(a, b) == naive_dot(a, b)


def test_gram_exactly_symmetric():
    rng = np.random.default_rng(0)
    g = matmul_transpose_self(rng.standard_normal((40, 12)))
    assert np.array_equal(g, g.T)


# --- QR ----------------------------------------------------------------------


@given(seeds)
def test_qr_reconstruction_and_orthonormality(seed):
    rng = np.random.default_rng(seed)
    a = random_tall(rng)
    f = householder_qr_economy(a)
    m, n = a.shape
    assert f.q1.shape == (m, n) and f.r.shape == (n, n)
    assert np.abs(naive_matmul(f.q1, f.r) - a).max() <= 1e-10
    assert np.abs(naive_gram(f.q1) - np.eye(n)).max() <= 1e-12


@given(seeds)
def test_qr_r_shape_invariants(seed):
    rng = np.random.default_rng(seed)
    f = householder_qr_economy(random_tall(rng))
    assert np.all(np.tril(f.r, -1) == 0.0)  # exact zeros below the diagonal
    assert np.all(np.diagonal(f.r) >= 0.0)


def test_qr_deterministic_bytes():
    rng = np.random.default_rng(123)
    a = rng.standard_normal((30, 7))
    f1 = householder_qr_economy(a)
    f2 = householder_qr_economy(a.copy())
    assert f1.q1.tobytes() == f2.q1.tobytes()
    assert f1.r.tobytes() == f2.r.tobytes()


def test_qr_identity_is_fixed_point():
    f = householder_qr_economy(np.eye(4))
    assert np.array_equal(f.q1, np.eye(4))
    assert np.array_equal(f.r, np.eye(4))


def test_qr_wide_matrix_rejected():
    with pytest.raises(ShapeError):
        householder_qr_economy(np.ones((2, 3)))


def test_qr_non_finite_rejected():
    with pytest.raises(ValueError):
        householder_qr_economy(np.array([[1.0], [np.nan]]))


def test_qr_rank_deficient_still_factors():
    # rank-deficient input: factorization exists, R has (near-)zero diagonal
    a = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    f = householder_qr_economy(a)
    assert np.abs(naive_matmul(f.q1, f.r) - a).max() <= 1e-12
    assert abs(f.r[1, 1]) <= pivot_threshold(2, np.abs(a).max())


# --- back substitution --------------------------------------------------------


def test_back_substitute_known_value():
    r = np.array([[2.0, 1.0], [0.0, 4.0]])
    assert back_substitute(r, np.array([4.0, 8.0])).tolist() == [1.0, 2.0]


@given(seeds)
def test_back_substitute_solves(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 30))
    r = np.triu(rng.standard_normal((n, n)))
    r[np.arange(n), np.arange(n)] = rng.uniform(1.0, 2.0, n) * rng.choice([-1, 1], n)
    x = rng.standard_normal(n)
    y = naive_matvec(r, x)
    out = back_substitute(r, y)
    assert np.abs(naive_matvec(r, out) - y).max() <= 1e-9 * max(1.0, np.abs(y).max())


def test_back_substitute_singular_names_index():
    r = np.array([[1.0, 1.0, 1.0], [0.0, 1e-30, 1.0], [0.0, 0.0, 1.0]])
    with pytest.raises(SingularPivotError) as exc_info:
        back_substitute(r, np.ones(3))
    assert exc_info.value.index == 1
    assert "1" in str(exc_info.value)


def test_back_substitute_shape_errors():
    with pytest.raises(ShapeError):
        back_substitute(np.ones((2, 3)), np.ones(2))
    with pytest.raises(ShapeError):
        back_substitute(np.eye(2), np.ones(3))


# --- Gauss-Jordan inverse ------------------------------------------------------


def test_gauss_jordan_identity_exact():
    assert np.array_equal(gauss_jordan_inverse(np.eye(5)), np.eye(5))


def test_gauss_jordan_known_inverse():
    m = np.array([[4.0, 7.0], [2.0, 6.0]])
    expected = np.array([[0.6, -0.7], [-0.2, 0.4]])  # adjugate over det = 10
    assert np.abs(gauss_jordan_inverse(m) - expected).max() <= 1e-15


@given(seeds)
def test_gauss_jordan_multiply_back(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 25))
    m = rng.standard_normal((n, n)) + n * np.eye(n)  # well conditioned
    inv = gauss_jordan_inverse(m)
    assert np.abs(naive_matmul(m, inv) - np.eye(n)).max() <= 1e-10
    assert np.abs(naive_matmul(inv, m) - np.eye(n)).max() <= 1e-10


def test_gauss_jordan_singular_names_column():
    m = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(SingularMatrixError) as exc_info:
        gauss_jordan_inverse(m)
    assert exc_info.value.column == 1


def test_gauss_jordan_rejects_non_square():
    with pytest.raises(ShapeError):
        gauss_jordan_inverse(np.ones((2, 3)))


def test_gauss_jordan_needs_pivoting():
    # zero in the leading position forces a row swap
    m = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert np.array_equal(gauss_jordan_inverse(m), m)


# --- routes agree -------------------------------------------------------------


@given(seeds)
def test_substitution_matches_inverse_multiply(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    r = np.triu(rng.standard_normal((n, n)))
    r[np.arange(n), np.arange(n)] = rng.uniform(1.0, 2.0, n)
    y = rng.standard_normal(n)
    direct = back_substitute(r, y)
    via_inverse = matvec(gauss_jordan_inverse(r), y)
    scale = max(1.0, np.abs(direct).max())
    assert np.abs(direct - via_inverse).max() <= 1e-10 * scale


# --- threshold and timing -------------------------------------------------------


def test_pivot_threshold_scales():
    assert pivot_threshold(10, 1.0) == 10 * pivot_threshold(1, 1.0)
    assert pivot_threshold(10, 5.0) == 5 * pivot_threshold(10, 1.0)
    # a matrix scaled by 1e6 keeps the same relative singularity verdict
    r = np.array([[1.0, 0.0], [0.0, 1e-25]])
    for scale in (1.0, 1e6):
        with pytest.raises(SingularPivotError):
            back_substitute(r * scale, np.ones(2))


def _best_of(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def test_substitution_beats_inversion_at_512():
    rng = np.random.default_rng(99)
    n = 512
    r = np.triu(rng.standard_normal((n, n)))
    r[np.arange(n), np.arange(n)] = rng.uniform(1.0, 2.0, n)
    y = rng.standard_normal(n)
    t_sub = _best_of(lambda: back_substitute(r, y))
    t_inv = _best_of(lambda: gauss_jordan_inverse(r))
    assert t_sub < t_inv, f"substitution {t_sub:.4f}s vs inversion {t_inv:.4f}s"
