import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from mslab.errors import ConvergenceError, IndefiniteMatrixError, SingularMatrixError
from mslab.linalg import (
    SparseSymMatrix,
    block_diag,
    cg_solve,
    dense_direct_solve,
    kron,
    kron_all,
)


def _spd(n, seed, shift=1.0):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    return B @ B.T + shift * np.eye(n)


def test_symmetric_flag_detected_and_checked():
    A = SparseSymMatrix(np.array([[2.0, 1.0], [1.0, 3.0]]))
    assert A.symmetric
    B = SparseSymMatrix(np.array([[2.0, 1.0], [0.0, 3.0]]))
    assert not B.symmetric
    with pytest.raises(ValueError):
        SparseSymMatrix(np.array([[2.0, 1.0], [0.0, 3.0]]), symmetric=True)


def test_sparsity_and_max_entry():
    A = SparseSymMatrix.tridiagonal(6, 2.0, -1.0)
    assert A.sparsity() == 3
    assert A.sparsity([0]) == 2
    assert A.max_entry() == 2.0
    assert A.nnz == 16


def test_rows_are_sorted_by_column():
    A = SparseSymMatrix.from_triplets([0, 0, 1], [1, 0, 1], [5.0, 1.0, 2.0], (2, 2))
    assert A.rows[0] == [(0, 1.0), (1, 5.0)]


def test_zero_rows_rejected():
    with pytest.raises(ValueError):
        SparseSymMatrix(sp.csr_matrix((0, 0)))


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_kron_matches_numpy(n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((n, n)), rng.standard_normal((m, m))
    K = kron(SparseSymMatrix(a), SparseSymMatrix(b))
    assert np.allclose(K.to_dense(), np.kron(a, b), atol=1e-14)


def test_kron_all_keeps_symmetry():
    T = SparseSymMatrix.tridiagonal(3, 2.0, 1.0)
    K = kron_all([T, T, T])
    assert K.symmetric and K.shape == (27, 27)
    assert K.sparsity() == 27


def test_block_diag_shape():
    B = block_diag([SparseSymMatrix.identity(2), SparseSymMatrix.tridiagonal(3, 2.0, -1.0)])
    assert B.shape == (5, 5) and B.symmetric


def test_dump_load_round_trip(tmp_path):
    A = SparseSymMatrix(_spd(5, 3))
    path = tmp_path / "a.txt"
    A.dump(path)
    back = SparseSymMatrix.load(path)
    assert np.array_equal(back.to_dense(), A.to_dense())


@given(st.integers(2, 30), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_cg_matches_direct_solve(n, seed):
    A = _spd(n, seed)
    b = np.random.default_rng(seed + 1).standard_normal(n)
    x, stats = cg_solve(A, b, tol=1e-12)
    ref = dense_direct_solve(A, b)
    assert np.linalg.norm(x - ref) <= 1e-8 * max(1.0, np.linalg.norm(ref))
    assert stats.residual_norm <= 1e-12


def test_cg_zero_rhs():
    x, stats = cg_solve(np.eye(3), np.zeros(3))
    assert np.all(x == 0) and stats.iterations == 0


def test_cg_detects_indefinite():
    A = np.diag([1.0, -1.0, 2.0])
    with pytest.raises(IndefiniteMatrixError) as info:
        cg_solve(A, np.ones(3))
    assert info.value.curvature <= 0


def test_cg_iteration_cap_reports_best():
    A = SparseSymMatrix.tridiagonal(200, 2.0, -1.0)
    with pytest.raises(ConvergenceError) as info:
        cg_solve(A, np.ones(200), tol=1e-14, maxiter=3)
    assert info.value.best_iterate is not None


def test_direct_solve_singular():
    with pytest.raises(SingularMatrixError):
        dense_direct_solve(np.array([[1.0, 2.0], [2.0, 4.0]]), np.ones(2))


def test_direct_solve_size_guard():
    with pytest.raises(ValueError):
        dense_direct_solve(SparseSymMatrix.identity(10), np.ones(10), max_rows=5)
