"""Sparse matrix storage, Kronecker products and the two reference solvers."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import (
    ConvergenceError,
    DimensionOverflowError,
    IndefiniteMatrixError,
    SingularMatrixError,
)

ZERO_DROP = 1e-300
DENSE_LIMIT = 20000
SYM_RTOL = 1e-14


def _drop_zeros(csr: sp.csr_matrix) -> sp.csr_matrix:
    csr.sum_duplicates()
    small = np.abs(csr.data) < ZERO_DROP
    if small.any():
        csr.data[small] = 0
        csr.eliminate_zeros()
    csr.sort_indices()
    return csr


class SparseSymMatrix:
    """Immutable compressed-row matrix with sparsity metadata.

    Despite the name the class also stores nonsymmetric operators (the
    space-time systems); ``symmetric`` records which case applies. Complex
    input is accepted, in which case the flag means Hermitian.
    """

    __slots__ = ("_csr", "_symmetric")

    def __init__(self, data, symmetric: bool | None = None, check: bool = True):
        if isinstance(data, SparseSymMatrix):
            csr = data._csr.copy()
        elif sp.issparse(data):
            csr = sp.csr_matrix(data, copy=True)
        else:
            csr = sp.csr_matrix(np.atleast_2d(np.asarray(data)))
        if not np.iscomplexobj(csr.data):
            csr = csr.astype(float)
        csr = _drop_zeros(csr)
        if csr.shape[0] < 1:
            raise ValueError("matrix needs at least one row")
        if symmetric is None:
            symmetric = csr.shape[0] == csr.shape[1] and _is_hermitian(csr)
        elif symmetric and check and not _is_hermitian(csr):
            raise ValueError("matrix flagged symmetric but is not")
        csr.data.flags.writeable = False
        self._csr = csr
        self._symmetric = bool(symmetric)

    # construction helpers
    @classmethod
    def from_triplets(cls, rows, cols, vals, shape, symmetric=None):
        coo = sp.coo_matrix((np.asarray(vals), (np.asarray(rows), np.asarray(cols))), shape=shape)
        return cls(coo.tocsr(), symmetric=symmetric)

    @classmethod
    def identity(cls, n: int):
        return cls(sp.identity(n, format="csr"), symmetric=True)

    @classmethod
    def tridiagonal(cls, n: int, diag: float, off: float):
        m = sp.diags([np.full(n - 1, off), np.full(n, diag), np.full(n - 1, off)], [-1, 0, 1])
        return cls(m.tocsr(), symmetric=True)

    # basic properties
    @property
    def csr(self) -> sp.csr_matrix:
        return self._csr

    @property
    def shape(self):
        return self._csr.shape

    @property
    def n_rows(self) -> int:
        return self._csr.shape[0]

    @property
    def n_cols(self) -> int:
        return self._csr.shape[1]

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    @property
    def symmetric(self) -> bool:
        return self._symmetric

    @property
    def dtype(self):
        return self._csr.dtype

    @property
    def rows(self):
        """Per-row lists of ``(column, value)`` sorted by column."""
        c = self._csr
        return [
            list(zip(c.indices[c.indptr[i]:c.indptr[i + 1]].tolist(), c.data[c.indptr[i]:c.indptr[i + 1]].tolist()))
            for i in range(self.n_rows)
        ]

    def row_nnz(self) -> np.ndarray:
        return np.diff(self._csr.indptr)

    def sparsity(self, rows=None) -> int:
        counts = self.row_nnz()
        if rows is not None:
            counts = counts[np.asarray(rows, dtype=int)]
        return int(counts.max()) if counts.size else 0

    def max_entry(self) -> float:
        return float(np.abs(self._csr.data).max()) if self.nnz else 0.0

    def entry(self, i: int, j: int):
        return self._csr[i, j]

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def matvec(self, x):
        return self._csr @ np.asarray(x)

    def __matmul__(self, other):
        if isinstance(other, SparseSymMatrix):
            return SparseSymMatrix(self._csr @ other._csr, symmetric=False)
        return self._csr @ np.asarray(other)

    # arithmetic keeps the symmetric flag when both operands carry it
    def __add__(self, other: "SparseSymMatrix"):
        return SparseSymMatrix(self._csr + other._csr, symmetric=self._symmetric and other._symmetric, check=False)

    def __sub__(self, other: "SparseSymMatrix"):
        return SparseSymMatrix(self._csr - other._csr, symmetric=self._symmetric and other._symmetric, check=False)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        sym = self._symmetric and np.isreal(scalar)
        return SparseSymMatrix(self._csr * scalar, symmetric=sym, check=False)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def transpose(self):
        return SparseSymMatrix(self._csr.T.tocsr(), symmetric=self._symmetric, check=False)

    @property
    def T(self):
        return self.transpose()

    def __repr__(self):
        return f"SparseSymMatrix(shape={self.shape}, nnz={self.nnz}, symmetric={self._symmetric})"

    # text dump: header "n_rows n_cols nnz" then 1-based triplets
    def dump(self, path) -> None:
        coo = self._csr.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = [f"{self.n_rows} {self.n_cols} {self.nnz}"]
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            lines.append(f"{r + 1} {c + 1} {v:.17e}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path, symmetric=None):
        text = Path(path).read_text().split("\n")
        n_rows, n_cols, nnz = (int(t) for t in text[0].split())
        body = [ln.split() for ln in text[1:1 + nnz]]
        if len(body) != nnz:
            raise ValueError(f"expected {nnz} entries, found {len(body)}")
        rows = np.array([int(b[0]) - 1 for b in body], dtype=np.int64)
        cols = np.array([int(b[1]) - 1 for b in body], dtype=np.int64)
        vals = np.array([float(b[2]) for b in body])
        return cls.from_triplets(rows, cols, vals, (n_rows, n_cols), symmetric=symmetric)


def _is_hermitian(csr: sp.csr_matrix) -> bool:
    if csr.shape[0] != csr.shape[1]:
        return False
    diff = csr - csr.conj().T
    if diff.nnz == 0:
        return True
    scale = np.abs(csr.data).max() if csr.nnz else 1.0
    return bool(np.abs(diff.data).max() <= SYM_RTOL * scale)


def as_csr(a) -> sp.csr_matrix:
    if isinstance(a, SparseSymMatrix):
        return a.csr
    if sp.issparse(a):
        return a.tocsr()
    return sp.csr_matrix(np.atleast_2d(a))


def kron(a: SparseSymMatrix, b: SparseSymMatrix) -> SparseSymMatrix:
    """Kronecker product, first factor outer (row-major flattening)."""
    n = a.n_rows * b.n_rows
    m = a.n_cols * b.n_cols
    limit = np.iinfo(np.intp).max
    if n > limit or m > limit or a.nnz * b.nnz > limit:
        raise DimensionOverflowError(f"kron of {a.shape} and {b.shape} exceeds the index range")
    out = sp.kron(a.csr, b.csr, format="csr")
    return SparseSymMatrix(out, symmetric=a.symmetric and b.symmetric, check=False)


def kron_all(factors) -> SparseSymMatrix:
    factors = list(factors)
    out = factors[0]
    for f in factors[1:]:
        out = kron(out, f)
    return out


def block_diag(blocks) -> SparseSymMatrix:
    blocks = list(blocks)
    sym = all(b.symmetric for b in blocks)
    return SparseSymMatrix(sp.block_diag([b.csr for b in blocks], format="csr"), symmetric=sym, check=False)


@dataclass
class SolveStats:
    iterations: int
    residual_norm: float
    matvec_count: int


def cg_solve(a, rhs, tol: float = 1e-10, x0=None, maxiter: int | None = None):
    """Unpreconditioned conjugate gradients.

    Returns ``(x, stats)`` where ``stats.residual_norm`` is the relative
    residual ||a x - rhs|| / ||rhs|| of the returned iterate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = as_csr(a)
    b = np.asarray(rhs, dtype=float)
    n = A.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n), SolveStats(0, 0.0, 0)

    matvecs = 0
    r = b - A @ x if x0 is not None else b.copy()
    matvecs += x0 is not None
    rr = r @ r
    best_x, best_res = x.copy(), np.sqrt(rr) / bnorm
    if best_res <= tol:
        return x, SolveStats(0, best_res, matvecs)
    p = r.copy()
    for it in range(1, maxiter + 1):
        ap = A @ p
        matvecs += 1
        curv = p @ ap
        if curv <= 0:
            raise IndefiniteMatrixError(
                f"negative curvature p^T A p = {curv:.3e} at iteration {it}",
                direction=p / np.linalg.norm(p),
                curvature=curv,
            )
        alpha = rr / curv
        x += alpha * p
        r -= alpha * ap
        rr_new = r @ r
        res = np.sqrt(rr_new) / bnorm
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= tol:
            # recursive residual can drift; confirm with the true one
            r_true = b - A @ x
            matvecs += 1
            true_res = np.linalg.norm(r_true) / bnorm
            if true_res <= tol:
                return x, SolveStats(it, float(true_res), matvecs)
            r = r_true
            rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    stats = SolveStats(maxiter, float(best_res), matvecs)
    raise ConvergenceError(
        f"CG did not reach tol={tol:g} in {maxiter} iterations (best {best_res:.3e})",
        best_iterate=best_x,
        stats=stats,
    )


def dense_direct_solve(a, rhs, max_rows: int = DENSE_LIMIT) -> np.ndarray:
    """LU solve on the dense form, used as the reference oracle."""
    A = as_csr(a)
    n = A.shape[0]
    if n > max_rows:
        raise ValueError(f"dense solve limited to {max_rows} rows, got {n}")
    dense = A.toarray()
    b = np.asarray(rhs)
    lu, piv = sla.lu_factor(dense, check_finite=True)
    pivots = np.abs(np.diag(lu))
    scale = pivots.max() if pivots.size else 0.0
    k = int(np.argmin(pivots))
    if scale == 0.0 or pivots[k] <= n * np.finfo(float).eps * scale:
        raise SingularMatrixError(
            f"matrix is singular to working precision: pivot {k} = {pivots[k]:.3e} (largest {scale:.3e})",
            pivot_index=k,
            pivot_value=float(pivots[k]),
            pivots=pivots,
        )
    x = sla.lu_solve((lu, piv), b)
    bnorm = np.linalg.norm(b)
    for _ in range(3):
        r = b - dense @ x
        if bnorm == 0 or np.linalg.norm(r) <= 1e-12 * bnorm:
            break
        x = x + sla.lu_solve((lu, piv), r)
    return x
