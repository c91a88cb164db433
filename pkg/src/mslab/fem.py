"""Tensor-product P1/Q1 finite elements on the unit cube.

Unknown ordering is row-major with the first coordinate outermost, which
matches ``kron`` with the first factor outer. Product-space unknowns of the
homogenized systems are ordered factor by factor with x outermost.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import MultiscaleCoefficient
from .errors import BudgetExceededError, DomainError
from .linalg import SparseSymMatrix, block_diag, kron_all

QUAD_BUDGET = 60_000_000
DOF_BUDGET = 2_000_000
_CHUNK_POINTS = 1_500_000


@dataclass(frozen=True)
class TensorMesh:
    d: int
    N: int

    def __post_init__(self):
        if self.d < 1:
            raise DomainError(f"dimension must be >= 1, got {self.d}")
        if self.N < 1:
            raise DomainError(f"need at least one interior node per direction, got N={self.N}")

    @property
    def h_exact(self) -> Fraction:
        return Fraction(1, self.N + 1)

    @property
    def h(self) -> float:
        return 1.0 / (self.N + 1)

    @property
    def n_dof(self) -> int:
        return self.N ** self.d

    @classmethod
    def from_h(cls, d: int, h: float) -> "TensorMesh":
        return cls(d, int(round(1.0 / h)) - 1)

    def nodes_1d(self) -> np.ndarray:
        return np.arange(1, self.N + 1) * self.h

    def coordinates(self) -> np.ndarray:
        grids = np.meshgrid(*([self.nodes_1d()] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


# ---------------------------------------------------------------- quadrature

def composite_gauss(subcells: int, q: int):
    """Composite Gauss-Legendre rule on [0, 1]."""
    g, w = np.polynomial.legendre.leggauss(q)
    starts = np.arange(subcells)[:, None]
    pts = ((starts + (g[None, :] + 1.0) / 2.0) / subcells).ravel()
    wts = np.tile(w / 2.0 / subcells, subcells)
    return pts, wts


def _corners(d: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)


def _local_tables(xi: np.ndarray, w: np.ndarray, d: int):
    """Reference-element values and derivatives of the 2^d multilinear shape functions.

    Returns points (Q, d), weights (Q,), values (Q, C) and derivatives (Q, C, d),
    all on the unit reference cell.
    """
    idx = np.array(list(itertools.product(range(len(xi)), repeat=d)), dtype=np.int64)
    pts = xi[idx]
    wts = np.prod(w[idx], axis=1)
    corners = _corners(d)
    # 1D shape values: corner 0 -> 1 - xi, corner 1 -> xi
    vals_1d = np.where(corners[None, :, :] == 1, pts[:, None, :], 1.0 - pts[:, None, :])
    ders_1d = np.where(corners[None, :, :] == 1, 1.0, -1.0) * np.ones_like(vals_1d)
    values = np.prod(vals_1d, axis=2)
    grads = np.empty(vals_1d.shape)
    for k in range(d):
        others = np.delete(vals_1d, k, axis=2)
        grads[:, :, k] = ders_1d[:, :, k] * np.prod(others, axis=2)
    return pts, wts, values, grads


def _elements(N: int, d: int) -> np.ndarray:
    return np.array(list(itertools.product(range(N + 1), repeat=d)), dtype=np.int64)


def _interior_index(nodes: np.ndarray, N: int) -> np.ndarray:
    """Flat interior dof index of node multi-indices, -1 for boundary nodes."""
    d = nodes.shape[-1]
    valid = np.all((nodes >= 1) & (nodes <= N), axis=-1)
    flat = np.zeros(nodes.shape[:-1], dtype=np.int64)
    for k in range(d):
        flat = flat * N + (nodes[..., k] - 1)
    return np.where(valid, flat, -1)


def _full_index(nodes: np.ndarray, N: int) -> np.ndarray:
    d = nodes.shape[-1]
    flat = np.zeros(nodes.shape[:-1], dtype=np.int64)
    for k in range(d):
        flat = flat * (N + 2) + nodes[..., k]
    return flat


def _subcells_for(coeff: MultiscaleCoefficient | None, h: float) -> int:
    if coeff is None or coeff.n == 0:
        return 1
    return max(1, math.ceil(h / (coeff.epsilons[-1] / 8.0) - 1e-9))


# ---------------------------------------------------------------- 1D and d-D matrices

def mass_1d(mesh: TensorMesh) -> SparseSymMatrix:
    h = mesh.h
    return SparseSymMatrix.tridiagonal(mesh.N, 2.0 * h / 3.0, h / 6.0)


def stiffness_1d(mesh: TensorMesh) -> SparseSymMatrix:
    h = mesh.h
    return SparseSymMatrix.tridiagonal(mesh.N, 2.0 / h, -1.0 / h)


def mass_1d_full(mesh: TensorMesh) -> SparseSymMatrix:
    """Mass matrix over all N+2 nodes, boundary half-hats included."""
    h = mesh.h
    n = mesh.N + 2
    diag = np.full(n, 2.0 * h / 3.0)
    diag[0] = diag[-1] = h / 3.0
    off = np.full(n - 1, h / 6.0)
    return SparseSymMatrix(sp.diags([off, diag, off], [-1, 0, 1]).tocsr(), symmetric=True)


def _check_dofs(count: int, budget: int = DOF_BUDGET):
    if count > budget:
        raise BudgetExceededError(f"{count} unknowns exceed the budget of {budget}", required=count, budget=budget)


def mass_d(mesh: TensorMesh) -> SparseSymMatrix:
    _check_dofs(mesh.n_dof)
    return kron_all([mass_1d(mesh)] * mesh.d)


def stiffness_d(mesh: TensorMesh) -> SparseSymMatrix:
    _check_dofs(mesh.n_dof)
    m1, k1 = mass_1d(mesh), stiffness_1d(mesh)
    total = None
    for pos in range(mesh.d):
        term = kron_all([k1 if j == pos else m1 for j in range(mesh.d)])
        total = term if total is None else total + term
    return total


# ---------------------------------------------------------------- element assembly

def _scatter_local(local: np.ndarray, elements: np.ndarray, N: int, d: int, shape):
    corners = _corners(d)
    nodes = elements[:, None, :] + corners[None, :, :]
    dof = _interior_index(nodes, N)
    rows = np.broadcast_to(dof[:, :, None], local.shape)
    cols = np.broadcast_to(dof[:, None, :], local.shape)
    keep = (rows >= 0) & (cols >= 0)
    return rows[keep], cols[keep], local[keep]


def assemble_canonical(coeff: MultiscaleCoefficient, mesh: TensorMesh, q: int = 3,
                       budget: int = QUAD_BUDGET) -> SparseSymMatrix:
    """Stiffness matrix of -div(a_eps grad u) with a_eps(x) = a(x, x/eps_1, ...).

    Each element is split into sub-cells of edge at most eps_n/8 carrying a
    q-point Gauss rule per direction.
    """
    d, N, h = mesh.d, mesh.N, mesh.h
    _check_dofs(mesh.n_dof)
    m = _subcells_for(coeff, h)
    per_elem = (m * q) ** d
    n_el = (N + 1) ** d
    if n_el * per_elem > budget:
        raise BudgetExceededError(
            f"quadrature needs {m} sub-cells per element edge ({n_el * per_elem} points), budget {budget}",
            required=n_el * per_elem,
            budget=budget,
        )
    xi, w = composite_gauss(m, q)
    pts, wts, _, grads = _local_tables(xi, w, d)
    # physical: sum_q a * w h^d * (g/h).(g/h)
    B = np.einsum("q,qak,qbk->qab", wts, grads, grads) * h ** (d - 2)
    C = 2 ** d
    B = B.reshape(len(wts), C * C)
    elements = _elements(N, d)
    rows, cols, vals = [], [], []
    chunk = max(1, _CHUNK_POINTS // len(wts))
    for start in range(0, n_el, chunk):
        el = elements[start:start + chunk]
        X = (el[:, None, :] + pts[None, :, :]) * h
        a = coeff.canonical(X.reshape(-1, d)).reshape(len(el), len(wts))
        local = (a @ B).reshape(len(el), C, C)
        r, c, v = _scatter_local(local, el, N, d, None)
        rows.append(r), cols.append(c), vals.append(v)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(mesh.n_dof, mesh.n_dof)
    ).tocsr()
    # symmetrize to remove last-bit asymmetry from the summation order
    mat = (mat + mat.T) * 0.5
    return SparseSymMatrix(mat, symmetric=True)


def _as_field(f, d: int) -> Callable:
    if callable(f):
        return f
    value = float(f)
    return lambda x: np.full(np.atleast_2d(x).shape[0], value)


def assemble_force(f, mesh: TensorMesh, q: int = 4, subcells: int = 1) -> np.ndarray:
    """Load vector F_i = int f phi_i, by composite Gauss quadrature per element."""
    d, N, h = mesh.d, mesh.N, mesh.h
    f = _as_field(f, d)
    xi, w = composite_gauss(subcells, q)
    pts, wts, values, _ = _local_tables(xi, w, d)
    elements = _elements(N, d)
    corners = _corners(d)
    out = np.zeros(mesh.n_dof)
    chunk = max(1, _CHUNK_POINTS // len(wts))
    for start in range(0, len(elements), chunk):
        el = elements[start:start + chunk]
        X = (el[:, None, :] + pts[None, :, :]) * h
        fv = np.asarray(f(X.reshape(-1, d)), dtype=float).reshape(len(el), len(wts))
        local = (fv * wts[None, :]) @ values * h ** d
        dof = _interior_index(el[:, None, :] + corners[None, :, :], N)
        keep = dof >= 0
        np.add.at(out, dof[keep], local[keep])
    return out


# ---------------------------------------------------------------- homogenized systems

@dataclass
class HomogenizedSystem:
    """Coupled system for (u_n, ..., u_1, u_0) on the product domain.

    Blocks are stored in that order, u_0 last. For n = 1 this is the
    two-scale matrix [[A11, A12], [A21, A22]].
    """

    matrix: SparseSymMatrix
    force: np.ndarray
    mesh: TensorMesh
    n: int
    block_sizes: tuple

    @property
    def offsets(self) -> tuple:
        return tuple(int(x) for x in np.concatenate([[0], np.cumsum(self.block_sizes)]))

    @property
    def size(self) -> int:
        return int(sum(self.block_sizes))

    @property
    def n_corrector(self) -> int:
        return int(sum(self.block_sizes[:-1]))

    def block(self, r: int, c: int) -> sp.csr_matrix:
        o = self.offsets
        return self.matrix.csr[o[r]:o[r + 1], o[c]:o[c + 1]]

    def split(self):
        """(A11, A12, A21, A22) with all correctors grouped in the first block."""
        k = self.n_corrector
        A = self.matrix.csr
        return A[:k, :k], A[:k, k:], A[k:, :k], A[k:, k:]

    def interior_rows(self) -> np.ndarray:
        """Rows of the finest corrector block whose neighbours are all unknowns."""
        N, d, n = self.mesh.N, self.mesh.d, self.n
        if N < 3:
            return np.array([], dtype=np.int64)
        full = np.arange(2, N)  # macro nodes 2..N-1
        inner = np.arange(2, N)  # interior nodes 2..N-1
        macro_1d = full
        per_factor = []
        for r in range(n + 1):
            grids = np.meshgrid(*([macro_1d if r < n else inner] * d), indexing="ij")
            nodes = np.stack([g.ravel() for g in grids], axis=1)
            per_factor.append(_full_index(nodes, N) if r < n else _interior_index(nodes, N))
        sizes = [(N + 2) ** d] * n + [N ** d]
        idx = np.zeros(1, dtype=np.int64)
        for r in range(n + 1):
            idx = (idx[:, None] * sizes[r] + per_factor[r][None, :]).ravel()
        return np.sort(idx)

    def u0_slice(self) -> slice:
        return slice(self.offsets[-2], self.offsets[-1])


def _product_assembly(coeff: MultiscaleCoefficient, mesh: TensorMesh, n: int, q: int = 3,
                      y_cells_per_period: int = 16, budget: int = QUAD_BUDGET,
                      dof_budget: int = DOF_BUDGET) -> tuple[SparseSymMatrix, tuple]:
    d, N, h = mesh.d, mesh.N, mesh.h
    C = 2 ** d
    sizes = [((N + 2) ** (k * d)) * N ** d for k in range(n, -1, -1)]
    total = int(sum(sizes))
    if total > dof_budget:
        raise BudgetExceededError(
            f"homogenized system needs {total} unknowns, budget {dof_budget}", required=total, budget=dof_budget
        )
    factors = []
    for r in range(n + 1):
        m = 1 if r == 0 else max(1, math.ceil(y_cells_per_period / (N + 1)))
        xi, w = composite_gauss(m, q)
        pts, wts, vals, grads = _local_tables(xi, w, d)
        factors.append(dict(pts=pts, W=wts * h ** d, V=vals * h ** (-d / 2.0), G=grads / h))
    elements = _elements(N, d)
    E = len(elements)
    n_points = E ** (n + 1) * int(np.prod([len(f["W"]) for f in factors]))
    if n_points > budget:
        raise BudgetExceededError(
            f"product-domain quadrature needs {n_points} points, budget {budget}", required=n_points, budget=budget
        )
    corners = _corners(d)
    nodes = elements[:, None, :] + corners[None, :, :]  # (E, C, d)
    macro_idx = _full_index(nodes, N)
    inner_idx = _interior_index(nodes, N)
    # block k (k = n..0) lives at position n - k
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    block_offset = {k: int(offsets[n - k]) for k in range(n + 1)}

    def block_index(k):
        """Per-factor (index table, stride) for the unknowns of block k."""
        strides = []
        stride = 1
        for r in range(k, -1, -1):
            strides.append(stride)
            stride *= N ** d if r == k else (N + 2) ** d
        strides = strides[::-1]
        return [(macro_idx if r < k else inner_idx, strides[r]) for r in range(k + 1)]

    Ek = "ABCDEFGH"
    Qk = "pqrstuvw"
    Tk = "abcdefgh"
    Sk = "jklmnoxy"
    per_chunk = max(1, _CHUNK_POINTS // max(1, n_points // E))
    rows, cols, vals = [], [], []
    for start in range(0, E, per_chunk):
        el0 = np.arange(start, min(E, start + per_chunk))
        c = len(el0)
        # coordinates on each factor, broadcast over the product
        shape = [c] + [E] * n + [len(f["W"]) for f in factors]
        coords = []
        for r, f in enumerate(factors):
            el = elements[el0] if r == 0 else elements
            P = (el[:, None, :] + f["pts"][None, :, :]) * h  # (E_r, Q_r, d)
            bshape = [1] * (2 * (n + 1)) + [d]
            bshape[r] = P.shape[0]
            bshape[n + 1 + r] = P.shape[1]
            coords.append(np.broadcast_to(P.reshape(bshape), shape + [d]).reshape(-1, d))
        a = np.asarray(coeff.evaluate(coords[0], coords[1:]), dtype=float).reshape(shape)
        aw = a
        for r, f in enumerate(factors):
            wshape = [1] * (2 * (n + 1))
            wshape[n + 1 + r] = len(f["W"])
            aw = aw * f["W"].reshape(wshape)
        for k in range(n + 1):
            for l in range(n + 1):
                top = max(k, l)
                subs = ["".join(Ek[r] for r in range(n + 1)) + "".join(Qk[r] for r in range(n + 1))]
                ops = [aw]
                for r in range(n + 1):
                    f = factors[r]
                    if r < k:
                        subs.append(Qk[r] + Tk[r]); ops.append(f["V"])
                    elif r == k:
                        subs.append(Qk[r] + Tk[r] + "i"); ops.append(f["G"])
                    if r < l:
                        subs.append(Qk[r] + Sk[r]); ops.append(f["V"])
                    elif r == l:
                        subs.append(Qk[r] + Sk[r] + "i"); ops.append(f["G"])
                out = (
                    "".join(Ek[r] for r in range(top + 1))
                    + "".join(Tk[r] for r in range(k + 1))
                    + "".join(Sk[r] for r in range(l + 1))
                )
                loc = np.einsum(",".join(subs) + "->" + out, *ops, optimize=True)
                # global indices broadcast to loc's shape
                nE = top + 1
                full_shape = loc.shape

                def idx_for(k_blk, letters_offset):
                    total_idx = np.full(full_shape, block_offset[k_blk], dtype=np.int64)
                    valid = np.ones(full_shape, dtype=bool)
                    for r, (table, stride) in enumerate(block_index(k_blk)):
                        tab = table[el0] if r == 0 else table  # (E_r, C)
                        bshape = [1] * len(full_shape)
                        bshape[r] = tab.shape[0]
                        bshape[letters_offset + r] = C
                        t = tab.reshape(bshape)
                        if table is inner_idx:
                            valid &= np.broadcast_to(t >= 0, full_shape)
                        total_idx = total_idx + t * stride
                    return total_idx, valid

                ri, rv = idx_for(k, nE)
                ci, cv = idx_for(l, nE + k + 1)
                keep = rv & cv
                rows.append(ri[keep]); cols.append(ci[keep]); vals.append(loc[keep])
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(total, total)
    ).tocsr()
    mat = (mat + mat.T) * 0.5
    return SparseSymMatrix(mat, symmetric=True), tuple(sizes)


def assemble_two_scale(coeff: MultiscaleCoefficient, mesh: TensorMesh, f=0.0, **kw) -> HomogenizedSystem:
    """Coupled (u_1, u_0) system with macro factors scaled by h^(-1/2) per direction."""
    if coeff.n != 1:
        raise DomainError(f"two-scale assembly needs exactly one fast scale, got n={coeff.n}")
    return assemble_reiterated(coeff, mesh, f, **kw)


def assemble_reiterated(coeff: MultiscaleCoefficient, mesh: TensorMesh, f=0.0, n: int | None = None,
                        **kw) -> HomogenizedSystem:
    n = coeff.n if n is None else n
    if n < 1:
        raise DomainError("reiterated assembly needs n >= 1")
    mat, sizes = _product_assembly(coeff, mesh, n, **kw)
    F = assemble_force(f, mesh)
    force = np.concatenate([np.zeros(int(sum(sizes[:-1]))), F])
    return HomogenizedSystem(mat, force, mesh, n, sizes)


def stiffness_reiterated_identity(mesh: TensorMesh, n: int) -> SparseSymMatrix:
    """Block-diagonal reference operator for a == 1, built from Kronecker products."""
    d, h = mesh.d, mesh.h
    Mf = kron_all([mass_1d_full(mesh)] * d) * (1.0 / h ** d)
    K = stiffness_d(mesh)
    blocks = []
    for k in range(n, -1, -1):
        blocks.append(kron_all([Mf] * k + [K]) if k else K)
    return block_diag(blocks)


# ---------------------------------------------------------------- FE functions

@dataclass
class FemSolution:
    """Nodal coefficients of a P1 tensor-product function.

    ``level`` is 0 (u_0), "canonical" (u_eps) or k >= 1 for the corrector u_k,
    whose first k factors use the scaled macro basis including boundary nodes.
    """

    mesh: TensorMesh
    level: object
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        expected = self.expected_size(self.mesh, self.level)
        if self.coefficients.size != expected:
            raise ValueError(f"level {self.level!r} needs {expected} coefficients, got {self.coefficients.size}")

    @staticmethod
    def expected_size(mesh: TensorMesh, level) -> int:
        k = 0 if level in (0, "canonical") else int(level)
        return (mesh.N + 2) ** (k * mesh.d) * mesh.N ** mesh.d

    @property
    def n_factors(self) -> int:
        return 1 if self.level in (0, "canonical") else int(self.level) + 1

    def __call__(self, *points):
        """Evaluate at points; one (P, d) array per factor."""
        if len(points) != self.n_factors:
            raise ValueError(f"expected {self.n_factors} point arrays")
        mesh = self.mesh
        d, N, h = mesh.d, mesh.N, mesh.h
        pts = [np.atleast_2d(np.asarray(p, dtype=float)) for p in points]
        for p in pts:
            if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
                raise DomainError("evaluation point outside the unit cube")
        P = pts[0].shape[0]
        corners = _corners(d)
        idx_total = np.zeros((P, 1), dtype=np.int64)
        weight = np.ones((P, 1))
        valid = np.ones((P, 1), dtype=bool)
        k = self.n_factors - 1
        for r, p in enumerate(pts):
            e = np.clip(np.floor(p / h).astype(np.int64), 0, N)
            loc = p / h - e
            nodes = e[:, None, :] + corners[None, :, :]
            wv = np.prod(np.where(corners[None, :, :] == 1, loc[:, None, :], 1.0 - loc[:, None, :]), axis=2)
            if r < k:
                ind = _full_index(nodes, N)
                size = (N + 2) ** d
                wv = wv * h ** (-d / 2.0)
                ok = np.ones_like(ind, dtype=bool)
            else:
                ind = _interior_index(nodes, N)
                size = N ** d
                ok = ind >= 0
            idx_total = (idx_total[:, :, None] * size + ind[:, None, :]).reshape(P, -1)
            weight = (weight[:, :, None] * wv[:, None, :]).reshape(P, -1)
            valid = (valid[:, :, None] & ok[:, None, :]).reshape(P, -1)
        vals = np.where(valid, self.coefficients[np.where(valid, idx_total, 0)], 0.0)
        return np.sum(vals * weight, axis=1)


def interpolate(mesh: TensorMesh, func) -> np.ndarray:
    return np.asarray(func(mesh.coordinates()), dtype=float)


def l2_error(sol: FemSolution, exact, q: int = 4, subcells: int = 1) -> float:
    """||u_h - u|| in L2(Omega) for canonical / level-0 solutions."""
    mesh = sol.mesh
    d, N, h = mesh.d, mesh.N, mesh.h
    xi, w = composite_gauss(subcells, q)
    pts, wts, _, _ = _local_tables(xi, w, d)
    elements = _elements(N, d)
    total = 0.0
    chunk = max(1, _CHUNK_POINTS // len(wts))
    for start in range(0, len(elements), chunk):
        el = elements[start:start + chunk]
        X = ((el[:, None, :] + pts[None, :, :]) * h).reshape(-1, d)
        diff = sol(X) - np.asarray(exact(X), dtype=float)
        total += float(np.sum(diff.reshape(len(el), -1) ** 2 * wts[None, :])) * h ** d
    return math.sqrt(total)


def solve_elliptic(coeff: MultiscaleCoefficient, f, mesh: TensorMesh) -> FemSolution:
    A = assemble_canonical(coeff, mesh)
    F = assemble_force(f, mesh)
    u = spla.splu(A.csr.tocsc()).solve(F)
    return FemSolution(mesh, "canonical", u)
