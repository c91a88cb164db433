"""Space-time block systems for implicit Euler and implicit midpoint marching."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, SingularMatrixError
from .fem import HomogenizedSystem
from .linalg import SparseSymMatrix, as_csr

LAYOUTS = ("parabolic_canonical", "parabolic_homogenized", "wave_canonical", "wave_homogenized")


def build_block_bidiagonal(a, b, n_steps: int) -> SparseSymMatrix:
    """L(a, b): ``a`` on the block diagonal, ``-b`` on the block subdiagonal."""
    a, b = as_csr(a), as_csr(b)
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise ValueError("a and b must be square and of equal size")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    eye = sp.identity(n_steps, format="csr")
    sub = sp.eye(n_steps, k=-1, format="csr")
    G = sp.kron(eye, a, format="csr") - sp.kron(sub, b, format="csr")
    return SparseSymMatrix(G, symmetric=False)


@dataclass
class BlockTimeSystem:
    """Global system L(a, b) U = rhs for ``n_steps`` steps of size ``dt``.

    ``rhs`` already contains ``b @ x0`` in its first block. ``components``
    names the per-step unknowns in order, e.g. (("u", n), ("v", n)).
    """

    block_a: SparseSymMatrix
    block_b: SparseSymMatrix
    n_steps: int
    dt: float
    rhs: np.ndarray
    layout: str
    x0: np.ndarray
    components: tuple
    sub_blocks: tuple = field(default=(), repr=False)

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    @property
    def block_size(self) -> int:
        return self.block_a.n_rows

    def step_rhs(self) -> np.ndarray:
        """Per-step forcing without the initial-data term, shape (n_steps, block)."""
        r = self.rhs.reshape(self.n_steps, self.block_size).copy()
        r[0] -= self.block_b @ self.x0
        return r

    def global_matrix(self) -> SparseSymMatrix:
        return build_block_bidiagonal(self.block_a, self.block_b, self.n_steps)

    def diagonal_sub_blocks(self):
        """Symmetric diagonal sub-blocks of the block-triangular ``block_a``."""
        return self.sub_blocks or (self.block_a,)

    def solve_global(self) -> np.ndarray:
        G = self.global_matrix().csr.tocsc()
        U = spla.spsolve(G, self.rhs)
        return U.reshape(self.n_steps, self.block_size)

    def march_reference(self) -> np.ndarray:
        """Forward substitution one step at a time; rows are x_1 ... x_{N_T}."""
        return march_reference(self)

    def component(self, traj: np.ndarray, name: str) -> np.ndarray:
        start = 0
        for cname, size in self.components:
            if cname == name:
                return traj[..., start:start + size]
            start += size
        raise KeyError(name)

    def initial(self, name: str) -> np.ndarray:
        return self.component(self.x0, name)


def march_reference(system: BlockTimeSystem) -> np.ndarray:
    try:
        lu = spla.splu(system.block_a.csr.tocsc())
    except RuntimeError as exc:
        raise SingularMatrixError(f"step 1: diagonal block is singular ({exc})", pivot_index=None) from exc
    b = system.block_b.csr
    forcing = system.step_rhs()
    x = system.x0.astype(float)
    out = np.empty((system.n_steps, system.block_size))
    for j in range(system.n_steps):
        x = lu.solve(b @ x + forcing[j])
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError(f"step {j + 1}: non-finite iterate", pivot_index=j + 1)
        out[j] = x
    return out


def _check_dt(dt: float, n_steps: int):
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if n_steps < 1:
        raise DomainError("n_steps must be >= 1")


def _force_values(F, times, size) -> np.ndarray:
    if F is None:
        return np.zeros((len(times), size))
    if callable(F):
        return np.array([np.asarray(F(t), dtype=float).reshape(size) for t in times])
    return np.broadcast_to(np.asarray(F, dtype=float).reshape(size), (len(times), size)).copy()


def _assemble(a, b, dt, n_steps, forcing, x0, layout, components, sub_blocks=()):
    a = SparseSymMatrix(as_csr(a), symmetric=False)
    b = SparseSymMatrix(as_csr(b), symmetric=False)
    rhs = forcing.copy()
    rhs[0] += b @ x0
    return BlockTimeSystem(a, b, n_steps, float(dt), rhs.ravel(), layout, np.asarray(x0, dtype=float),
                           tuple(components), tuple(sub_blocks))


def parabolic_canonical(M, A, dt: float, n_steps: int, F=None, u0=None) -> BlockTimeSystem:
    """Implicit Euler: (M + dt A) u_{j+1} = M u_j + dt F_{j+1}."""
    _check_dt(dt, n_steps)
    M, A = as_csr(M), as_csr(A)
    n = M.shape[0]
    u0 = np.zeros(n) if u0 is None else np.asarray(u0, dtype=float)
    times = dt * np.arange(1, n_steps + 1)
    forcing = dt * _force_values(F, times, n)
    a = M + dt * A
    return _assemble(a, M, dt, n_steps, forcing, u0, "parabolic_canonical", [("u", n)], [a])


def _split_hom(hs):
    if not isinstance(hs, HomogenizedSystem):
        raise TypeError("homogenized layouts need a HomogenizedSystem")
    A11, A12, A21, A22 = hs.split()
    return hs.matrix.csr, A11, A12, A21, A22


# LU of the corrector block fills badly for d >= 2; iterate above this size
DIRECT_LIMIT = 20000


def _constraint_initial(A11, A12, u0):
    rhs = -(A12 @ u0)
    if not rhs.any():
        return np.zeros(A11.shape[0])
    if A11.shape[0] > DIRECT_LIMIT:
        x, info = spla.cg(A11, rhs, rtol=1e-12, maxiter=20 * A11.shape[0])
        if info:
            raise SingularMatrixError(f"corrector block: CG stopped with info={info}")
        return x
    try:
        return spla.splu(A11.tocsc()).solve(rhs)
    except RuntimeError as exc:
        raise SingularMatrixError(f"corrector block is singular ({exc})") from exc


def parabolic_homogenized(M, hs: HomogenizedSystem, dt: float, n_steps: int, F=None, u0=None) -> BlockTimeSystem:
    """Implicit Euler for the coupled (u_1, u_0) system, a = Mt + dt At, b = Mt = diag(0, M)."""
    _check_dt(dt, n_steps)
    M = as_csr(M)
    At, A11, A12, A21, A22 = _split_hom(hs)
    k, n = A11.shape[0], M.shape[0]
    u0 = np.zeros(n) if u0 is None else np.asarray(u0, dtype=float)
    Mt = sp.block_diag([sp.csr_matrix((k, k)), M], format="csr")
    a = Mt + dt * At
    x0 = np.concatenate([_constraint_initial(A11, A12, u0), u0])
    times = dt * np.arange(1, n_steps + 1)
    forcing = np.zeros((n_steps, k + n))
    forcing[:, k:] = dt * _force_values(F, times, n)
    if not np.isfinite(x0).all():
        raise SingularMatrixError("corrector block is singular")
    return _assemble(a, Mt, dt, n_steps, forcing, x0, "parabolic_homogenized", [("u1", k), ("u", n)], [a])


def wave_canonical(M, A, dt: float, n_steps: int, F=None, u0=None, v0=None) -> BlockTimeSystem:
    """Implicit midpoint for M u'' + A u = F in (u, v) form."""
    _check_dt(dt, n_steps)
    M, A = as_csr(M), as_csr(A)
    n = M.shape[0]
    u0 = np.zeros(n) if u0 is None else np.asarray(u0, dtype=float)
    v0 = np.zeros(n) if v0 is None else np.asarray(v0, dtype=float)
    q = dt * dt / 4.0
    top = M + q * A
    a = sp.bmat([[top, None], [dt / 2 * A, M]], format="csr")
    b = sp.bmat([[M - q * A, dt * M], [-dt / 2 * A, M]], format="csr")
    half = dt * (np.arange(n_steps) + 0.5)
    Fh = _force_values(F, half, n)
    forcing = np.hstack([dt * dt / 2 * Fh, dt * Fh])
    return _assemble(a, b, dt, n_steps, forcing, np.concatenate([u0, v0]), "wave_canonical",
                     [("u", n), ("v", n)], [top, M])


def wave_homogenized(M, hs: HomogenizedSystem, dt: float, n_steps: int, F=None, u0=None, v0=None) -> BlockTimeSystem:
    """Implicit midpoint for the coupled system with unknowns (u_1, u_0, v_0) per step."""
    _check_dt(dt, n_steps)
    M = as_csr(M)
    At, A11, A12, A21, A22 = _split_hom(hs)
    k, n = A11.shape[0], M.shape[0]
    u0 = np.zeros(n) if u0 is None else np.asarray(u0, dtype=float)
    v0 = np.zeros(n) if v0 is None else np.asarray(v0, dtype=float)
    q = dt * dt / 4.0
    Z = sp.csr_matrix
    top = sp.bmat([[q * A11, q * A12], [q * A21, M + q * A22]], format="csr")
    a = sp.bmat(
        [[q * A11, q * A12, Z((k, n))],
         [q * A21, M + q * A22, Z((n, n))],
         [q * A21, q * A22, dt / 2 * M]], format="csr")
    b = sp.bmat(
        [[Z((k, k)), Z((k, n)), Z((k, n))],
         [-q * A21, M - q * A22, dt * M],
         [-q * A21, -q * A22, dt / 2 * M]], format="csr")
    x0 = np.concatenate([_constraint_initial(A11, A12, u0), u0, v0])
    half = dt * (np.arange(n_steps) + 0.5)
    Fh = dt * dt / 2 * _force_values(F, half, n)
    forcing = np.hstack([np.zeros((n_steps, k)), Fh, Fh])
    return _assemble(a, b, dt, n_steps, forcing, x0, "wave_homogenized",
                     [("u1", k), ("u", n), ("v", n)], [top, dt / 2 * M])


def energy_drift(system: BlockTimeSystem, traj: np.ndarray, M, A) -> float:
    """max over steps of |E_{j+1} - E_j| / E_0 with E = (v'Mv + u'Au)/2."""
    Mc, Ac = as_csr(M), as_csr(A)
    states = np.vstack([system.x0, traj])
    u = system.component(states, "u")
    v = system.component(states, "v")
    E = 0.5 * (np.einsum("ij,ij->i", v, (Mc @ v.T).T) + np.einsum("ij,ij->i", u, (Ac @ u.T).T))
    return float(np.max(np.abs(np.diff(E))) / E[0])


def solve_global(system: BlockTimeSystem) -> np.ndarray:
    return system.solve_global()


def constraint_residuals(system: BlockTimeSystem, traj: np.ndarray, hs: HomogenizedSystem) -> np.ndarray:
    """||A11 u1 + A12 u0|| at each step of a homogenized trajectory."""
    _, A11, A12, _, _ = _split_hom(hs)
    u1 = system.component(traj, "u1")
    u = system.component(traj, "u")
    return np.array([np.linalg.norm(A11 @ u1[j] + A12 @ u[j]) for j in range(traj.shape[0])])


def write_trajectory(path, system: BlockTimeSystem, traj: np.ndarray, wide: bool = False,
                     component: str = "u") -> None:
    """Trajectory CSV: long (step, time, dof, value) rows or one row per step."""
    vals = system.component(traj, component)
    x0 = system.initial(component)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if wide:
            w.writerow(["step", "time"] + [f"u{i}" for i in range(vals.shape[1])])
            w.writerow([0, repr(0.0)] + [repr(float(v)) for v in x0])
            for j in range(vals.shape[0]):
                w.writerow([j + 1, repr((j + 1) * system.dt)] + [repr(float(v)) for v in vals[j]])
        else:
            w.writerow(["step", "time", "dof", "value"])
            for i, v in enumerate(x0):
                w.writerow([0, repr(0.0), i, repr(float(v))])
            for j in range(vals.shape[0]):
                t = repr((j + 1) * system.dt)
                for i, v in enumerate(vals[j]):
                    w.writerow([j + 1, t, i, repr(float(v))])
