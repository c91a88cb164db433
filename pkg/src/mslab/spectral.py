"""Extreme eigenvalues, condition numbers and the theoretical spectral bounds."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError
from .linalg import as_csr

DENSE_CROSSCHECK = 2000
# above this size sparse LU fill from the dense u_0 rows dominates; switch to LOBPCG
SHIFT_INVERT_LIMIT = 20000


def _dense_extremes(A) -> tuple[float, float]:
    ev = sla.eigvalsh(A.toarray() if sp.issparse(A) else A)
    return float(ev[0]), float(ev[-1])


def extreme_eigs(a, tol: float = 1e-8, cross_check: bool = True, maxiter: int | None = None):
    """(lambda_min, lambda_max) of a symmetric positive definite matrix.

    Lanczos (ARPACK) with shift-invert at zero for the bottom of the
    spectrum, or Jacobi-preconditioned LOBPCG above ``SHIFT_INVERT_LIMIT``
    unknowns; for n <= 2000 the result is checked against a dense solve.
    """
    A = as_csr(a)
    n = A.shape[0]
    if n <= 8:
        return _dense_extremes(A)
    history = []
    # fixed start vector so repeated runs agree bit for bit
    v0 = np.random.default_rng(0).standard_normal(n)
    try:
        lmax = spla.eigsh(A, k=1, which="LA", tol=tol * 1e-2, maxiter=maxiter, v0=v0,
                          return_eigenvectors=False)[0]
        history.append(("lmax", float(lmax)))
        if n > SHIFT_INVERT_LIMIT:
            lmin = _lobpcg_min(A, tol, history)
        else:
            lu = spla.splu(A.tocsc())
            op = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
            mu = spla.eigsh(op, k=1, which="LA", tol=tol * 1e-2, maxiter=maxiter, v0=v0,
                            return_eigenvectors=False)[0]
            lmin = 1.0 / mu
        history.append(("lmin", float(lmin)))
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(
            f"Lanczos did not converge: {exc}", history=history + [("ritz", list(np.atleast_1d(exc.eigenvalues)))]
        ) from exc
    except RuntimeError as exc:  # singular factorization
        raise ConvergenceError(f"shift-invert failed: {exc}", history=history) from exc
    lmin, lmax = float(lmin), float(lmax)
    if cross_check and n <= DENSE_CROSSCHECK:
        dmin, dmax = _dense_extremes(A)
        if abs(dmin - lmin) > 1e3 * tol * abs(dmax) or abs(dmax - lmax) > 1e3 * tol * abs(dmax):
            raise ConvergenceError(
                f"Lanczos ({lmin}, {lmax}) disagrees with dense ({dmin}, {dmax})", history=history
            )
        return dmin, dmax
    return lmin, lmax


def _lobpcg_min(A, tol: float, history: list, block: int = 4, maxiter: int = 6000) -> float:
    n = A.shape[0]
    X = np.random.default_rng(0).standard_normal((n, block))
    jacobi = sp.diags(1.0 / A.diagonal())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        w, V = spla.lobpcg(A, X, M=jacobi, largest=False, tol=tol * 1e-1, maxiter=maxiter)
    res = np.linalg.norm(A @ V[:, 0] - w[0] * V[:, 0]) / np.linalg.norm(V[:, 0])
    history.append(("lobpcg_residual", float(res)))
    # the eigenvalue error is at most the residual norm; 0.1% is ample for kappa checks
    if res > 1e-3 * abs(w[0]):
        raise ConvergenceError(f"LOBPCG residual {res:.3e} too large for lambda_min {w[0]:.3e}", history=history)
    return float(w[0])


def inverse_power_lambda_min(a, rtol: float = 1e-6, maxiter: int = 10000, seed: int = 0) -> float:
    """Smallest eigenvalue of an SPD matrix by inverse power iteration."""
    A = as_csr(a)
    n = A.shape[0]
    lu = spla.splu(A.tocsc())
    x = np.random.default_rng(seed).standard_normal(n)
    x /= np.linalg.norm(x)
    lam = None
    history = []
    for _ in range(maxiter):
        y = lu.solve(x)
        new = 1.0 / (x @ y)
        history.append(new)
        x = y / np.linalg.norm(y)
        if lam is not None and abs(new - lam) <= rtol * 1e-3 * abs(new):
            rq = float(x @ (A @ x))
            return rq
        lam = new
    raise ConvergenceError("inverse power iteration did not converge", history=history)


def singular_extremes(a) -> tuple[float, float]:
    """(sigma_min, sigma_max) of a square nonsymmetric matrix."""
    A = as_csr(a)
    n = A.shape[0]
    if n <= DENSE_CROSSCHECK:
        s = sla.svdvals(A.toarray())
        return float(s[-1]), float(s[0])
    v0 = np.random.default_rng(0).standard_normal(n)
    smax = spla.svds(A, k=1, which="LM", v0=v0, return_singular_vectors=False)[0]
    lu = spla.splu(A.tocsc())
    op = spla.LinearOperator((n, n), matvec=lambda v: lu.solve(lu.solve(v), trans="T"), dtype=float)
    inv = spla.eigsh(op, k=1, which="LA", v0=v0, return_eigenvectors=False)[0]
    return float(1.0 / math.sqrt(inv)), float(smax)


@dataclass
class SpectralReport:
    case: str
    d: int
    n: int
    h: float
    dt: float | None
    s: int
    s_theory: int
    max_entry: float
    lambda_min: float
    lambda_max: float
    kappa: float
    theory_bound_kappa: float
    bound_satisfied: bool
    method: str = "eigen_symmetric"
    extras: dict = field(default_factory=dict)

    CSV_COLUMNS = ("case", "d", "n", "h", "dt", "s_meas", "s_theory", "maxentry", "lmin", "lmax", "kappa", "bound", "pass")

    def csv_row(self) -> list:
        return [
            self.case, self.d, self.n, repr(float(self.h)), "" if self.dt is None else repr(float(self.dt)),
            self.s, self.s_theory, repr(self.max_entry), repr(self.lambda_min), repr(self.lambda_max),
            repr(self.kappa), repr(self.theory_bound_kappa), int(self.bound_satisfied),
        ]


def kappa_bound(case: str, d: int, h: float, alpha: float, beta: float, dt: float | None = None, n: int = 1) -> float:
    """Theoretical condition-number bounds with their explicit constants."""
    pi2 = math.pi ** 2
    if case == "canonical":
        return 4 * beta / (alpha * pi2) * 3 ** d * d * h ** -2
    if case == "two_scale":
        return 3 ** d * kappa_bound("canonical", d, h, alpha, beta)
    if case == "reiterated":
        # stated only as O(3^{(n+1)d} d h^-2); constant carried over from n = 1
        return 4 * beta / (alpha * pi2) * 3 ** ((n + 1) * d) * d * h ** -2
    if case == "parabolic_canonical":
        return 3 ** d * (h + 4 * d * beta * dt / h) / (1 + alpha * pi2 * dt) / h
    if case == "parabolic_homogenized":
        return 3 ** (2 * d) * (h ** 2 / dt + 4 * d * beta) / (alpha * pi2) * h ** -2
    if case == "wave_canonical":
        return 3 ** d * (1 + d * beta * dt ** 2 * h ** -2)
    if case == "wave_homogenized":
        return 4 * alpha * pi2 * 3 ** (2 * d) * (h ** 2 / dt ** 2 + d * beta) * h ** -2
    raise KeyError(case)


def sparsity_theory(case: str, d: int, n: int = 1) -> int:
    if case == "canonical":
        return 3 ** d
    if case == "two_scale":
        return 3 ** (2 * d) + 3 ** d
    if case == "reiterated":
        return sum(3 ** (k * d) for k in range(1, n + 2))
    if case == "parabolic_canonical":
        return 2 * 3 ** d
    if case == "parabolic_homogenized":
        return 3 ** (2 * d) + 2 * 3 ** d
    if case == "wave_canonical":
        return 4 * 3 ** d
    if case == "wave_homogenized":
        return 2 * (3 ** (2 * d) + 2 * 3 ** d)
    raise KeyError(case)


CASES = (
    "canonical",
    "two_scale",
    "reiterated",
    "parabolic_canonical",
    "parabolic_homogenized",
    "wave_canonical",
    "wave_homogenized",
)


def block_eigen_extremes(blocks, tol=1e-8) -> tuple[float, float]:
    """Extreme eigenvalues of a block lower-triangular matrix from its symmetric diagonal blocks."""
    lo, hi = math.inf, -math.inf
    for b in blocks:
        l, u = extreme_eigs(b, tol=tol)
        lo, hi = min(lo, l), max(hi, u)
    return lo, hi


def verify_bounds(case: str, d: int, h: float, coeff_name: str = "constant", dt: float | None = None,
                  n: int = 1, eps: float = 0.125, n_steps: int = 4, singular_values: bool = False) -> SpectralReport:
    """Assemble the operator family ``case`` and compare its measured kappa with the theoretical bound.

    For the space-time systems the bounds are ratios of extreme
    eigenvalues of the (block-triangular) diagonal block, so kappa is
    measured from the symmetric diagonal sub-blocks. With
    ``singular_values=True`` sigma_max/sigma_min of the full global matrix is
    also recorded under ``extras['kappa_global_sv']``.
    """
    from . import coefficients as coef
    from . import fem
    from . import time_integrators as ti

    mesh = fem.TensorMesh.from_h(d, h)
    h = mesh.h
    if case in ("canonical",) or case.startswith("parabolic_canonical") or case.startswith("wave_canonical"):
        c = coef.preset(coeff_name, (eps,))
    elif case == "reiterated":
        c = coef.preset(coeff_name, tuple(eps ** (k + 1) for k in range(n)))
    else:
        c = coef.preset(coeff_name, (eps,))
    alpha, beta = c.alpha, c.beta
    extras: dict = {}

    if case == "canonical":
        A = fem.assemble_canonical(c, mesh)
        lmin, lmax = extreme_eigs(A)
        s, mx = A.sparsity(), A.max_entry()
        rep_n = 0
    elif case in ("two_scale", "reiterated"):
        hs = fem.assemble_reiterated(c, mesh, n=n if case == "reiterated" else 1)
        A = hs.matrix
        lmin, lmax = extreme_eigs(A)
        rows = hs.interior_rows()
        s = A.sparsity(rows) if rows.size else A.sparsity()
        extras["s_all_rows"] = A.sparsity()
        mx = A.max_entry()
        rep_n = hs.n
    else:
        if dt is None:
            dt = h
        M = fem.mass_d(mesh)
        rep_n = 0 if case.endswith("canonical") else 1
        if case.endswith("canonical"):
            A = fem.assemble_canonical(c, mesh)
            builder = ti.parabolic_canonical if case.startswith("parabolic") else ti.wave_canonical
            system = builder(M, A, dt, n_steps, None, np.zeros(mesh.n_dof))
        else:
            hs = fem.assemble_two_scale(c, mesh)
            builder = ti.parabolic_homogenized if case.startswith("parabolic") else ti.wave_homogenized
            system = builder(M, hs, dt, n_steps, None, np.zeros(mesh.n_dof))
        lmin, lmax = block_eigen_extremes(system.diagonal_sub_blocks())
        G = system.global_matrix()
        s = G.sparsity()
        mx = G.max_entry()
        if singular_values:
            smin, smax = singular_extremes(G)
            extras["kappa_global_sv"] = smax / smin
    kappa = lmax / lmin
    bound = kappa_bound(case, d, h, alpha, beta, dt=dt, n=n)
    return SpectralReport(
        case=case, d=d, n=rep_n, h=h, dt=dt, s=int(s), s_theory=sparsity_theory(case, d, n),
        max_entry=float(mx), lambda_min=float(lmin), lambda_max=float(lmax), kappa=float(kappa),
        theory_bound_kappa=float(bound), bound_satisfied=bool(kappa <= bound * (1 + 1e-6)),
        method="eigen_symmetric", extras=extras,
    )
