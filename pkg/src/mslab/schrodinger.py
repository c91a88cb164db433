"""Classical emulation of the Schrödingerization route for A u = F.

The linear system is read as the steady state of du/dt = -A u + F. The
bordered generator is split into Hermitian parts, lifted to an extra
momentum variable p through v(t, p) = exp(-|p|) u(t), and evolved as a
Schrödinger equation. Fourier layout along p: coefficients are
``numpy.fft.ifft`` of the grid values, so the diagonal of momenta
``pi * l / p_max`` (fftfreq ordering) represents ``+i d/dp`` and the
Hamiltonian H1 (x) D + H2 (x) I carries exp(-p) u(t) on p > 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, DomainError, IndefiniteMatrixError
from .linalg import SparseSymMatrix, as_csr


@dataclass
class ExtendedOdeSystem:
    """d/dt [u; 1] = -a_ext [u; 1] with a_ext = [[A, -F], [0, 0]]."""

    a_ext: np.ndarray
    u0_ext: np.ndarray
    a: object
    f: np.ndarray
    aux: float = 1.0

    @property
    def size(self) -> int:
        return self.a_ext.shape[0]


def _lambda_min_estimate(A) -> float:
    A = as_csr(A)
    n = A.shape[0]
    if n <= 400:
        return float(sla.eigvalsh(A.toarray(), subset_by_index=[0, 0])[0])
    sym = (A + A.T) * 0.5
    v0 = np.random.default_rng(0).standard_normal(n)
    return float(spla.eigsh(sym, k=1, sigma=-1e-3, which="LM", v0=v0, return_eigenvectors=False)[0])


def extend_system(a, f, u0, aux: float = 1.0) -> ExtendedOdeSystem:
    """[u; c]' = -[[a, -f/c], [0, 0]] [u; c] with c = ``aux``.

    A larger c shrinks the negative part of the symmetric part, which
    otherwise forces recovery at large p.
    """
    if not aux > 0:
        raise DomainError("aux must be positive")
    A = as_csr(a)
    f = np.asarray(f, dtype=float).ravel()
    u0 = np.asarray(u0, dtype=float).ravel()
    n = A.shape[0]
    if f.size != n or u0.size != n:
        raise ValueError("size mismatch between a, f and u0")
    lam = _lambda_min_estimate((A + A.T) * 0.5)
    if lam < -1e-10:
        raise IndefiniteMatrixError(f"relaxation needs a positive semi-definite matrix, lambda_min = {lam:.3e}",
                                    lambda_min=lam)
    ext = np.zeros((n + 1, n + 1))
    ext[:n, :n] = A.toarray()
    ext[:n, n] = -f / aux
    return ExtendedOdeSystem(ext, np.append(u0, aux), A, f, float(aux))


def aux_scale(f, lambda_min: float, t: float, reach: float = 0.25) -> float:
    """Smallest c >= 1 keeping the kink drift |mu_-| t below ``reach``.

    The negative eigenvalue of the symmetric part is about
    -||f/c||^2 / (4 lambda_min).
    """
    g = float(np.linalg.norm(f))
    return max(1.0, g * math.sqrt(t / (4.0 * lambda_min * reach)))


def hermitian_split(system) -> tuple[np.ndarray, np.ndarray]:
    """H1 = (A + A^H)/2, H2 = (A - A^H)/(2i) so that A = H1 + i H2."""
    A = system.a_ext if isinstance(system, ExtendedOdeSystem) else np.asarray(system)
    h1 = (A + A.conj().T) / 2
    h2 = (A - A.conj().T) / 2j
    return h1, h2


def momentum_matrix(K: int, p_max: float) -> np.ndarray:
    """Momenta pi*l/p_max, l = -K/2 .. K/2-1, in ``numpy.fft.fftfreq`` order."""
    if K % 2 or K < 2:
        raise DomainError(f"K must be a positive even integer, got {K}")
    return np.fft.fftfreq(K, d=1.0 / K) * math.pi / p_max


def p_grid(K: int, p_max: float) -> np.ndarray:
    """p_k = -p_max + k dp for k = 0..K (the last point duplicates the first)."""
    return -p_max + np.arange(K + 1) * (2 * p_max / K)


def initialize_w(u0_ext, grid) -> np.ndarray:
    """Stacked w_k = exp(-|p_k|) u0_ext, shape (K+1, n+1)."""
    return np.exp(-np.abs(np.asarray(grid)))[:, None] * np.asarray(u0_ext, dtype=complex)[None, :]


@dataclass
class SchrodingerizedSystem:
    h1: np.ndarray
    h2: np.ndarray
    p_max: float
    dp: float
    K: int
    p_grid: np.ndarray
    d_matrix: np.ndarray
    w: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.h1.shape[0]

    def mode_hamiltonian(self, l: int) -> np.ndarray:
        return self.d_matrix[l] * self.h1 + self.h2

    def h_total(self) -> SparseSymMatrix:
        """H1 (x) D + H2 (x) I with the system index outer."""
        D = sp.diags(self.d_matrix.astype(complex))
        H = sp.kron(sp.csr_matrix(self.h1), D) + sp.kron(sp.csr_matrix(self.h2), sp.identity(self.K))
        return SparseSymMatrix(H.tocsr(), symmetric=True)

    def norm_2_estimate(self) -> float:
        """||H_total||_2 = max over momenta of ||mu H1 + H2||_2."""
        cands = [self.d_matrix.max(), self.d_matrix.min(), 0.0]
        return max(np.linalg.norm(m * self.h1 + self.h2, 2) for m in cands)

    def max_entry_bound(self) -> float:
        return float(np.abs(self.h1).max() / self.dp + np.abs(self.h2).max())

    def w_norm(self, w=None) -> float:
        w = self.w if w is None else w
        return float(np.linalg.norm(w[:-1]))


def default_grid(delta: float, dp: float | None = None, p_max: float | None = None) -> tuple[float, float, int]:
    p_max = 2.0 + math.log(1.0 / delta) if p_max is None else float(p_max)
    dp = delta if dp is None else float(dp)
    K = int(round(2 * p_max / dp))
    K += K % 2
    return p_max, 2 * p_max / K, K


def schrodingerize(ext: ExtendedOdeSystem, dp: float, p_max: float) -> SchrodingerizedSystem:
    K = int(round(2 * p_max / dp))
    K += K % 2
    dp = 2 * p_max / K
    h1, h2 = hermitian_split(ext)
    grid = p_grid(K, p_max)
    D = momentum_matrix(K, p_max)
    w = initialize_w(ext.u0_ext, grid)
    return SchrodingerizedSystem(h1, h2, p_max, dp, K, grid, D, w)


def _to_modes(w: np.ndarray) -> np.ndarray:
    return np.fft.ifft(w[:-1], axis=0)


def _from_modes(c: np.ndarray) -> np.ndarray:
    body = np.fft.fft(c, axis=0)
    return np.vstack([body, body[:1]])


def evolve(sys: SchrodingerizedSystem, t: float, dt_sim: float | None = None, method: str = "cayley",
           w0=None) -> np.ndarray:
    """Evolve w under i w' = H_total w up to time t.

    ``cayley`` applies n = ceil(t/dt_sim) Crank-Nicolson steps in closed form
    through the eigen-decomposition of each momentum block; ``step`` runs the
    same recursion literally (small systems only); ``exact`` uses exp(-iHt).
    """
    w0 = sys.w if w0 is None else w0
    if t == 0:
        return w0.copy()
    if dt_sim is None:
        dt_sim = 0.1 / max(sys.norm_2_estimate(), 1e-300)
    n_steps = max(1, math.ceil(t / dt_sim - 1e-12))
    dt = t / n_steps
    modes = _to_modes(w0)
    out = np.empty_like(modes)
    if method == "step":
        n = sys.size
        for l in range(sys.K):
            H = sys.mode_hamiltonian(l)
            lu = sla.lu_factor(np.eye(n) + 0.5j * dt * H)
            rhs = np.eye(n) - 0.5j * dt * H
            x = modes[l]
            for _ in range(n_steps):
                x = sla.lu_solve(lu, rhs @ x)
            out[l] = x
    elif method in ("cayley", "exact"):
        chunk = max(1, 2 ** 22 // sys.size ** 2)
        for start in range(0, sys.K, chunk):
            mu = sys.d_matrix[start:start + chunk]
            H = mu[:, None, None] * sys.h1[None] + sys.h2[None]
            lam, V = np.linalg.eigh(H)
            if method == "cayley":
                z = 0.5j * dt * lam
                phase = np.exp(n_steps * (np.log1p(-z) - np.log1p(z)))
            else:
                phase = np.exp(-1j * lam * t)
            c = np.einsum("kji,kj->ki", V.conj(), modes[start:start + chunk])
            out[start:start + chunk] = np.einsum("kij,kj->ki", V, phase * c)
    else:
        raise ValueError(f"unknown method {method!r}")
    w = _from_modes(out)
    n0, n1 = sys.w_norm(w0), sys.w_norm(w)
    drift = abs(n1 - n0) / n0 if n0 else 0.0
    sys.meta.update(n_steps=n_steps, dt_sim=dt, norm_drift=drift)
    if drift > 1e-6:
        raise ConvergenceError(f"norm drift {drift:.2e} exceeds 1e-6", best_iterate=w)
    return w


def recovery_point(sys: SchrodingerizedSystem, t: float, p_min: float = 1.0, margin: float = 0.5) -> int:
    """Index of the smallest grid point p_k >= 1 that the kink at p = 0 cannot reach by time t.

    A negative eigenvalue mu of H1 transports the even-extension kink to
    p = |mu| t, so recovery starts ``margin`` beyond that.
    """
    floor = max(p_min, recovery_floor(sys.h1, t, margin))
    idx = np.nonzero(sys.p_grid[:-1] >= floor - 1e-12)[0]
    if idx.size == 0:
        raise DomainError(f"no grid point beyond p = {floor:.3g}; increase p_max")
    return int(idx[0])


def recovery_floor(h1, t: float, margin: float = 0.5) -> float:
    lam = np.linalg.eigvalsh(h1)
    neg = -min(lam.min(), 0.0) * t
    return neg + margin if neg > 0 else 0.0


def safe_p_max(h1, t: float, delta: float, margin: float = 0.5) -> float:
    """Smallest p_max keeping the recovery window free of periodic wrap-around.

    Positive eigenvalues mu of H1 transport data from p + mu t; past p_max
    the periodic grid would feed in values from the kink region.
    """
    lam = np.linalg.eigvalsh(h1)
    p_rec = max(1.0, recovery_floor(h1, t, margin))
    return max(2.0 + math.log(1.0 / delta), p_rec + 0.5 + max(lam.max(), 0.0) * t + math.log(1.0 / delta))


def recover_u(w_t: np.ndarray, grid, recovery_index: int, tol: float = 0.1, normalize: bool = False,
              aux: float = 1.0) -> np.ndarray:
    """u = exp(p_k) w_k; the auxiliary last component (ideally ``aux``) is checked.

    With ``normalize`` the result is rescaled so that component equals ``aux``.
    """
    p = float(grid[recovery_index])
    if p <= 0:
        raise DomainError("recovery needs p_k > 0")
    ut = np.exp(p) * w_t[recovery_index]
    last = ut[-1] / aux
    if abs(last - 1.0) > tol:
        raise ConvergenceError(f"auxiliary component {last:.4g} (relative to {aux:g}) deviates from 1 by more "
                               f"than {tol}", best_iterate=ut)
    out = ut[:-1] / last if normalize else ut[:-1]
    return np.real(out)


def relaxation_solve(a, f, u0, delta: float, lambda_min: float | None = None, t: float | None = None):
    """Integrate du/dt = -a u + f exactly to t* = ln(1/delta)/lambda_min.

    Returns ``(u, t_star)``.
    """
    A = as_csr(a)
    f = np.asarray(f, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    n = A.shape[0]
    if lambda_min is None:
        from .spectral import inverse_power_lambda_min
        lambda_min = inverse_power_lambda_min(A)
    if lambda_min <= 0:
        raise IndefiniteMatrixError(f"relaxation needs lambda_min > 0, got {lambda_min:.3e}", lambda_min=lambda_min)
    u_inf = spla.splu(A.tocsc()).solve(f)
    if np.linalg.norm(u0 - u_inf) <= 1e-15 * max(1.0, np.linalg.norm(u_inf)):
        return u0.copy(), 0.0
    t_star = math.log(1.0 / delta) / lambda_min if t is None else t
    ext = sp.bmat([[-A, f.reshape(-1, 1)], [sp.csr_matrix((1, n)), None]], format="csr")
    x = spla.expm_multiply(ext * t_star, np.append(u0, 1.0))
    return x[:n], t_star


def normalized_l2(x) -> float:
    x = np.asarray(x)
    return float(np.linalg.norm(x) / math.sqrt(x.size))


@dataclass
class PipelineResult:
    u: np.ndarray
    u_direct: np.ndarray
    t: float
    rel_error: float
    system: SchrodingerizedSystem
    recovery_index: int
    cross_check: float
    trace: list


def pipeline(a, f, delta: float, u0=None, dp: float | None = None, p_max: float | None = None,
             t: float | None = None, method: str = "cayley", normal_equations: bool = False,
             trace_points: int = 0, normalize: bool = False, aux: float | None = None) -> PipelineResult:
    """Full emulated solve of a u = f with accuracy target ``delta``.

    Defaults: t = ln(2/delta)/lambda_min, dp = delta, p_max from
    :func:`safe_p_max` and the auxiliary scale from :func:`aux_scale`. ``normal_equations`` relaxes on a^T a u = a^T f,
    which is how the nonsymmetric space-time systems enter; their
    condition number is then squared.
    """
    A = as_csr(a)
    f = np.asarray(f, dtype=float)
    if normal_equations:
        f = A.T @ f
        A = (A.T @ A).tocsr()
    n = A.shape[0]
    u0 = np.zeros(n) if u0 is None else np.asarray(u0, dtype=float)
    u_direct = spla.splu(A.tocsc()).solve(f)
    if t is None or aux is None:
        from .spectral import inverse_power_lambda_min
        lam = inverse_power_lambda_min(A)
    if t is None:
        # half the budget for relaxation, the rest for the p discretization
        t = math.log(2.0 / delta) / lam
    if aux is None:
        aux = aux_scale(f, lam, t)
    ext = extend_system(A, f, u0, aux)
    if p_max is None:
        p_max = safe_p_max(hermitian_split(ext)[0], t, delta)
    p_max, dp, K = default_grid(delta, dp, p_max)
    sys = schrodingerize(ext, dp, p_max)
    k = recovery_point(sys, t)
    trace = []
    if trace_points:
        for ts in np.linspace(0, t, trace_points + 1)[1:]:
            wt = evolve(sys, ts, method=method)
            ut = np.real(np.exp(sys.p_grid[k]) * wt[k])
            exact, _ = relaxation_solve(A, f, u0, delta, lambda_min=1.0, t=ts)
            trace.append((float(ts), sys.w_norm(wt), normalized_l2(ut[:-1] - exact) / max(normalized_l2(exact), 1e-300)))
    w_t = evolve(sys, t, method=method)
    u = recover_u(w_t, sys.p_grid, k, normalize=normalize, aux=aux)
    k2 = min(k + max(1, int(round(0.5 / sys.dp))), sys.K - 1)
    u2 = recover_u(w_t, sys.p_grid, k2, normalize=normalize, aux=aux)
    scale = max(normalized_l2(u_direct), 1e-300)
    rel = normalized_l2(u - u_direct) / scale
    cross = normalized_l2(u - u2) / scale
    sys.w = w_t
    return PipelineResult(u, u_direct, t, rel, sys, k, cross, trace)


def write_trace(path, result: PipelineResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "w_norm", "recovered_error"])
        for row in result.trace:
            w.writerow([repr(v) for v in row])
