"""Parameter selection, classical/quantum cost formulas and the cost-exponent table check."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .errors import BudgetExceededError, DomainError

EQUATIONS = ("elliptic", "parabolic", "wave")
MODELS = ("canonical", "homogenized")
FOOTER = "# costs exclude initial-data encoding and output measurement"


@dataclass(frozen=True)
class ExperimentConfig:
    equation: str = "elliptic"
    model: str = "canonical"
    d: int = 1
    n: int = 1
    eps1: float = 0.125
    delta: float | None = None
    T: float = 1.0
    coeff: str = "sin1d"

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise DomainError(f"equation must be one of {EQUATIONS}")
        if self.model not in MODELS:
            raise DomainError(f"model must be one of {MODELS}")
        if self.d < 1 or self.n < 1:
            raise DomainError("need d >= 1 and n >= 1")
        if not (0 < self.eps1 < 1):
            raise DomainError("eps1 must lie in (0, 1)")
        if self.equation != "elliptic" and self.n != 1:
            raise DomainError("parabolic and wave models are limited to n = 1")
        if self.delta is not None and self.delta > self.eps1 * (1 + 1e-12):
            raise DomainError("delta must not exceed eps1")

    @property
    def delta_value(self) -> float:
        return self.eps1 if self.delta is None else self.delta

    @property
    def epsilons(self) -> tuple:
        return tuple(self.eps1 ** (k + 1) for k in range(self.n))


@dataclass
class Parameters:
    h: float
    N: int
    dt: float | None
    N_T: int | None
    dp: float
    p_max: float
    h_raw: float


def select_parameters(cfg: ExperimentConfig, dof_budget: int = 2_000_000) -> Parameters:
    """Rules with unit constants: h = sqrt(delta eps_n) (canonical) or sqrt(delta), dt = dp = delta."""
    delta = cfg.delta_value
    if not (0 < delta < 1):
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    h_raw = math.sqrt(delta * cfg.epsilons[-1]) if cfg.model == "canonical" else math.sqrt(delta)
    N = int(round(1.0 / h_raw)) - 1
    if N < 1:
        raise DomainError(f"h = {h_raw:.3g} leaves no interior nodes")
    h = 1.0 / (N + 1)
    if cfg.model == "canonical":
        dof = N ** cfg.d
    else:
        dof = sum((N + 2) ** (k * cfg.d) * N ** cfg.d for k in range(cfg.n + 1))
    if dof > dof_budget:
        raise BudgetExceededError(f"projected {dof} dof exceeds the budget {dof_budget}", required=dof,
                                  budget=dof_budget)
    dt = N_T = None
    if cfg.equation != "elliptic":
        N_T = max(1, int(round(cfg.T / delta)))
        dt = cfg.T / N_T
    return Parameters(h, N, dt, N_T, delta, 2.0 + math.log(1.0 / delta), h_raw)


def classical_cost(dof: float, s: float, kappa: float, delta: float) -> float:
    """dof * s * sqrt(kappa) * ln(1/delta), the unpreconditioned CG bill."""
    if min(dof, s, kappa) <= 0 or not (0 < delta < 1):
        raise DomainError("classical_cost needs positive inputs and delta in (0, 1)")
    return dof * s * math.sqrt(kappa) * math.log(1.0 / delta)


def _logs(tau: float, delta: float) -> tuple[float, float]:
    # L = ln(tau/delta); the loglog denominator is floored at 1 where it would vanish
    L = max(math.log(tau / delta), math.e)
    return L, max(math.log(L), 1.0)


def quantum_cost(tau: float, m: int, delta: float) -> tuple[float, float]:
    """(queries, gates) for simulating an s-sparse Hamiltonian over evolution parameter ``tau``."""
    if tau <= 0:
        raise DomainError("tau must be positive")
    L, LL = _logs(tau, delta)
    queries = tau * L / LL
    gates = tau * (m + L ** 2.5) * L / LL
    return queries, gates


def parabolic_error_rate(eps: float, p: float) -> float:
    """Homogenization error rate theta(eps, p) for a source in L^p in time."""
    if p <= 1:
        raise DomainError("p must exceed 1")
    if not (0 < eps < 1):
        raise DomainError("eps must lie in (0, 1)")
    if p < 2:
        return eps ** (2 - 2 / p)
    if p == 2:
        return eps * math.sqrt(abs(math.log(eps)) + 1)
    return eps


@dataclass
class CostReport:
    config: ExperimentConfig
    h: float
    dt: float | None
    t_relax: float
    dp: float
    p_max: float
    N: int
    N_T: int | None
    dof: int
    s: int
    kappa: float
    max_entry: float
    lambda_min: float
    h_total_max: float
    classical_cost: float
    tau: float
    queries: float
    gates: float
    qubits: int
    tau_theory: float
    extras: dict = field(default_factory=dict)

    @property
    def classical_core(self) -> float:
        """Classical cost without the ln(1/delta) factor."""
        return self.dof * self.s * math.sqrt(self.kappa)

    @property
    def quantum_core(self) -> float:
        """tau without the ln(1/delta) of the relaxation horizon."""
        return self.tau / math.log(1.0 / self.dp)

    COLUMNS = ("equation", "model", "d", "n", "eps1", "delta", "h", "dt", "N", "N_T", "dof", "s", "kappa",
               "max_entry", "lambda_min", "t_relax", "dp", "p_max", "classical_cost", "tau", "queries", "gates",
               "qubits", "tau_theory")

    def csv_row(self) -> list:
        c = self.config
        vals = [c.equation, c.model, c.d, c.n, c.eps1, c.delta_value, self.h, self.dt, self.N, self.N_T, self.dof,
                self.s, self.kappa, self.max_entry, self.lambda_min, self.t_relax, self.dp, self.p_max,
                self.classical_cost, self.tau, self.queries, self.gates, self.qubits, self.tau_theory]
        return ["" if v is None else (repr(float(v)) if isinstance(v, float) else v) for v in vals]


def h_total_max(a) -> float:
    """Largest entry of H1 (x) D + H2 (x) I once the 1/dp factor is taken out.

    The momentum diagonal lies in [-pi/dp, pi/dp); entries are
    |mu H1_ij + H2_ij| maximized at the end points.
    """
    A = sp.csr_matrix(a)
    h1 = ((A + A.T) * 0.5).tocsr()
    h2 = ((A - A.T) * 0.5).tocsr()
    both = (abs(h1) + abs(h2)).tocoo()
    r, c = both.row, both.col
    a1 = np.asarray(h1[r, c]).ravel()
    a2 = np.asarray(h2[r, c]).ravel()
    return float(np.sqrt(a1 ** 2 * math.pi ** 2 + a2 ** 2).max())


def _time_system(cfg: ExperimentConfig, prm: Parameters, coeff, mesh):
    from . import fem
    from . import time_integrators as ti

    M = fem.mass_d(mesh)
    steps = 2  # a and b are all that matter for s, max entry and the spectrum
    if cfg.model == "canonical":
        A = fem.assemble_canonical(coeff, mesh)
        build = ti.parabolic_canonical if cfg.equation == "parabolic" else ti.wave_canonical
        return build(M, A, prm.dt, steps), None
    hs = fem.assemble_two_scale(coeff, mesh)
    build = ti.parabolic_homogenized if cfg.equation == "parabolic" else ti.wave_homogenized
    return build(M, hs, prm.dt, steps), hs


def tau_theory(cfg: ExperimentConfig, prm: Parameters) -> float:
    """Theoretical tau expressions with unit constants."""
    d, n, h = cfg.d, cfg.n, prm.h
    L = math.log(1.0 / prm.dp)
    if cfg.equation == "elliptic":
        three = 2 * d if cfg.model == "canonical" else 2 * (n + 1) * d
        return 3 ** three * d * h ** -2 * L / prm.dp
    if cfg.model == "canonical":
        return 3 ** (2 * d) * d / h * L / prm.dp
    return 3 ** (4 * d) * d * h ** -2 * L / prm.dp


def evaluate(cfg: ExperimentConfig) -> CostReport:
    """Assemble the operator chosen by ``cfg`` and fill in measured cost quantities."""
    from . import coefficients as coef
    from . import fem
    from .spectral import block_eigen_extremes, extreme_eigs, sparsity_theory

    prm = select_parameters(cfg)
    extras: dict = {}
    mesh = fem.TensorMesh(cfg.d, prm.N)
    coeff = coef.preset(cfg.coeff, cfg.epsilons)
    delta = cfg.delta_value
    if cfg.equation == "elliptic":
        if cfg.model == "canonical":
            A = fem.assemble_canonical(coeff, mesh)
            s = A.sparsity()
        else:
            hs = fem.assemble_reiterated(coeff, mesh, n=cfg.n)
            A = hs.matrix
            rows = hs.interior_rows()
            extras["s_all_rows"] = A.sparsity()
            s = A.sparsity(rows) if rows.size else sparsity_theory("two_scale" if cfg.n == 1 else "reiterated", cfg.d, cfg.n)
        lmin, lmax = extreme_eigs(A)
        dof = A.n_rows
        mx = A.max_entry()
        hmax = h_total_max(A.csr) / prm.dp
    else:
        system, _ = _time_system(cfg, prm, coeff, mesh)
        lmin, lmax = block_eigen_extremes(system.diagonal_sub_blocks())
        G = system.global_matrix()
        s = G.sparsity()
        extras["s_all_rows"] = s
        if cfg.model == "homogenized":
            # u_0 rows couple to every fast-variable node, so the row maximum
            # grows with N; the displayed count is what the cost chain uses
            s = sparsity_theory(system.layout, cfg.d)
        mx = G.max_entry()
        dof = system.block_size * prm.N_T
        hmax = h_total_max(G.csr) / prm.dp
    kappa = lmax / lmin
    t_relax = math.log(1.0 / delta) / lmin
    tau = s * hmax * t_relax
    K = int(round(2 * prm.p_max / prm.dp))
    m = math.ceil(math.log2(dof + 1)) + math.ceil(math.log2(max(K, 2)))
    queries, gates = quantum_cost(tau, m, delta)
    return CostReport(
        config=cfg, h=prm.h, dt=prm.dt, t_relax=t_relax, dp=prm.dp, p_max=prm.p_max, N=prm.N, N_T=prm.N_T,
        dof=int(dof), s=int(s), kappa=float(kappa), max_entry=float(mx), lambda_min=float(lmin),
        h_total_max=float(hmax), classical_cost=classical_cost(dof, s, kappa, delta), tau=float(tau),
        queries=float(queries), gates=float(gates), qubits=int(m), tau_theory=tau_theory(cfg, prm),
        extras=extras,
    )


# ---------------------------------------------------------------- exponent algebra

@dataclass(frozen=True)
class Monomial:
    """3^(three) * eps1^(eps) with exact rational exponents."""

    eps: Fraction = Fraction(0)
    three: Fraction = Fraction(0)

    def __mul__(self, other: "Monomial") -> "Monomial":
        return Monomial(self.eps + other.eps, self.three + other.three)

    def __pow__(self, k) -> "Monomial":
        k = Fraction(k)
        return Monomial(self.eps * k, self.three * k)

    def inv(self) -> "Monomial":
        return self ** -1


def _eps(x) -> Monomial:
    return Monomial(eps=Fraction(x))


def _three(x) -> Monomial:
    return Monomial(three=Fraction(x))


def derived_monomial(equation: str, model: str, kind: str, n: int, d: int, literal: bool = False) -> Monomial:
    """Substitute the parameter rules into the cost formulas (delta = eps1, eps_k = eps1^k).

    Logarithms are dropped. Classical: s * dof * sqrt(kappa); quantum:
    tau = s * ||H||_max * t with t ~ 1/lambda_min and 1/dp.

    By default the homogenized wave chain uses kappa ~ h^-2 and
    tau ~ h^-2/dp as carried through the reference cost chain. With
    ``literal=True`` the wave displays are evaluated at dt = delta = h^2
    instead: kappa ~ (h^2/dt^2) h^-2 and, since the mass block keeps the
    max entry at h^d while lambda_min ~ dt^2 h^d, tau ~ 1/(dt^2 dp).
    """
    delta = _eps(1)
    dp = delta
    if model == "canonical":
        eps_fine = _eps(n) if equation == "elliptic" else _eps(1)
        h = (delta * eps_fine) ** Fraction(1, 2)
    else:
        h = delta ** Fraction(1, 2)
    N = h.inv()
    if equation == "elliptic":
        if model == "canonical":
            s, dof = _three(d), N ** d
            kappa = _three(d) * h ** -2
            tau = _three(2 * d) * h ** -2 * dp.inv()
        else:
            s, dof = _three((n + 1) * d), N ** ((n + 1) * d)
            kappa = _three((n + 1) * d) * h ** -2
            tau = _three(2 * (n + 1) * d) * h ** -2 * dp.inv()
    else:
        dt = delta
        N_T = dt.inv()
        if model == "canonical":
            s, dof = _three(d), N ** d * N_T
            # (h + dt/h)/((1 + dt) h) and 1 + dt^2/h^2 with dt = delta, h^2 = delta eps1
            kappa = _three(d) * (h.inv() if equation == "parabolic" else Monomial())
            tau = _three(2 * d) * h.inv() * dp.inv()
        else:
            s, dof = _three(2 * d), N ** (2 * d) * N_T
            kappa = _three(2 * d) * h ** -2
            tau = _three(4 * d) * h ** -2 * dp.inv()
            if literal and equation == "wave":
                kappa = kappa * h ** 2 * dt ** -2
                tau = _three(4 * d) * dt ** -2 * dp.inv()
    if kind == "classical":
        return s * dof * kappa ** Fraction(1, 2)
    return tau


def table1_monomial(equation: str, model: str, kind: str, n: int, d: int) -> Monomial:
    """Reference exponents of the cost summary table."""
    F = Fraction
    if equation == "elliptic":
        if model == "canonical":
            return Monomial(F(-(n + 1) * (d + 1), 2), F(3 * d, 2)) if kind == "classical" else Monomial(F(-(n + 2)), F(2 * d))
        return (Monomial(F(-((n + 1) * d + 1), 2), F(3 * (n + 1) * d, 2)) if kind == "classical"
                else Monomial(F(-2), F(2 * (n + 1) * d)))
    if model == "canonical":
        if kind == "quantum":
            return Monomial(F(-2), F(2 * d))
        return Monomial(F(-2 * d - 3, 2) if equation == "parabolic" else F(-d - 1), F(3 * d, 2))
    return Monomial(F(-2 * d - 3, 2), F(3 * d)) if kind == "classical" else Monomial(F(-2), F(4 * d))


def symbolic_table1_check(ns=(1, 2, 3, 4), ds=(1, 2, 3, 4)) -> list[dict]:
    rows = []
    for eq in EQUATIONS:
        for model in MODELS:
            for kind in ("classical", "quantum"):
                for n in (ns if eq == "elliptic" else (1,)):
                    for d in ds:
                        got = derived_monomial(eq, model, kind, n, d)
                        want = table1_monomial(eq, model, kind, n, d)
                        rows.append(dict(equation=eq, model=model, kind=kind, n=n, d=d,
                                         derived=(got.eps, got.three), table=(want.eps, want.three),
                                         match=got == want))
    return rows


# ---------------------------------------------------------------- sweeps and fits

def fit_exponent(eps, costs) -> tuple[float, float]:
    """Least-squares k in cost ~ C eps^-k; returns (k, rms residual)."""
    eps = np.asarray(eps, dtype=float)
    costs = np.asarray(costs, dtype=float)
    if eps.size < 4:
        raise DomainError("need at least 4 sweep points")
    x, y = np.log(eps), np.log(costs)
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    rms = math.sqrt(res[0] / x.size) if res.size else 0.0
    return float(-coef[0]), rms


def table1_exponent(equation: str, model: str, kind: str, n: int = 1, d: int = 1) -> float:
    return -float(table1_monomial(equation, model, kind, n, d).eps)


def sweep_reports(equation: str, model: str, eps_list, d: int = 1, n: int = 1, coeff: str = "sin1d"):
    return [evaluate(ExperimentConfig(equation, model, d, n, e, None, 1.0, coeff)) for e in eps_list]


def fit_table1(reports_by_cell: dict, tol: float = 0.2) -> list[dict]:
    """``reports_by_cell[(equation, model)]`` holds the CostReports of an eps-sweep."""
    rows = []
    for (eq, model), reports in reports_by_cell.items():
        if len(reports) < 4:
            raise DomainError(f"cell {(eq, model)} has fewer than 4 sweep points")
        eps = [r.config.eps1 for r in reports]
        n, d = reports[0].config.n, reports[0].config.d
        for kind, core, full in (("classical", "classical_core", "classical_cost"), ("quantum", "quantum_core", "tau")):
            k_fit, rms = fit_exponent(eps, [getattr(r, core) for r in reports])
            k_full, _ = fit_exponent(eps, [getattr(r, full) for r in reports])
            k_th = table1_exponent(eq, model, kind, n, d)
            rows.append(dict(equation=eq, model=model, cost_kind=kind, exponent_theory=k_th, exponent_fit=k_fit,
                             exponent_fit_with_logs=k_full, residual=rms, passed=abs(k_fit - k_th) <= tol))
    return rows


def write_table1(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["equation", "model", "cost_kind", "exponent_theory", "exponent_fit", "pass"])
        for r in rows:
            w.writerow([r["equation"], r["model"], r["cost_kind"], repr(float(r["exponent_theory"])),
                        repr(round(float(r["exponent_fit"]), 12)), int(r["passed"])])
        fh.write(FOOTER + "\n")


def write_cost_reports(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CostReport.COLUMNS)
        for r in reports:
            w.writerow(r.csv_row())
        fh.write(FOOTER + "\n")
