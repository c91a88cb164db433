"""Cell problems, first-order reconstruction and homogenization error sweeps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicHermiteSpline

from . import coefficients as coef
from . import fem
from .errors import DomainError
from .fem import FemSolution, TensorMesh

_CELLS_1D = 1024
_GAUSS_1D = 8


@dataclass
class CellProblemResult:
    """Homogenized coefficient plus the periodic corrector.

    ``corrector(y)`` evaluates chi (1D) or the matrix of chi_j (d >= 2, one
    column per direction); ``corrector_grad`` is available in 1D only.
    """

    homogenized_coeff: object
    corrector: Callable
    corrector_grad: Callable | None = None
    meta: dict = field(default_factory=dict)


def _as_cell_function(a) -> Callable:
    if isinstance(a, coef.MultiscaleCoefficient):
        if a.n != 1:
            raise DomainError("cell problems need a coefficient with one fast scale")
        return lambda y: a.evaluate(np.zeros((np.size(y), 1)), [np.reshape(y, (-1, 1))])
    return lambda y: np.asarray(a(np.asarray(y, dtype=float)), dtype=float) * np.ones(np.shape(y))


def cell_problem_1d(a, cells: int = _CELLS_1D, q: int = _GAUSS_1D) -> CellProblemResult:
    """A0 = (int_0^1 1/a)^-1 and chi' = A0/a - 1, chi of zero mean."""
    f = _as_cell_function(a)
    xi, w = fem.composite_gauss(cells, q)
    vals = f(xi)
    if not np.all(np.isfinite(vals)) or vals.min() <= 0:
        raise DomainError(f"cell coefficient must stay positive, min sampled value {vals.min():.3g}")
    inv = 1.0 / vals
    A0 = 1.0 / float(np.sum(w * inv))
    # nodal chi by per-cell integration of chi'; chi' is known exactly at the
    # nodes, so a cubic Hermite interpolant carries the corrector between them
    per_cell = (w * (A0 * inv - 1.0)).reshape(cells, q).sum(axis=1)
    nodes = np.linspace(0.0, 1.0, cells + 1)
    chi_nodes = np.concatenate([[0.0], np.cumsum(per_cell)])
    dchi_nodes = A0 / f(nodes) - 1.0
    spline = CubicHermiteSpline(nodes, chi_nodes, dchi_nodes)
    mean = float(np.sum(w * spline(xi)))
    spline = CubicHermiteSpline(nodes, chi_nodes - mean, dchi_nodes)

    def chi(y):
        return spline(np.mod(y, 1.0))

    def dchi(y):
        return A0 / f(np.mod(np.asarray(y, dtype=float), 1.0)) - 1.0

    return CellProblemResult(A0, chi, dchi, {"normalization": "zero mean", "cells": cells})


def _periodic_elements(M: int, d: int):
    el = fem._elements(M - 1, d)  # lower-left corners 0..M-1 per direction
    return el


def cell_problem_fem(a, d: int, M: int = 64, q: int = 3) -> CellProblemResult:
    """Periodic P1 cell problems on Y = [0,1]^d with M cells per direction.

    Solves -div(a (e_j + grad chi_j)) = 0 with one pinned dof, then removes
    the mean. Returns the d x d homogenized matrix.
    """
    if M > 64:
        raise DomainError("cell meshes are limited to 64 cells per direction")
    if isinstance(a, coef.MultiscaleCoefficient):
        func = lambda y: a.evaluate(np.zeros_like(y), [y])
    else:
        func = a
    h = 1.0 / M
    xi, w = fem.composite_gauss(1, q)
    pts, wts, vals, grads = fem._local_tables(xi, w, d)
    corners = fem._corners(d)
    el = _periodic_elements(M, d)
    C = corners.shape[0]
    nodes = (el[:, None, :] + corners[None, :, :]) % M
    idx = np.ravel_multi_index(tuple(nodes[..., j] for j in range(d)), (M,) * d)
    Y = ((el[:, None, :] + pts[None, :, :]) * h).reshape(-1, d)
    av = np.asarray(func(Y), dtype=float).reshape(len(el), -1)
    if av.min() <= 0:
        raise DomainError("cell coefficient must stay positive")
    g = grads / h
    jac = h ** d
    # local stiffness and load for each direction
    Kloc = np.einsum("eq,q,qad,qbd->eab", av, wts, g, g) * jac
    Floc = -np.einsum("eq,q,qaj->eaj", av, wts, g) * jac
    n = M ** d
    rows = np.repeat(idx, C, axis=1).ravel()
    cols = np.tile(idx, (1, C)).ravel()
    K = sp.coo_matrix((Kloc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    F = np.zeros((n, d))
    for j in range(d):
        np.add.at(F[:, j], idx.ravel(), Floc[:, :, j].ravel())
    keep = np.arange(1, n)
    lu = spla.splu(K[keep][:, keep].tocsc())
    chi = np.zeros((n, d))
    chi[1:] = lu.solve(F[1:])
    chi -= chi.mean(axis=0)
    # A0_ij = int a (delta_ij + d_i chi_j)
    grad_chi = np.einsum("qad,eaj->eqdj", g, chi[idx])
    A0 = np.einsum("eq,q,eqij->ij", av, wts, np.eye(d)[None, None] + grad_chi) * jac
    A0 = 0.5 * (A0 + A0.T)

    def corrector(y):
        y = np.atleast_2d(np.mod(np.asarray(y, dtype=float), 1.0))
        e = np.minimum(np.floor(y / h).astype(int), M - 1)
        loc = y / h - e
        out = np.zeros((y.shape[0], d))
        for c in corners:
            wgt = np.prod(np.where(c == 1, loc, 1.0 - loc), axis=1)
            node = np.ravel_multi_index(tuple(((e + c) % M).T), (M,) * d)
            out += wgt[:, None] * chi[node]
        return out

    return CellProblemResult(A0, corrector, None, {"normalization": "zero mean", "pinned_dof": 0, "M": M})


def reconstruct_two_scale(u0: FemSolution, u1: FemSolution, eps: float) -> Callable:
    """x -> u0(x) + eps * u1(x, x/eps mod 1)."""
    if u0.mesh.d != u1.mesh.d:
        raise DomainError("u0 and u1 live in different dimensions")
    if not (0 < eps):
        raise DomainError("eps must be positive")

    def evaluate(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if np.any(x < -1e-12) or np.any(x > 1 + 1e-12):
            raise DomainError("evaluation point outside the unit cube")
        y = np.mod(x / eps, 1.0)
        return u0(x) + eps * u1(x, y)

    return evaluate


# ---------------------------------------------------------------- 1D reference solves

def _mesh_for(eps: float, ratio: int = 128) -> TensorMesh:
    return TensorMesh(1, int(round(ratio / eps)) - 1)


def _energy_norms(mesh: TensorMesh, e: np.ndarray) -> tuple[float, float]:
    M = fem.mass_d(mesh).csr
    K = fem.stiffness_d(mesh).csr
    return math.sqrt(max(float(e @ (M @ e)), 0.0)), math.sqrt(max(float(e @ (K @ e)), 0.0))


def elliptic_pair(coeff: coef.MultiscaleCoefficient, eps: float, f=1.0, ratio: int = 128):
    """Canonical and homogenized nodal solutions on the same fine mesh h = eps/ratio."""
    c = coeff.with_scales((eps,))
    mesh = _mesh_for(eps, ratio)
    cell = cell_problem_1d(c)
    ue = fem.solve_elliptic(c, f, mesh).coefficients
    u0 = fem.solve_elliptic(coef.constant(cell.homogenized_coeff), f, mesh).coefficients
    return mesh, ue, u0, cell


def _reconstruction_nodes(mesh: TensorMesh, u0: np.ndarray, cell: CellProblemResult, eps: float) -> np.ndarray:
    x = mesh.nodes_1d()
    full = np.concatenate([[0.0], u0, [0.0]])
    du = np.gradient(full, mesh.h)[1:-1]
    return u0 + eps * cell.corrector(x / eps) * du


def parabolic_pair(coeff, eps: float, T: float = 0.5, n_steps: int = 200, f=None, u_init=None, ratio: int = 128):
    """Implicit Euler marches of the canonical and homogenized heat equations at time T."""
    from . import time_integrators as ti

    c = coeff.with_scales((eps,))
    mesh = _mesh_for(eps, ratio)
    cell = cell_problem_1d(c)
    u_init = (lambda X: np.sin(np.pi * X[:, 0])) if u_init is None else u_init
    M = fem.mass_d(mesh)
    # L2 projection of the initial data
    u0_nodes = spla.splu(M.csr.tocsc()).solve(fem.assemble_force(u_init, mesh, q=4))
    F = None if f is None else fem.assemble_force(f, mesh, q=4)
    dt = T / n_steps
    out = []
    for A in (fem.assemble_canonical(c, mesh), fem.assemble_canonical(coef.constant(cell.homogenized_coeff), mesh)):
        system = ti.parabolic_canonical(M, A, dt, n_steps, F, u0_nodes)
        out.append(ti.march_reference(system)[-1])
    return mesh, out[0], out[1], cell


def wave_pair(coeff, eps: float, T: float = 1.0, n_steps: int = 400, u_init=None, ratio: int = 128):
    """Implicit midpoint marches for the canonical and homogenized wave equations.

    Returns the sup over steps of the L2 difference as well.
    """
    from . import time_integrators as ti

    c = coeff.with_scales((eps,))
    mesh = _mesh_for(eps, ratio)
    cell = cell_problem_1d(c)
    if u_init is None:
        def u_init(X):
            r = (X[:, 0] - 0.5) / 0.25
            return np.where(np.abs(r) < 1, np.cos(0.5 * np.pi * r) ** 4, 0.0)
    M = fem.mass_d(mesh)
    u0_nodes = spla.splu(M.csr.tocsc()).solve(fem.assemble_force(u_init, mesh, q=4, subcells=4))
    dt = T / n_steps
    trajs = []
    for A in (fem.assemble_canonical(c, mesh), fem.assemble_canonical(coef.constant(cell.homogenized_coeff), mesh)):
        system = ti.wave_canonical(M, A, dt, n_steps, None, u0_nodes)
        trajs.append(system.component(ti.march_reference(system), "u"))
    Mc = M.csr
    diffs = trajs[0] - trajs[1]
    sup = max(math.sqrt(float(e @ (Mc @ e))) for e in diffs)
    return mesh, trajs[0][-1], trajs[1][-1], cell, sup


# ---------------------------------------------------------------- sweeps and rates

@dataclass
class SweepPoint:
    epsilon: float
    h_ref: float
    h_hom: float
    err_L2: float
    err_H1: float


@dataclass
class RateReport:
    slope: float
    intercept: float
    residual: float
    warnings: list
    slope_running: list


def homogenization_error_rate(epsilons, errors) -> RateReport:
    """Least-squares slope of log(error) against log(eps)."""
    eps = np.asarray(epsilons, dtype=float)
    err = np.asarray(errors, dtype=float)
    if eps.size < 4:
        raise DomainError("need at least 4 sweep points")
    order = np.argsort(eps)[::-1]
    eps, err = eps[order], err[order]
    notes = []
    if np.any(np.diff(err) > 0):
        notes.append("error sequence is not monotone in eps")
    x, y = np.log(eps), np.log(err)
    coef_, res, *_ = np.polyfit(x, y, 1, full=True)
    rms = math.sqrt(res[0] / x.size) if res.size else 0.0
    running = [float("nan")] + [float((y[i] - y[i - 1]) / (x[i] - x[i - 1])) for i in range(1, x.size)]
    return RateReport(float(coef_[0]), float(coef_[1]), rms, notes, running)


def elliptic_sweep(coeff=None, epsilons=(1 / 8, 1 / 16, 1 / 32, 1 / 64), f=1.0, ratio: int = 128):
    coeff = coef.sin1d() if coeff is None else coeff
    points = []
    for eps in epsilons:
        mesh, ue, u0, cell = elliptic_pair(coeff, eps, f, ratio)
        l2, _ = _energy_norms(mesh, ue - u0)
        _, h1 = _energy_norms(mesh, ue - _reconstruction_nodes(mesh, u0, cell, eps))
        points.append(SweepPoint(eps, mesh.h, mesh.h, l2, h1))
    return points


def parabolic_sweep(coeff=None, epsilons=(1 / 8, 1 / 16, 1 / 32, 1 / 64), T: float = 0.5, n_steps: int = 200,
                    f=1.0, ratio: int = 128):
    """Source f constant in time (so f is in L^infinity in time)."""
    coeff = coef.sin1d() if coeff is None else coeff
    points = []
    for eps in epsilons:
        mesh, ue, u0, cell = parabolic_pair(coeff, eps, T, n_steps, f, None, ratio)
        l2, _ = _energy_norms(mesh, ue - u0)
        _, h1 = _energy_norms(mesh, ue - _reconstruction_nodes(mesh, u0, cell, eps))
        points.append(SweepPoint(eps, mesh.h, mesh.h, l2, h1))
    return points


def wave_sweep(coeff=None, epsilons=(1 / 8, 1 / 16, 1 / 32, 1 / 64), T: float = 1.0, n_steps: int = 400,
               ratio: int = 128):
    """err_L2 is the sup over the time steps of the L2 difference."""
    coeff = coef.sin1d() if coeff is None else coeff
    points = []
    for eps in epsilons:
        mesh, ue, u0, cell, sup = wave_pair(coeff, eps, T, n_steps, None, ratio)
        _, h1 = _energy_norms(mesh, ue - _reconstruction_nodes(mesh, u0, cell, eps))
        points.append(SweepPoint(eps, mesh.h, mesh.h, sup, h1))
    return points


def write_sweep(path, points) -> None:
    rate = homogenization_error_rate([p.epsilon for p in points], [p.err_L2 for p in points]) if len(points) >= 4 else None
    eps_sorted = sorted(points, key=lambda p: -p.epsilon)
    running = rate.slope_running if rate else [float("nan")] * len(points)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon", "h_ref", "h_hom", "err_L2", "err_H1", "slope_running"])
        for p, s in zip(eps_sorted, running):
            w.writerow([repr(p.epsilon), repr(p.h_ref), repr(p.h_hom), repr(p.err_L2), repr(p.err_H1),
                        "" if math.isnan(s) else repr(s)])
