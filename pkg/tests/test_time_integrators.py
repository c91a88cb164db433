import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from mslab import coefficients as coef
from mslab import fem
from mslab import time_integrators as ti
from mslab.errors import DomainError


def _setup(N=7):
    mesh = fem.TensorMesh(1, N)
    M, A = fem.mass_d(mesh), fem.assemble_canonical(coef.sin1d(), mesh)
    u0 = fem.interpolate(mesh, lambda X: np.sin(np.pi * X[:, 0]))
    return mesh, M, A, u0


def test_block_bidiagonal_layout():
    a = sp.csr_matrix(np.array([[2.0, 0.0], [1.0, 3.0]]))
    b = sp.identity(2, format="csr")
    G = ti.build_block_bidiagonal(a, b, 3).to_dense()
    assert np.array_equal(G[:2, :2], a.toarray())
    assert np.array_equal(G[2:4, :2], -np.eye(2))
    assert np.array_equal(G[:2, 2:], np.zeros((2, 4)))


def test_invalid_step_rejected():
    _, M, A, u0 = _setup()
    with pytest.raises(DomainError):
        ti.parabolic_canonical(M, A, -0.1, 4, None, u0)
    with pytest.raises(DomainError):
        ti.wave_canonical(M, A, 0.1, 0, None, u0)


@pytest.mark.parametrize("layout", ti.LAYOUTS)
def test_global_solve_equals_marching(layout):
    mesh, M, A, u0 = _setup(5)
    F = fem.assemble_force(1.0, mesh)
    if layout.endswith("canonical"):
        build = ti.parabolic_canonical if layout.startswith("parabolic") else ti.wave_canonical
        system = build(M, A, 0.05, 10, F, u0)
    else:
        hs = fem.assemble_two_scale(coef.sin1d(), mesh)
        build = ti.parabolic_homogenized if layout.startswith("parabolic") else ti.wave_homogenized
        system = build(M, hs, 0.05, 10, F, u0)
    traj = system.march_reference()
    assert np.max(np.abs(system.solve_global() - traj)) <= 1e-9 * max(1.0, np.abs(traj).max())
    assert system.layout == layout


def test_parabolic_one_step_by_hand():
    _, M, A, u0 = _setup(3)
    dt = 0.1
    system = ti.parabolic_canonical(M, A, dt, 1, None, u0)
    x1 = np.linalg.solve((M.csr + dt * A.csr).toarray(), M.csr @ u0)
    assert np.allclose(system.march_reference()[0], x1, atol=1e-14)


@given(st.integers(0, 1000))
@settings(max_examples=10, deadline=None)
def test_midpoint_conserves_energy(seed):
    _, M, A, _ = _setup(7)
    rng = np.random.default_rng(seed)
    u0, v0 = rng.standard_normal(7), rng.standard_normal(7)
    system = ti.wave_canonical(M, A, 0.05, 40, None, u0, v0)
    traj = system.march_reference()
    assert ti.energy_drift(system, traj, M, A) <= 1e-8


def _modal(M, A):
    return sla.eigh(A.to_dense(), M.to_dense())


def _fit(dts, errs):
    return np.polyfit(np.log(dts), np.log(errs), 1)[0]


def test_implicit_euler_first_order():
    mesh = fem.TensorMesh(1, 15)
    M, A = fem.mass_d(mesh), fem.stiffness_d(mesh)
    u0 = fem.interpolate(mesh, lambda X: np.sin(np.pi * X[:, 0]))
    lam, V = _modal(M, A)
    T = 0.1
    exact = V @ (np.exp(-lam * T) * (V.T @ (M.csr @ u0)))
    dts = [T / 2 ** k for k in range(1, 5)]
    errs = []
    for dt in dts:
        s = ti.parabolic_canonical(M, A, dt, int(round(T / dt)), None, u0)
        errs.append(np.linalg.norm(s.march_reference()[-1] - exact))
    assert abs(_fit(dts, errs) - 1) <= 0.15


def test_homogenized_initial_corrector_satisfies_constraint():
    mesh, M, _, u0 = _setup(5)
    hs = fem.assemble_two_scale(coef.sin1d(), mesh)
    system = ti.parabolic_homogenized(M, hs, 0.1, 3, fem.assemble_force(1.0, mesh), u0)
    A11, A12, _, _ = hs.split()
    assert np.linalg.norm(A11 @ system.initial("u1") + A12 @ u0) <= 1e-10
    traj = system.march_reference()
    assert np.all(ti.constraint_residuals(system, traj, hs) <= 1e-9)


def test_wave_homogenized_keeps_constraint():
    mesh, M, _, u0 = _setup(5)
    hs = fem.assemble_two_scale(coef.sin1d(), mesh)
    system = ti.wave_homogenized(M, hs, 0.1, 5, None, u0)
    traj = system.march_reference()
    assert np.all(ti.constraint_residuals(system, traj, hs) <= 1e-9)


def test_components_partition_block():
    mesh, M, A, u0 = _setup(4)
    system = ti.wave_canonical(M, A, 0.1, 2, None, u0)
    assert [c[0] for c in system.components] == ["u", "v"]
    assert system.block_size == 8
    assert np.array_equal(system.initial("u"), u0)
    with pytest.raises(KeyError):
        system.component(system.x0, "w")


def test_trajectory_csv(tmp_path):
    _, M, A, u0 = _setup(3)
    system = ti.parabolic_canonical(M, A, 0.1, 2, None, u0)
    traj = system.march_reference()
    long_path, wide_path = tmp_path / "long.csv", tmp_path / "wide.csv"
    ti.write_trajectory(long_path, system, traj)
    ti.write_trajectory(wide_path, system, traj, wide=True)
    assert long_path.read_text().splitlines()[0] == "step,time,dof,value"
    assert len(long_path.read_text().splitlines()) == 1 + 3 * 3
    rows = wide_path.read_text().splitlines()
    assert len(rows) == 4 and float(rows[-1].split(",")[1]) == pytest.approx(0.2)
