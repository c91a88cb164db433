"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""

import math
import subprocess
import sys
import time

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse.linalg as spla
from scipy import integrate

from mslab import cli
from mslab import coefficients as coef
from mslab import cost_model as cm
from mslab import fem
from mslab import homogenization as hom
from mslab import schrodinger as sch
from mslab import spectral
from mslab import time_integrators as ti
from mslab.linalg import as_csr, cg_solve, dense_direct_solve

RESULTS = []

H_SWEEP = (1 / 8, 1 / 16, 1 / 32, 1 / 64)
EPS_SWEEP = (1 / 8, 1 / 16, 1 / 32, 1 / 64)


def _report(capsys, number, title, failures, detail, t0):
    ok = not failures
    line = f"criterion {number} [{title}]: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - t0:.1f}s) {detail}"
    if failures:
        line += " | failing: " + "; ".join(failures)
    RESULTS.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def _slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ---------------------------------------------------------------- 1

def test_c1_matrix_entries(capsys):
    t0 = time.perf_counter()
    failures, worst = [], 0.0
    for N in (1, 3, 7, 31):
        mesh = fem.TensorMesh(1, N)
        h = mesh.h
        M, K = fem.mass_1d(mesh).to_dense(), fem.stiffness_1d(mesh).to_dense()
        M_ref = np.diag(np.full(N, 2 * h / 3)) + np.diag(np.full(N - 1, h / 6), 1) + np.diag(np.full(N - 1, h / 6), -1)
        K_ref = np.diag(np.full(N, 2 / h)) + np.diag(np.full(N - 1, -1 / h), 1) + np.diag(np.full(N - 1, -1 / h), -1)
        dev = max(np.max(np.abs(M - M_ref)), np.max(np.abs(K - K_ref)) * h)
        worst = max(worst, dev)
        if dev > 1e-15:
            failures.append(f"N={N} deviation {dev:.2e}")
    _report(capsys, 1, "matrix entries", failures, f"max deviation {worst:.1e} (stiffness scaled by h)", t0)


# ---------------------------------------------------------------- 2

def test_c2_sparsity(capsys):
    t0 = time.perf_counter()
    failures, got = [], []
    for d in (1, 2, 3):
        s = fem.assemble_canonical(coef.product_nscale(), fem.TensorMesh(d, 7 if d < 3 else 5)).sparsity()
        got.append(f"A d={d}: {s}")
        if s != 3 ** d:
            failures.append(f"canonical d={d}: {s} != {3 ** d}")
    for d in (1, 2):
        hs = fem.assemble_two_scale(coef.product_nscale(), fem.TensorMesh(d, 7 if d == 1 else 5))
        s = hs.matrix.sparsity(hs.interior_rows())
        got.append(f"two-scale d={d}: {s}")
        if s != 3 ** (2 * d) + 3 ** d:
            failures.append(f"two-scale d={d}: {s} != {3 ** (2 * d) + 3 ** d}")
    hs = fem.assemble_reiterated(coef.product_nscale((1 / 8, 1 / 64)), fem.TensorMesh(1, 7), n=2)
    s = hs.matrix.sparsity(hs.interior_rows())
    want = 3 + 9 + 27
    got.append(f"reiterated n=2 d=1: {s}")
    if s != want:
        failures.append(f"reiterated: {s} != {want}")
    _report(capsys, 2, "sparsity", failures, ", ".join(got), t0)


# ---------------------------------------------------------------- 3

def _bound_points():
    for coeff in ("sin1d", "product_nscale"):
        for d in (1, 2):
            for case in spectral.CASES:
                if case == "reiterated" and d == 2:
                    continue  # n = 2 in two dimensions starts above 3e5 unknowns at h = 1/8
                for h in H_SWEEP:
                    if d == 1 and case == "reiterated" and h < 1 / 32:
                        continue
                    if d == 2 and case in ("two_scale", "parabolic_homogenized", "wave_homogenized") and h < 1 / 16:
                        continue
                    yield coeff, d, case, h


def test_c3_spectral_bounds(capsys):
    t0 = time.perf_counter()
    failures, worst, count = [], 0.0, 0
    for coeff, d, case, h in _bound_points():
        rep = spectral.verify_bounds(case, d, h, coeff, dt=h, n=2 if case == "reiterated" else 1)
        count += 1
        worst = max(worst, rep.kappa / rep.theory_bound_kappa)
        if not rep.bound_satisfied:
            failures.append(f"{coeff} d={d} {case} h={h}: kappa {rep.kappa:.4g} > {rep.theory_bound_kappa:.4g}")
    # at fixed eps the coarse elements average the oscillation, so lambda_max creeps from the mean
    # towards beta as h falls; the pure mesh slope is judged with a = 1 and on meshes resolving eps
    slopes = {"constant": _slope(H_SWEEP, [spectral.verify_bounds("canonical", 1, h).kappa for h in H_SWEEP])}
    fine = (1 / 64, 1 / 128, 1 / 256, 1 / 512)
    for coeff in ("sin1d", "product_nscale"):
        slopes[coeff + " resolved"] = _slope(fine, [spectral.verify_bounds("canonical", 1, h, coeff).kappa
                                                    for h in fine])
    for name, slope in slopes.items():
        if abs(slope + 2) > 0.1:
            failures.append(f"kappa slope {name} {slope:.3f}")
    raw = _slope(H_SWEEP, [spectral.verify_bounds("canonical", 1, h, "sin1d").kappa for h in H_SWEEP])
    detail = ", ".join(f"{k} {v:.3f}" for k, v in slopes.items())
    _report(capsys, 3, "spectral bounds", failures,
            f"{count} reports, max kappa/bound {worst:.3f}, kappa(A) slopes: {detail} (sin1d on 1/8..1/64: {raw:.3f})",
            t0)


# ---------------------------------------------------------------- 4

def _elliptic_order():
    a = coef.smooth(lambda X: 1.0 + 0.5 * X[:, 0], 1.0, 1.5)

    def f(X):
        x = X[:, 0]
        return (1.0 + 0.5 * x) * np.pi ** 2 * np.sin(np.pi * x) - 0.5 * np.pi * np.cos(np.pi * x)

    Ns = (7, 15, 31, 63)
    errs = [fem.l2_error(fem.solve_elliptic(a, f, fem.TensorMesh(1, N)), lambda X: np.sin(np.pi * X[:, 0]))
            for N in Ns]
    return _slope([1 / (N + 1) for N in Ns], errs)


def _euler_order():
    # exact semi-discrete oracle from the generalized eigenpairs of (A, M)
    mesh = fem.TensorMesh(1, 15)
    M, A = fem.mass_d(mesh), fem.stiffness_d(mesh)
    u0 = fem.interpolate(mesh, lambda X: np.sin(np.pi * X[:, 0]))
    lam, V = sla.eigh(A.to_dense(), M.to_dense())
    T = 0.1
    exact = V @ (np.exp(-lam * T) * (V.T @ (M.csr @ u0)))
    dts = [T / 2 ** k for k in range(3, 7)]
    errs = []
    for dt in dts:
        traj = ti.parabolic_canonical(M, A, dt, int(round(T / dt)), None, u0).march_reference()
        diff = traj[-1] - exact
        errs.append(math.sqrt(diff @ (M.csr @ diff)))
    return _slope(dts, errs)


def test_c4_fem_and_time_order(capsys):
    t0 = time.perf_counter()
    failures = []
    s_ell = _elliptic_order()
    if abs(s_ell - 2) > 0.1:
        failures.append(f"elliptic slope {s_ell:.3f}")
    s_eul = _euler_order()
    if abs(s_eul - 1) > 0.1:
        failures.append(f"implicit Euler slope {s_eul:.3f}")
    dts = (1 / 8, 1 / 16, 1 / 32, 1 / 64)
    pts = [cli.time_order_point("wave", 1, 15, dt, T=0.5, coeff="constant") for dt in dts]
    s_mid = _slope(dts, [p["err_L2"] for p in pts])
    if abs(s_mid - 2) > 0.1:
        failures.append(f"midpoint slope {s_mid:.3f}")
    mesh = fem.TensorMesh(1, 31)
    M, A = fem.mass_d(mesh), fem.assemble_canonical(coef.sin1d(), mesh)
    rng = np.random.default_rng(0)
    system = ti.wave_canonical(M, A, 1 / 32, 64, None, rng.standard_normal(31), rng.standard_normal(31))
    drift = ti.energy_drift(system, system.march_reference(), M, A)
    if drift > 1e-8:
        failures.append(f"energy drift {drift:.2e}")
    _report(capsys, 4, "discretization order", failures,
            f"elliptic {s_ell:.3f}, Euler {s_eul:.3f}, midpoint {s_mid:.3f}, drift {drift:.1e}", t0)


# ---------------------------------------------------------------- 5

def test_c5_homogenization_rates(capsys):
    t0 = time.perf_counter()
    failures, slopes = [], {}
    c = coef.sin1d()
    sweeps = {"elliptic": hom.elliptic_sweep, "parabolic": hom.parabolic_sweep, "wave": hom.wave_sweep}
    for name, run in sweeps.items():
        pts = run(c, EPS_SWEEP)
        rep = hom.homogenization_error_rate([p.epsilon for p in pts], [p.err_L2 for p in pts])
        slopes[name] = rep.slope
        if abs(rep.slope - 1) > 0.2:
            failures.append(f"{name} slope {rep.slope:.3f}")
    worst = 0.0
    cells = [
        (c, lambda y: 2.0 + np.sin(2 * np.pi * y)),
        (None, lambda y: 1.0 + 0.5 * np.cos(2 * np.pi * y) ** 2),
        (None, lambda y: 3.0 + np.sin(2 * np.pi * y) + 0.5 * np.sin(6 * np.pi * y)),
    ]
    for given, a in cells:
        ref = 1.0 / integrate.quad(lambda y: 1.0 / a(y), 0.0, 1.0, epsabs=1e-14, epsrel=1e-14, limit=200)[0]
        err = abs(hom.cell_problem_1d(a if given is None else given).homogenized_coeff - ref) / ref
        worst = max(worst, err)
    if worst > 1e-8:
        failures.append(f"harmonic mean deviation {worst:.1e}")
    detail = ", ".join(f"{k} {v:.3f}" for k, v in slopes.items()) + f", A0 deviation {worst:.1e}"
    _report(capsys, 5, "homogenization rates", failures, detail, t0)


# ---------------------------------------------------------------- 6

def _elliptic_system(N):
    mesh = fem.TensorMesh(1, N)
    return fem.assemble_canonical(coef.sin1d(), mesh), fem.assemble_force(1.0, mesh)


def _decay_rates(A, F):
    """Fitted decay of ||u(t) - u_inf|| from the exact flow and from the emulator."""
    A = as_csr(A)
    lmin = spectral.extreme_eigs(A)[0]
    u_inf = spla.spsolve(A.tocsc(), F)
    ts = np.linspace(1.0, 4.0, 7) / lmin
    exact = [np.linalg.norm(sch.relaxation_solve(A, F, np.zeros(len(F)), 0.5, t=t)[0] - u_inf) for t in ts]
    ext = sch.extend_system(A, F, np.zeros(len(F)))
    h1 = sch.hermitian_split(ext)[0]
    system = sch.schrodingerize(ext, 1e-3, sch.safe_p_max(h1, ts[-1], 1e-3))
    k = sch.recovery_point(system, ts[-1])
    emulated, drift = [], 0.0
    for t in ts:
        w = sch.evolve(system, t, method="cayley")
        drift = max(drift, system.meta["norm_drift"])
        emulated.append(np.linalg.norm(sch.recover_u(w, system.p_grid, k) - u_inf))
    rate = lambda errs: -np.polyfit(ts, np.log(errs), 1)[0]
    return lmin, rate(exact), rate(emulated), drift


def test_c6_schrodingerization(capsys):
    t0 = time.perf_counter()
    failures = []
    A, F = _elliptic_system(7)
    lmin, r_exact, r_emul, drift = _decay_rates(A, F)
    for name, r in (("exact flow", r_exact), ("emulated", r_emul)):
        if abs(r - lmin) > 0.05 * lmin:
            failures.append(f"{name} decay rate {r:.4g} vs lambda_min {lmin:.4g}")
    if drift > 1e-8:
        failures.append(f"unitarity drift {drift:.1e}")
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    spd = Q @ np.diag(np.linspace(0.5, 4.0, 8)) @ Q.T
    errors = {}
    for name, (a, f) in {"random SPD 8x8": (spd, rng.standard_normal(8)), "d=1 N=15": _elliptic_system(15)}.items():
        res = sch.pipeline(a, f, 1e-2)
        errors[name] = res.rel_error
        drift = max(drift, res.system.meta["norm_drift"])
        if res.rel_error > 1e-2:
            failures.append(f"{name} error {res.rel_error:.2e}")
    if drift > 1e-8:
        failures.append(f"unitarity drift {drift:.1e}")
    detail = (f"lambda_min {lmin:.4g}, fitted {r_exact:.4g} (exact) {r_emul:.4g} (emulated), drift {drift:.1e}, "
              + ", ".join(f"{k} err {v:.1e}" for k, v in errors.items()))
    _report(capsys, 6, "Schrodingerization", failures, detail, t0)


# ---------------------------------------------------------------- 7

def test_c7_cost_model(capsys):
    t0 = time.perf_counter()
    failures = []
    sym = cm.symbolic_table1_check()
    bad = [r for r in sym if not r["match"]]
    if bad:
        failures.append(f"{len(bad)} symbolic cells differ")
    cells = [(eq, m) for eq in cm.EQUATIONS for m in cm.MODELS]
    rows = cm.fit_table1({c: cm.sweep_reports(*c, EPS_SWEEP) for c in cells})
    # classical homogenized cells are reported in table1.csv but are not part of this criterion
    judged = [r for r in rows if r["cost_kind"] == "quantum" or r["model"] == "canonical"]
    for r in judged:
        if not r["passed"]:
            failures.append(f"{r['equation']} {r['model']} {r['cost_kind']}: fit {r['exponent_fit']:.3f} "
                            f"vs {r['exponent_theory']:.3f}")
    detail = (f"symbolic {len(sym) - len(bad)}/{len(sym)}, numeric {sum(r['passed'] for r in judged)}/{len(judged)}"
              " cells")
    _report(capsys, 7, "cost exponents", failures, detail, t0)


# ---------------------------------------------------------------- 8

def _spd_systems():
    for d, N in ((1, 7), (1, 63), (2, 7), (2, 31), (3, 7), (3, 15)):
        mesh = fem.TensorMesh(d, N)
        yield f"mass d={d} N={N}", fem.mass_d(mesh)
        yield f"canonical d={d} N={N}", fem.assemble_canonical(coef.sin1d(), mesh)
    for d, N in ((1, 7), (1, 31), (2, 5)):
        yield f"two-scale d={d} N={N}", fem.assemble_two_scale(coef.sin1d(), fem.TensorMesh(d, N)).matrix
    yield "reiterated n=2 N=7", fem.assemble_reiterated(coef.product_nscale((1 / 8, 1 / 64)), fem.TensorMesh(1, 7),
                                                        n=2).matrix
    mesh = fem.TensorMesh(1, 15)
    M, A = fem.mass_d(mesh), fem.assemble_canonical(coef.sin1d(), mesh)
    for blk in ti.wave_canonical(M, A, 1 / 16, 2).diagonal_sub_blocks():
        yield "wave sub-block", blk
    hs = fem.assemble_two_scale(coef.sin1d(), mesh)
    yield "parabolic homogenized block", ti.parabolic_homogenized(M, hs, 1 / 16, 2).diagonal_sub_blocks()[0]


def test_c8_oracle_equivalence(capsys):
    t0 = time.perf_counter()
    failures, worst_march, worst_cg, count = [], 0.0, 0.0, 0
    mesh = fem.TensorMesh(1, 7)
    M, A = fem.mass_d(mesh), fem.assemble_canonical(coef.sin1d(), mesh)
    hs = fem.assemble_two_scale(coef.sin1d(), mesh)
    F = fem.assemble_force(1.0, mesh)
    u0 = fem.interpolate(mesh, lambda X: np.sin(np.pi * X[:, 0]))
    builders = {
        "parabolic_canonical": lambda: ti.parabolic_canonical(M, A, 1 / 16, 16, F, u0),
        "parabolic_homogenized": lambda: ti.parabolic_homogenized(M, hs, 1 / 16, 16, F, u0),
        "wave_canonical": lambda: ti.wave_canonical(M, A, 1 / 16, 16, F, u0),
        "wave_homogenized": lambda: ti.wave_homogenized(M, hs, 1 / 16, 16, F, u0),
    }
    for name, build in builders.items():
        system = build()
        traj = system.march_reference()
        dev = np.max(np.abs(system.solve_global() - traj)) / max(1.0, np.abs(traj).max())
        worst_march = max(worst_march, dev)
        if dev > 1e-9:
            failures.append(f"{name} global vs march {dev:.1e}")
    rng = np.random.default_rng(1)
    for name, mat in _spd_systems():
        n = as_csr(mat).shape[0]
        assert n <= 5000, name
        b = rng.standard_normal(n)
        ref = dense_direct_solve(mat, b)
        x, _ = cg_solve(mat, b, tol=1e-13)
        dev = np.linalg.norm(x - ref) / np.linalg.norm(ref)
        worst_cg = max(worst_cg, dev)
        count += 1
        if dev > 1e-8:
            failures.append(f"CG on {name}: {dev:.1e}")
    _report(capsys, 8, "oracle equivalence", failures,
            f"global vs march {worst_march:.1e}, CG vs dense {worst_cg:.1e} over {count} systems", t0)


# ---------------------------------------------------------------- 9

def _cli(preset, out, jobs):
    proc = subprocess.run([sys.executable, "-m", "mslab.cli", "--preset", preset, "--out", str(out), "--jobs", str(jobs)],
                          capture_output=True, text=True)
    return proc.returncode


def test_c9_cli_determinism(capsys, tmp_path):
    t0 = time.perf_counter()
    failures, n_files = [], 0
    for preset in ("elliptic_sin1d_smoke", "epsilon_sweep", "h_sweep", "dt_sweep"):
        outs = [tmp_path / preset / tag for tag in ("a", "b", "c")]
        codes = [_cli(preset, outs[0], 1), _cli(preset, outs[1], 1), _cli(preset, outs[2], 4)]
        if any(codes):
            failures.append(f"{preset} exit codes {codes}")
        files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
        if not files:
            failures.append(f"{preset} wrote no CSV")
        for rel in files:
            n_files += 1
            ref = (outs[0] / rel).read_bytes()
            for other in outs[1:]:
                if not (other / rel).exists() or (other / rel).read_bytes() != ref:
                    failures.append(f"{preset}/{rel} differs in {other.name}")
    _report(capsys, 9, "CLI determinism", failures, f"{n_files} CSVs identical across 2 runs and jobs 1/4", t0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
