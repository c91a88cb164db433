import math

import pytest

from mslab import cost_model as cm
from mslab.errors import BudgetExceededError, DomainError


def test_canonical_mesh_rule():
    prm = cm.select_parameters(cm.ExperimentConfig("elliptic", "canonical", 1, 1, 1 / 16))
    assert prm.h == pytest.approx(1 / 16) and prm.N == 15
    assert prm.dp == 1 / 16 and prm.p_max == pytest.approx(2 + math.log(16))


def test_homogenized_mesh_rule():
    prm = cm.select_parameters(cm.ExperimentConfig("elliptic", "homogenized", 1, 1, 1 / 16))
    assert prm.h == pytest.approx(1 / 4)


def test_time_step_rule():
    prm = cm.select_parameters(cm.ExperimentConfig("parabolic", "canonical", 1, 1, 1 / 8))
    assert prm.dt == pytest.approx(1 / 8) and prm.N_T == 8


def test_degenerate_mesh_rejected():
    # h = sqrt(0.9) rounds to a mesh with no interior node
    with pytest.raises(DomainError, match="no interior"):
        cm.select_parameters(cm.ExperimentConfig("elliptic", "homogenized", 1, 1, 0.9))


def test_config_invariants():
    with pytest.raises(DomainError):
        cm.ExperimentConfig("elliptic", "canonical", 1, 1, 1 / 8, delta=1 / 4)
    with pytest.raises(DomainError):
        cm.ExperimentConfig("wave", "canonical", 1, 2, 1 / 8)
    assert cm.ExperimentConfig(n=3, eps1=0.5).epsilons == (0.5, 0.25, 0.125)


def test_budget_guard_reports_projection():
    cfg = cm.ExperimentConfig("elliptic", "homogenized", 3, 3, 1 / 64)
    with pytest.raises(BudgetExceededError) as exc:
        cm.select_parameters(cfg)
    assert exc.value.required > 2_000_000


def test_classical_cost_unit():
    assert cm.classical_cost(1, 1, 1, math.exp(-1)) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        cm.classical_cost(1, 1, 0, 0.1)


def test_quantum_cost_at_unit_loglog():
    delta = 0.01
    tau = delta * math.exp(math.e)
    q, g = cm.quantum_cost(tau, 5, delta)
    assert q == pytest.approx(tau * math.e)
    assert g == pytest.approx(tau * (5 + math.e ** 2.5) * math.e)
    with pytest.raises(DomainError):
        cm.quantum_cost(0.0, 1, delta)


@pytest.mark.parametrize("eps,p,want", [
    (0.1, math.inf, 0.1),
    (math.exp(-1), 2, math.exp(-1) * math.sqrt(2)),
    (0.01, 4 / 3, 0.1),
])
def test_parabolic_error_rate(eps, p, want):
    assert cm.parabolic_error_rate(eps, p) == pytest.approx(want, rel=1e-12)


def test_parabolic_error_rate_guard():
    with pytest.raises(DomainError):
        cm.parabolic_error_rate(0.1, 1.0)


def test_fit_recovers_synthetic_exponent():
    eps = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    k, rms = cm.fit_exponent(eps, [7.0 * e ** -2.5 for e in eps])
    assert k == pytest.approx(2.5, abs=1e-12) and rms <= 1e-12
    with pytest.raises(DomainError):
        cm.fit_exponent(eps[:3], [1, 2, 3])


def test_symbolic_table_reproduced():
    rows = cm.symbolic_table1_check()
    assert len(rows) == 96 and all(r["match"] for r in rows)


def test_literal_wave_reading_differs():
    # evaluating the wave displays at dt = h^2 breaks the homogenized quantum exponent
    lit = cm.derived_monomial("wave", "homogenized", "quantum", 1, 1, literal=True)
    assert lit != cm.table1_monomial("wave", "homogenized", "quantum", 1, 1)


def test_elliptic_canonical_report():
    rep = cm.evaluate(cm.ExperimentConfig("elliptic", "canonical", 1, 1, 1 / 8))
    assert rep.dof == rep.N == 7 and rep.s == 3
    assert rep.tau == pytest.approx(rep.s * rep.h_total_max * rep.t_relax)
    assert rep.classical_cost == pytest.approx(cm.classical_cost(rep.dof, rep.s, rep.kappa, 1 / 8))
    assert len(rep.csv_row()) == len(cm.CostReport.COLUMNS)


def test_tau_against_theory_expression():
    for e in (1 / 8, 1 / 16, 1 / 32, 1 / 64):
        rep = cm.evaluate(cm.ExperimentConfig("elliptic", "canonical", 1, 1, e))
        assert 0.1 <= rep.tau / rep.tau_theory <= 10


def test_costs_monotone_in_eps():
    reps = cm.sweep_reports("elliptic", "canonical", (1 / 8, 1 / 16, 1 / 32))
    assert all(a.classical_cost < b.classical_cost for a, b in zip(reps, reps[1:]))
    assert all(a.tau < b.tau for a, b in zip(reps, reps[1:]))


def test_elliptic_canonical_exponents():
    reps = cm.sweep_reports("elliptic", "canonical", (1 / 8, 1 / 16, 1 / 32, 1 / 64))
    rows = {r["cost_kind"]: r for r in cm.fit_table1({("elliptic", "canonical"): reps})}
    assert rows["classical"]["passed"] and rows["quantum"]["passed"]


def test_fit_table1_needs_four_points():
    reps = cm.sweep_reports("elliptic", "canonical", (1 / 8, 1 / 16))
    with pytest.raises(DomainError):
        cm.fit_table1({("elliptic", "canonical"): reps})


def test_table_csv_has_footer(tmp_path):
    path = tmp_path / "t.csv"
    cm.write_table1(path, [dict(equation="wave", model="canonical", cost_kind="quantum", exponent_theory=2.0,
                                exponent_fit=2.05, passed=True)])
    lines = path.read_text().splitlines()
    assert lines[0] == "equation,model,cost_kind,exponent_theory,exponent_fit,pass"
    assert lines[-1] == cm.FOOTER
