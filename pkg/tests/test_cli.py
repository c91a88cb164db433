import json

import pytest

from mslab import cli
from mslab.errors import ConfigError


def _sweep_text(preset, key, values):
    lines = [ln for ln in cli.PRESETS[preset].splitlines() if not ln.startswith(f"sweep.{key}=")]
    return "\n".join(lines + [f"sweep.{key}=" + ",".join(values)]) + "\n"


def _run_text(text, out, jobs=1):
    fixed, ranges = cli.parse_config(text)
    return cli.sweep(cli.expand_sweep(fixed, ranges), out, jobs)


def test_empty_config_names_required_keys():
    with pytest.raises(ConfigError) as exc:
        cli.parse_config("")
    for key in cli.REQUIRED["pipeline"]:
        assert key in str(exc.value)


def test_unknown_keys_listed():
    with pytest.raises(ConfigError, match="colour, mesh.q"):
        cli.parse_config("equation=elliptic\nmodel=canonical\nd=1\neps1=1/8\ncolour=red\nmesh.q=3\n")


def test_empty_range_rejected():
    with pytest.raises(ConfigError, match="empty range"):
        cli.parse_config("task=spectral\nd=1\nsweep.mesh.h=,\n")


def test_fraction_values_and_comments():
    fixed, ranges = cli.parse_config("# smoke\nequation=elliptic  # trailing\nmodel=canonical\nd=1\neps1=1/8\n"
                                     "sweep.delta=1/8, 1/16\n")
    assert fixed["eps1"] == 0.125 and ranges["delta"] == [0.125, 0.0625]


def test_bad_number_reported():
    with pytest.raises(ConfigError, match="eps1"):
        cli.parse_config("equation=elliptic\nmodel=canonical\nd=1\neps1=one\n")


def test_expansion_is_order_free():
    a = cli.expand_sweep({"task": "spectral"}, {"mesh.h": [0.25, 0.125], "d": [2, 1]})
    b = cli.expand_sweep({"task": "spectral"}, {"d": [1, 2], "mesh.h": [0.125, 0.25]})
    assert a == b and len(a) == 4


def test_smoke_preset_emits_four_csvs(tmp_path):
    (m,) = _run_text(cli.PRESETS["elliptic_sin1d_smoke"], tmp_path)
    names = sorted(p.rsplit("/", 1)[-1] for p in m.outputs)
    assert names == ["cost_report.csv", "pipeline_trace.csv", "solution.csv", "spectral_report.csv"]
    assert m.passed and m.wall_time < 10


def test_single_point_sweep_equals_run(tmp_path):
    cfg = cli.expand_sweep(*cli.parse_config(cli.PRESETS["elliptic_sin1d_smoke"]))[0]
    m = cli.run(cfg, tmp_path / "run")
    (s,) = cli.sweep([cfg], tmp_path / "sweep")
    for a, b in zip(m.outputs, s.outputs):
        assert open(a, "rb").read() == open(b, "rb").read()


@pytest.mark.parametrize("preset,key,values", [
    ("h_sweep", "mesh.h", ["1/8", "1/16", "1/32", "1/64"]),
    ("dt_sweep", "time.dt", ["1/8", "1/16", "1/32", "1/64"]),
])
def test_permuted_sweep_identical_bytes(tmp_path, preset, key, values):
    _run_text(_sweep_text(preset, key, values), tmp_path / "a")
    _run_text(_sweep_text(preset, key, values[::-1]), tmp_path / "b", jobs=2)
    files = sorted(p.name for p in (tmp_path / "a").glob("*_sweep.csv"))
    assert files
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_dt_sweep_rows_round_trip(tmp_path):
    _run_text(cli.PRESETS["dt_sweep"], tmp_path)
    rows = cli.read_csv(tmp_path / "time_order_sweep.csv")
    assert [r["dt"] for r in rows] == [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    assert set(rows[0]) == set(cli.TIME_ORDER_COLUMNS)


def test_spectral_report_round_trip(tmp_path):
    _run_text(cli.PRESETS["h_sweep"], tmp_path)
    rows = cli.read_csv(tmp_path / "spectral_report_sweep.csv")
    assert len(rows) == 4 and all(r["pass"] == 1 for r in rows)
    assert all(r["kappa"] == pytest.approx(r["lmax"] / r["lmin"]) for r in rows)


def test_main_exit_codes(tmp_path, capsys):
    assert cli.main(["--preset", "elliptic_sin1d_smoke", "--out", str(tmp_path)]) == 0
    assert json.loads(capsys.readouterr().out)["passed"]
    bad = tmp_path / "bad.cfg"
    bad.write_text("wrong=1\n")
    assert cli.main(["--config", str(bad), "--out", str(tmp_path)]) == 2
    assert cli.main(["--preset", "nope", "--out", str(tmp_path)]) == 2


def test_verify_suite(tmp_path):
    res = cli.verify(tmp_path)
    assert all(res["checks"].values())
    assert cli.read_csv(tmp_path / "verify.csv")[0]["check"] == "entries_N1"
