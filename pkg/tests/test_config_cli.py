import json

import pytest

from ergomfg.cli import main
from ergomfg.config import DEFAULTS, parse_config, validate
from ergomfg.errors import ConfigError

SMALL = """
[grid]
n = 32
[time]
T = 1.0
T_list = [1.0, 2.0, 4.0]
dt = 0.02
[solver]
tol_fp = 1e-3
max_iter = 400
tol_outer = 1e-3
T_avg = 5.0
[run]
output_dir = "{out}"
"""


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_defaults_filled():
    cfg = validate({})
    assert cfg.raw == DEFAULTS
    assert cfg.grid.n == 128 and cfg.problem().time_grid.steps == 500


@pytest.mark.parametrize(
    "data,key,fragment",
    [
        ({"coupling": {"kernel_radius": 0.6}}, "coupling.kernel_radius", "radius must be in (0, 1/2)"),
        ({"coupling": {"c": 0.0}}, "coupling.c", "c must be in (0, 1]"),
        ({"grid": {"n": 12.5}}, "grid.n", "integer"),
        ({"solver": {"tol_fp": -1}}, "solver.tol_fp", "positive"),
        ({"grid": {"bogus": 1}}, "grid.bogus", "unknown key"),
        ({"extra": {}}, "extra", "unknown section"),
        ({"time": {"T_list": [5.0, 5.0, 10.0]}}, "time.T_list", "increasing"),
        ({"hamiltonian": {"a": [[3.0, 0, 0.0]]}}, "hamiltonian", "stiffness"),
        ({"data": {"m0": [[1.0, 0, 0.0], [2.0, 1, 0.0]]}}, "data.m0", "nonnegative"),
        ({"hamiltonian": {"V": [[1.0, 1.5, 0.0]]}}, "hamiltonian.V", "integer"),
    ],
)
def test_rejections_name_the_key(data, key, fragment):
    with pytest.raises(ConfigError) as exc:
        validate(data)
    assert exc.value.key == key and fragment in str(exc.value)


def test_two_dimensional_defaults():
    cfg = validate({"grid": {"dim": 2, "n": 16}})
    assert cfg.hamiltonian().V.values.shape == (16, 16)


def test_parse_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.toml")
    with pytest.raises(ConfigError) as exc:
        parse_config(write(tmp_path, "[grid]\nn = \n"))
    assert "line 2" in str(exc.value)


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_bad_flag_exits_one(capsys, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["solve-mfg", str(write(tmp_path, "")), "--nope"])
    err = capsys.readouterr().err
    assert exc.value.code == 1 and "usage" in err
    assert json.loads(err.strip().splitlines()[-1])["error"] == "UsageError"


def test_config_error_json(capsys, tmp_path):
    code, _, err = run(["solve-mfg", write(tmp_path, "[coupling]\nkernel_radius = 0.6\n")], capsys)
    payload = json.loads(err)
    assert code == 1 and payload["key"] == "coupling.kernel_radius"


def test_solve_mfg_outputs_are_deterministic(capsys, tmp_path):
    blobs = []
    out = tmp_path / "out"
    for _ in range(2):
        code, _, _ = run(["solve-mfg", write(tmp_path, SMALL.format(out=out.as_posix()))], capsys)
        assert code == 0
        blobs.append((out / "residuals.csv").read_bytes())
        sol = json.loads((out / "solution.json").read_text())
        assert set(sol) >= {"config_hash", "u_0", "m_T", "iterations"}
    assert blobs[0] == blobs[1]
    lines = blobs[0].decode().split("\r\n")
    assert lines[0].startswith("# config_hash: ") and lines[1] == "iteration,residual"


def test_nonconvergence_exits_two(capsys, tmp_path):
    text = SMALL.replace("max_iter = 400", "max_iter = 2").replace("tol_fp = 1e-3", "tol_fp = 1e-12")
    code, _, err = run(["solve-mfg", write(tmp_path, text.format(out=(tmp_path / "o").as_posix()))], capsys)
    assert code == 2 and json.loads(err)["error"] == "NonConvergenceError"


def test_solve_ergodic_reports_oracle_gap(capsys, tmp_path):
    code, out, _ = run(["solve-ergodic", write(tmp_path, SMALL.format(out=tmp_path.as_posix()))], capsys)
    data = json.loads((tmp_path / "ergodic.json").read_text())
    assert code == 0 and "oracle" in out
    assert data["oracle_gap"] <= data["oracle_tolerance"]


def test_check_coercivity(capsys, tmp_path):
    cfg = write(tmp_path, SMALL.format(out=tmp_path.as_posix()))
    code, out, _ = run(["check-coercivity", cfg, "--samples", "20"], capsys)
    assert code == 0 and "pass" in out
    first = (tmp_path / "coercivity.json").read_bytes()
    run(["check-coercivity", cfg, "--samples", "20"], capsys)
    assert (tmp_path / "coercivity.json").read_bytes() == first
    code, _, _ = run(["check-coercivity", cfg, "--samples", "0"], capsys)
    assert code == 1


def test_long_time_decoupled(capsys, tmp_path):
    base = SMALL.format(out=tmp_path.as_posix()) + '[coupling]\nfamily = "decoupled"\n'
    # e_u decays like 1/T: a short span keeps e_u sqrt(T) inside the factor-2 band
    code, out, _ = run(["long-time", write(tmp_path, base.replace("[1.0, 2.0, 4.0]", "[2.0, 3.0, 4.0]"))], capsys)
    report = json.loads((tmp_path / "rate_report.json").read_text())
    assert code == 0 and all(report["verdicts"].values()) and report["complete"] is True
    # a 16-fold span does not
    code, out, _ = run(["long-time", write(tmp_path, base.replace("[1.0, 2.0, 4.0]", "[1.0, 4.0, 16.0]"))], capsys)
    report = json.loads((tmp_path / "rate_report.json").read_text())
    assert code == 3 and report["verdicts"]["rate_constant_u"] is False and report["verdicts"]["slope_u"] is True
    assert (tmp_path / "e_u.dat").read_text().startswith("# config_hash: ")


def test_viscous_compare_rejects_increasing_eps(capsys, tmp_path):
    cfg = write(tmp_path, SMALL.format(out=tmp_path.as_posix()))
    code, _, err = run(["viscous-compare", cfg, "--eps", "0.01,0.1"], capsys)
    assert code == 1 and "decreasing" in err


def test_thread_cap_validation(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("ERGOMFG_THREADS", "lots")
    code, _, err = run(["check-coercivity", write(tmp_path, "")], capsys)
    assert code == 1 and json.loads(err)["key"] == "ERGOMFG_THREADS"
