import csv
import json

import pytest

from irflow.cli import (
    EXIT_CHECK,
    EXIT_CONFIG,
    EXIT_OK,
    FLOW_COLUMNS,
    execute,
    main,
    parse_config,
)
from irflow.errors import InvariantViolation, ParseError, SchemaViolation

SMALL = """\
alpha = 0.005
Lambda = 1.0
P = 0.15, 0.1, 0.05
epsilon = 0.5
J = 2
Nmax = 2
n_theta = 1
n_phi = 1
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


# parsing ----------------------------------------------------------------------

def test_minimal_config_fills_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, "alpha=0.005\nLambda=1\nP=0.2,0,0\nepsilon=0.5\nJ=3\nNmax=2\n"))
    assert cfg.model.alpha == 0.005 and cfg.model.J == 3 and cfg.model.P == (0.2, 0.0, 0.0)
    assert cfg.model.n_theta == 2 and cfg.model.rho_minus == 0.35
    assert cfg.seed == 0 and cfg.threads == 1 and cfg.fd_step == 1e-3
    assert cfg.verify["i4"] and not cfg.verify["holder"]
    assert cfg.thresholds["r2_min"] == 0.9


def test_sections_are_parsed(tmp_path):
    text = "[model]\nalpha = 0.01  # inline comment\nJ = 2\n[run]\nseed = 7\nstrategy = both\n" \
           "[verify]\ni4 = off\nphoton_momenta = 0, 0.1\n[sweep]\naxis = alpha\nvalues = 0, 0.005\n"
    cfg = parse_config(write(tmp_path, text))
    assert cfg.model.alpha == 0.01 and cfg.seed == 7 and cfg.strategy == "both"
    assert cfg.verify["i4"] is False and cfg.verify["photon_momenta"] == (0.0, 0.1)
    assert cfg.sweep == {"axis": "alpha", "values": (0.0, 0.005)}


def test_momentum_outside_region(tmp_path):
    with pytest.raises(InvariantViolation, match="1/3"):
        parse_config(write(tmp_path, "P = 0.4, 0, 0\n"))


def test_unknown_key(tmp_path):
    with pytest.raises(SchemaViolation) as info:
        parse_config(write(tmp_path, "alpha = 0.01\nfoo = 1\n"))
    assert info.value.key == "foo"


def test_unknown_section_and_run_key(tmp_path):
    with pytest.raises(SchemaViolation):
        parse_config(write(tmp_path, "[extras]\nx = 1\n"))
    with pytest.raises(SchemaViolation):
        parse_config(write(tmp_path, "[run]\nbogus = 1\n"))


def test_parse_error_reports_line(tmp_path):
    with pytest.raises(ParseError) as info:
        parse_config(write(tmp_path, "alpha = 0.01\nJ = three\n"))
    assert info.value.line == 2 and info.value.key == "J"
    with pytest.raises(ParseError):
        parse_config(write(tmp_path, "P = 0.1, 0.2\n"))


def test_invalid_run_values(tmp_path):
    with pytest.raises(InvariantViolation):
        parse_config(write(tmp_path, "[run]\nstrategy = sideways\n"))
    with pytest.raises(InvariantViolation):
        parse_config(write(tmp_path, "[sweep]\naxis = temperature\n"))


def test_config_hash_is_file_hash(tmp_path):
    a = parse_config(write(tmp_path, SMALL, "a.ini"))
    b = parse_config(write(tmp_path, SMALL + "\n", "b.ini"))
    assert a.config_hash != b.config_hash
    assert a.config_hash == parse_config(tmp_path / "a.ini").config_hash


# commands ---------------------------------------------------------------------

def test_flow_free_config(tmp_path):
    path = write(tmp_path, SMALL.replace("alpha = 0.005", "alpha = 0"))
    out = tmp_path / "out"
    assert main(["flow", "--config", str(path), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "flow.csv")
    assert rows[0] == FLOW_COLUMNS
    E0 = 0.5 * (0.15**2 + 0.1**2 + 0.05**2)
    for row in rows[1:]:
        assert abs(float(row[2]) - E0) <= 1e-12
    summary = json.loads((out / "summary.json").read_text())
    assert summary["pass"] and summary["checks"]["flow"]["free_energy"]
    assert (out / "config.ini").read_bytes() == path.read_bytes()


def test_outputs_carry_config_hash(tmp_path):
    path = write(tmp_path, SMALL)
    out = tmp_path / "out"
    main(["flow", "--config", str(path), "--out", str(out)])
    h = parse_config(path).config_hash
    assert all(row[-1] == h for row in read_csv(out / "flow.csv")[1:])
    assert json.loads((out / "summary.json").read_text())["config_hash"] == h


def test_csv_float_format(tmp_path):
    path = write(tmp_path, SMALL)
    out = tmp_path / "out"
    main(["flow", "--config", str(path), "--out", str(out)])
    raw = (out / "flow.csv").read_bytes()
    assert raw.count(b"\r\n") == 4
    for row in read_csv(out / "flow.csv")[1:]:
        assert row[2] == f"{float(row[2]):.17g}"


def test_byte_identical_reruns(tmp_path):
    path = write(tmp_path, SMALL + "[run]\nstrategy = both\n")
    for name in ("a", "b"):
        assert main(["flow", "--config", str(path), "--out", str(tmp_path / name)]) == EXIT_OK
    for f in ("flow.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_refuses_mixed_provenance(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["flow", "--config", str(write(tmp_path, SMALL, "a.ini")), "--out", str(out)]) == EXIT_OK
    other = write(tmp_path, SMALL.replace("J = 2", "J = 1"), "b.ini")
    assert main(["flow", "--config", str(other), "--out", str(out)]) == EXIT_CONFIG
    assert "provenance" in capsys.readouterr().err


def test_config_error_exit_codes(tmp_path):
    assert main(["flow", "--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG
    assert main(["flow", "--config", str(write(tmp_path, "P = 0.4, 0, 0\n"))]) == EXIT_CONFIG
    bad = write(tmp_path, SMALL, "c.ini")
    assert main(["flow", "--config", str(bad), "--out", str(tmp_path / "o"), "--threads", "0"]) == EXIT_CONFIG


def test_check_failure_exit_code(tmp_path):
    # an impossible finite-difference tolerance makes the flow check fail
    path = write(tmp_path, SMALL + "[thresholds]\nfd_tol = 1e-30\n")
    assert main(["flow", "--config", str(path), "--out", str(tmp_path / "out")]) == EXIT_CHECK


def test_verify_i4_report(tmp_path):
    text = SMALL + "[verify]\nconvergence = off\npull_through = off\nphoton_number = off\n" \
                   "gradient_bounds = off\ni4_samples = 24\ni4_alphas = 0.005\n"
    path = write(tmp_path, text)
    out = tmp_path / "out"
    assert main(["verify", "--config", str(path), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "report_i4.json").read_text())
    assert rep["pass"] is True and rep["constants"]["c"] >= 0
    assert rep["config_hash"] == parse_config(path).config_hash
    assert sorted(p.name for p in out.glob("report_*.json")) == ["report_i4.json"]


def test_verify_small_suite(tmp_path):
    text = SMALL.replace("J = 2", "J = 4") + \
        "[verify]\ni4_samples = 8\nphoton_scales = 5\nphoton_momenta = 0, 0.1, 0.2\n" \
        "energy_shift = on\nholder = on\nholder_scales = 1, 2\nmarginal_decay = on\n"
    path = write(tmp_path, text)
    out = tmp_path / "out"
    main(["verify", "--config", str(path), "--out", str(out)])
    summary = json.loads((out / "summary.json").read_text())
    names = {"convergence", "energy_shift", "i4", "pull_through", "photon_number", "holder",
             "gradient_bounds", "marginal_decay"}
    assert set(summary["checks"]) == names
    for n in names:
        assert json.loads((out / f"report_{n}.json").read_text())["check"] in (n, "I4")


def test_sweep_over_alpha(tmp_path):
    path = write(tmp_path, SMALL + "[sweep]\naxis = alpha\nvalues = 0, 0.005\n[run]\nfd_step = 0\n")
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(path), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "sweep.csv")
    assert rows[0][0] == "alpha" and len(rows) == 1 + 2 * 3


def test_sweep_requires_axis(tmp_path):
    path = write(tmp_path, SMALL)
    assert main(["sweep", "--config", str(path), "--out", str(tmp_path / "out")]) == EXIT_CONFIG


def test_execute_rejects_unknown_command(tmp_path):
    from irflow.errors import ConfigError

    cfg = parse_config(write(tmp_path, SMALL))
    with pytest.raises(ConfigError):
        execute("plot", cfg)


def test_seed_and_threads_override(tmp_path):
    path = write(tmp_path, SMALL)
    out = tmp_path / "out"
    main(["flow", "--config", str(path), "--out", str(out), "--seed", "3", "--threads", "2"])
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 3 and summary["threads"] == 2
    assert "wall_times" not in summary
