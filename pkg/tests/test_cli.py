import csv
import io
import json

import pytest

from maslov_nbody import cli


def run(capsys, *argv):
    code = cli.run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def lagrange_file(tmp_path):
    p = tmp_path / "lagrange.toml"
    p.write_text('name = "lagrange"\nmasses = [1.0, 1.0, 1.0]\ndimension = 2\n'
                 'guess = "builtin:equilateral"\nh0 = -1.0\n')
    return p


@pytest.fixture
def two_body_file(tmp_path):
    p = tmp_path / "two.json"
    p.write_text(json.dumps({"masses": [1.0, 1.0], "dimension": 1, "guess": "builtin:two-body"}))
    return p


def test_cc_classify(capsys, lagrange_file):
    code, out, _ = run(capsys, "cc", "classify", "--input", str(lagrange_file))
    assert code == 0
    data = json.loads(out)
    assert data["schema"] == 1
    assert data["kernel_dim"] >= 1
    assert data["class"] == "strict-non-spiral"
    assert "tolerances" in data["config"] and data["config"]["problem"]["masses"] == [1.0, 1.0, 1.0]


def test_homothetic_index_two_body(capsys, two_body_file):
    code, out, _ = run(capsys, "homothetic", "index", "--input", str(two_body_file), "--h0", "-1")
    assert code == 0
    data = json.loads(out)
    assert data["morse"] == 0
    assert data["ends"] == ["total-collision", "total-collision"]
    assert data["config"]["chart_base"]


def test_flags_before_the_subcommand_survive(capsys, two_body_file):
    code, out, _ = run(capsys, "--h0", "0.3", "homothetic", "index", "--input", str(two_body_file))
    assert code == 0
    assert json.loads(out)["ends"][1] == "hyperbolic-infinity"


def test_oracle_harmonic(capsys):
    code, out, _ = run(capsys, "oracle", "compare", "--window", "0,10")
    data = json.loads(out)
    assert code == 0
    assert data["verdict"] == "pass" and data["fem_counts"][-1] == 3


def test_maslov_inline_paths(capsys):
    code, out, _ = run(capsys, "maslov", "--path", '{"kind": "constant", "matrix": [[1, 0], [0, 1]]}',
                       "--span", "0,11")
    data = json.loads(out)
    assert code == 0 and data["maslov"] == 4 and data["morse"] == 3
    code, out, _ = run(capsys, "maslov", "--path", '{"kind": "eigen-block", "b": 2, "lambda": -0.2}',
                       "--span=-inf,inf")
    data = json.loads(out)
    assert code == 0 and data["mu_line"] == 1 and data["nu"] == 0


def test_maslov_coefficient_dump(capsys, tmp_path):
    target = tmp_path / "coeff.csv"
    code, _, _ = run(capsys, "maslov", "--path", '{"kind": "radial-block", "b": 2}', "--span=-inf,0",
                     "--dump-coeff", str(target))
    assert code == 0
    rows = list(csv.reader(target.open()))
    assert rows[0] == ["tau", "b0_0", "b0_1", "b1_0", "b1_1"]
    assert len(rows) == 202


def test_flow_csv_uses_full_precision(capsys, lagrange_file):
    code, out, _ = run(capsys, "flow", "integrate", "--input", str(lagrange_file), "--tau-span", "0,1")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0][:3] == ["tau", "t", "v"] and rows[0][-1] == "energy_residual"
    v = rows[-1][2]
    assert float(v) == float(format(float(v), ".17g"))
    assert any(len(r[2].lstrip("-").replace(".", "").lstrip("0")) >= 15 for r in rows[2:])


def test_flow_json_adds_diagnostics(capsys, lagrange_file):
    code, out, _ = run(capsys, "flow", "integrate", "--input", str(lagrange_file), "--tau-span", "0,1", "--json")
    data = json.loads(out)
    assert code == 0 and "diagnostics" in data and data["max_energy_residual"] <= 1e-9


def test_growth_csv(capsys, tmp_path):
    p = tmp_path / "syn.toml"
    p.write_text("h0 = -1.0\n[synthetic]\nU = 8.0\nlambdas = [-2.0]\n")
    code, out, _ = run(capsys, "growth", "--input", str(p), "--t2-schedule", "geometric:1e-2,1e-40,4")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 4
    assert int(rows[-1]["morse"]) >= int(rows[0]["morse"])


def test_precondition_exit_codes(capsys, lagrange_file, tmp_path):
    code, _, err = run(capsys, "growth", "--input", str(lagrange_file))
    assert code == 2 and "error:" in err
    spiral = tmp_path / "spiral.toml"
    spiral.write_text("h0 = -1.0\n[synthetic]\nU = 8.0\nlambdas = [-2.0]\n")
    code, _, _ = run(capsys, "homothetic", "index", "--input", str(spiral))
    assert code == 2


def test_malformed_input_names_line_and_key(capsys, tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text('name = "x"\nmasses = [1.0, -2.0]\ndimension = 1\n')
    code, _, err = run(capsys, "cc", "find", "--input", str(p), "--guess", "builtin:two-body")
    assert code == 1
    assert "bad.toml:2: key 'masses'" in err


def test_unknown_key_and_bad_toml(capsys, tmp_path):
    p = tmp_path / "odd.toml"
    p.write_text("masses = [1.0, 1.0]\ndimension = 1\ncolour = 3\n")
    code, _, err = run(capsys, "cc", "find", "--input", str(p))
    assert code == 1 and ":3: key 'colour'" in err
    p.write_text("masses = [1.0,\n")
    code, _, err = run(capsys, "cc", "find", "--input", str(p))
    assert code == 1 and "invalid TOML" in err


def test_argument_errors_exit_one(capsys):
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "oracle", "compare", "--window", "0")[0] == 1
    assert run(capsys)[0] == 1


def test_missing_energy(capsys, tmp_path):
    p = tmp_path / "noh.toml"
    p.write_text('masses = [1.0, 1.0]\ndimension = 1\nguess = "builtin:two-body"\n')
    assert run(capsys, "flow", "integrate", "--input", str(p), "--tau-span", "0,1")[0] == 1


def test_verify_input_echoes(capsys, lagrange_file):
    code, out, _ = run(capsys, "--verify-input", "--input", str(lagrange_file))
    assert code == 0
    assert json.loads(out)["parsed"]["dimension"] == 2


def test_output_file(capsys, lagrange_file, tmp_path):
    target = tmp_path / "out.json"
    code, out, _ = run(capsys, "cc", "find", "--input", str(lagrange_file), "--out", str(target))
    assert code == 0 and out == ""
    assert json.loads(target.read_text())["U0"] == pytest.approx(3.0)


def test_thread_variable_is_validated(capsys, lagrange_file, monkeypatch):
    monkeypatch.setenv("MASLOV_NBODY_THREADS", "many")
    assert run(capsys, "cc", "find", "--input", str(lagrange_file))[0] == 1
    monkeypatch.setenv("MASLOV_NBODY_THREADS", "2")
    code, out, _ = run(capsys, "cc", "find", "--input", str(lagrange_file))
    assert code == 0 and json.loads(out)["config"]["threads"] == 2


def test_exit_code_mapping():
    from maslov_nbody import errors
    assert cli.exit_code(errors.InputError("x")) == 1
    assert cli.exit_code(errors.SpiralError("x")) == 2
    assert cli.exit_code(errors.SearchFailure("x")) == 3
    assert cli.exit_code(errors.InvariantViolation("x")) == 3
