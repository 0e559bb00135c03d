import csv
import json

import pytest

from singsde import cli


def _run(tmp_path, *argv, name="out.csv"):
    out = tmp_path / name
    code = cli.main(list(argv) + ["--out", str(out)])
    return code, out


def _rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# generated ")
    assert lines[1].startswith("# command ")
    return list(csv.DictReader(lines[2:]))


def _config(path):
    line = path.read_text().splitlines()[1]
    return json.loads(line.split(" config ", 1)[1])


def test_simulate_rows_and_header(tmp_path):
    code, out = _run(tmp_path, "simulate", "--paths", "5", "--tmax", "0.5",
                     "--seed", "3", "--girsanov", "--drift", "tanh:1")
    assert code == 0
    rows = _rows(out)
    assert len(rows) == 5
    assert {"log_weight", "quad_var", "ess_contribution"} <= set(rows[0])
    assert max(float(r["ess_contribution"]) for r in rows) == 1.0
    assert _config(out)["seed"] == 3


def test_threads_give_identical_csv(tmp_path):
    args = ["simulate", "--paths", "40", "--tmax", "1", "--seed", "11",
            "--drift", "linear:0.5", "--dim", "2"]
    outs = []
    for k in (1, 3):
        code, out = _run(tmp_path, *args, "--threads", str(k), name=f"t{k}.csv")
        assert code == 0
        outs.append(out.read_text().splitlines()[1:])
    assert outs[0] == outs[1]


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "99")
    _, out = _run(tmp_path, "simulate", "--paths", "3", "--tmax", "0.1")
    assert _config(out)["seed"] == 99
    _, out = _run(tmp_path, "simulate", "--paths", "3", "--tmax", "0.1",
                  "--seed", "5", name="b.csv")
    assert _config(out)["seed"] == 5


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"paths": 4, "tmax": 0.2, "dt": 0.05}))
    _, out = _run(tmp_path, "simulate", "--config", str(cfg), "--paths", "6")
    conf = _config(out)
    assert conf["paths"] == 6 and conf["tmax"] == 0.2 and conf["dt"] == 0.05
    assert len(_rows(out)) == 6


@pytest.mark.parametrize("argv", [
    ["simulate", "--drift", "bogus"],
    ["simulate", "--dt", "-1"],
    ["simulate", "--paths", "1"],
    ["frobnicate"],
    ["reproduce"],
    ["spde", "--spectrum", "cubic:3"],
])
def test_usage_errors_exit_2_without_artifact(tmp_path, argv):
    code, out = _run(tmp_path, *argv)
    assert code == 2
    assert not out.exists()


def test_malformed_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, out = _run(tmp_path, "simulate", "--config", str(bad))
    assert code == 2 and not out.exists()
    bad.write_text(json.dumps({"colour": "red"}))
    code, out = _run(tmp_path, "simulate", "--config", str(bad))
    assert code == 2 and not out.exists()


def test_check_conditions_exit_codes(tmp_path):
    code, out = _run(tmp_path, "check-conditions", "--drift", "linear:0.5",
                     "--condition", "XG3:1.0", "--samples", "20000")
    assert code == 0
    assert _rows(out)[0]["verdict"] == "HOLDS"
    code, out = _run(tmp_path, "check-conditions", "--drift", "linear:1.1",
                     "--condition", "XG3:0.75", "--samples", "20000",
                     name="f.csv")
    assert code == 1
    assert _rows(out)[0]["verdict"] == "FAILS"


def test_simulate_flags_non_stationary(tmp_path, capsys):
    code, _ = _run(tmp_path, "simulate", "--drift", "linear:1.1", "--tmax", "50",
                   "--dt", "0.05", "--paths", "50", "--radii", "1e4,1e5,1e6")
    assert code == 0
    assert "non-stationary" in capsys.readouterr().err


def test_inequalities_and_harnack(tmp_path):
    code, out = _run(tmp_path, "inequalities", "--bank", "80", "--young", "50")
    assert code == 0
    checks = {r["check"] for r in _rows(out)}
    assert {"LS", "Young", "HPC"} <= checks
    code, out = _run(tmp_path, "harnack", "--tuples", "100", name="h.csv")
    assert code == 0


def test_verify_bounds_small(tmp_path):
    code, out = _run(tmp_path, "verify-bounds", "--drift", "linear:0.5",
                     "--paths", "300", "--tmax", "40", "--dt", "0.02",
                     "--samples", "20000", "--grid=-7,7,40")
    rows = _rows(out)
    assert {r["check"] for r in rows} >= {"PD", "2.4", "Q2"}
    assert code == 0
