import json
import subprocess
import sys

import numpy as np
import pytest

from sasbl import cli, io
from sasbl.model import PriorSupport
from sasbl.synth import nmse

ERR_SWEEP = {"axis": "E_size", "grid": list(range(1, 16)), "modes": ["sbl", "nsl", "sl"],
             "trials": 100, "seed": 1, "n": 50, "K": 16, "m": 25, "size_S": 12, "size_E": 0}
SRC = {"m_grid": [0.3], "modes": ["sbl", "sl"], "trials": 2, "seed": 3, "rows": 11,
       "cols": 11, "K": 4, "K1": 3, "snr_db": 20}


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def write_json(tmp_path, name, obj):
    return write(tmp_path, name, json.dumps(obj))


# ------------------------------------------------------------------- CSV

def test_read_matrix_examples(tmp_path):
    M = io.read_matrix_csv(write(tmp_path, "a.csv", "1,2\n3,4\n"))
    np.testing.assert_array_equal(M, [[1, 2], [3, 4]])
    assert io.read_matrix_csv(write(tmp_path, "b.csv", "1e-4\n"))[0, 0] == 1e-4


@pytest.mark.parametrize("text,line,column", [("1,2\n3\n", 2, None), ("1,2\n3,x\n", 2, 2),
                                              ("\n", 1, None), ("1,nan\n", 1, 2),
                                              ("1\n2\ninf\n", 3, 1)])
def test_read_matrix_errors_locate_the_problem(tmp_path, text, line, column):
    with pytest.raises(io.ParseError) as info:
        io.read_matrix_csv(write(tmp_path, "bad.csv", text))
    assert info.value.line == line and info.value.column == column
    assert f"line {line}" in str(info.value)


def test_matrix_round_trip_full_precision(tmp_path):
    M = np.random.default_rng(0).standard_normal((5, 4)) * 10.0 ** np.arange(-8, 12, 5)
    M[0, 0] = np.nextafter(1.0, 2.0)
    path = tmp_path / "m.csv"
    io.write_matrix_csv(path, M)
    assert np.array_equal(io.read_matrix_csv(path), M)


def test_vector_reader_accepts_row_or_column(tmp_path):
    np.testing.assert_array_equal(io.read_vector_csv(write(tmp_path, "r.csv", "1,2,3\n")),
                                  [1, 2, 3])
    np.testing.assert_array_equal(io.read_vector_csv(write(tmp_path, "c.csv", "1\n2\n")),
                                  [1, 2])
    with pytest.raises(io.ParseError):
        io.read_vector_csv(write(tmp_path, "m.csv", "1,2\n3,4\n"))


def test_prior_file_is_one_based_with_comments(tmp_path):
    p = write(tmp_path, "p.txt", "# claimed support\n3\n\n1\n")
    assert io.read_prior_support(p, 5) == PriorSupport({0, 2})
    with pytest.raises(io.ParseError, match="out of range"):
        io.read_prior_support(write(tmp_path, "q.txt", "6\n"), 5)
    with pytest.raises(io.ParseError, match="line 2"):
        io.read_prior_support(write(tmp_path, "r.txt", "1\nx\n"), 5)
    out = tmp_path / "w.txt"
    io.write_prior_support(out, PriorSupport({4, 0}))
    assert out.read_text() == "1\n5\n"


# ------------------------------------------------------------------ solve

def _solve_files(tmp_path, A, y):
    io.write_matrix_csv(tmp_path / "A.csv", A)
    io.write_matrix_csv(tmp_path / "y.csv", np.asarray(y)[:, None])
    return ["solve", "--A", str(tmp_path / "A.csv"), "--y", str(tmp_path / "y.csv")]


def test_solve_identity(tmp_path):
    x = np.array([0.0, 0.0, 1.5, 0.0])
    args = _solve_files(tmp_path, np.eye(4), x)
    out = tmp_path / "r.json"
    assert cli.main(args + ["--mode", "sbl", "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert set(res) == {"x_hat", "iterations", "converged", "final_gamma_mean", "elbo_final",
                        "config_echo"}
    assert res["converged"] and nmse(x, res["x_hat"]) <= 1e-6
    assert res["config_echo"]["mode"] == "sbl"


def test_solve_with_prior_file(tmp_path):
    x = np.array([0.0, 2.0, 0.0, 0.0])
    args = _solve_files(tmp_path, np.eye(4), x)
    write(tmp_path, "p.txt", "2\n")
    out = tmp_path / "r.json"
    code = cli.main(args + ["--prior", str(tmp_path / "p.txt"), "--mode", "sl",
                            "--out", str(out), "--epsilon", "1e-8"])
    assert code == 0
    assert json.loads(out.read_text())["config_echo"]["epsilon"] == 1e-8


def test_solve_length_mismatch_exits_1(tmp_path, capsys):
    args = _solve_files(tmp_path, np.eye(4), np.ones(3))
    assert cli.main(args + ["--mode", "sbl", "--out", str(tmp_path / "r.json")]) == 1
    assert "y" in capsys.readouterr().err


def test_solve_bad_prior_index_exits_1(tmp_path, capsys):
    args = _solve_files(tmp_path, np.eye(4), np.ones(4))
    write(tmp_path, "p.txt", "9\n")
    code = cli.main(args + ["--prior", str(tmp_path / "p.txt"), "--mode", "nsl",
                            "--out", str(tmp_path / "r.json")])
    assert code == 1 and "out of range" in capsys.readouterr().err


def test_solve_iteration_cap_exits_2(tmp_path):
    rng = np.random.default_rng(0)
    A = rng.standard_normal((20, 40))
    x = np.zeros(40)
    x[:8] = 1.0
    args = _solve_files(tmp_path, A, A @ x)
    out = tmp_path / "r.json"
    assert cli.main(args + ["--mode", "sbl", "--max-iter", "1", "--out", str(out)]) == 2
    assert json.loads(out.read_text())["converged"] is False


def test_missing_input_file_exits_1(tmp_path):
    code = cli.main(["solve", "--A", str(tmp_path / "nope.csv"), "--y", "y.csv",
                     "--mode", "sbl", "--out", str(tmp_path / "r.json")])
    assert code == 1


# ------------------------------------------------------------ bench / cfg

def test_error_size_sweep_config_shape(tmp_path):
    cfg = write_json(tmp_path, "err_sweep.json", ERR_SWEEP)
    out = tmp_path / "err_sweep.csv"
    assert cli.main(["bench-synth", "--config", str(cfg), "--out", str(out),
                     "--trials", "10"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == io.SYNTH_HEADER
    assert len(lines) - 1 == 15 * 3
    assert all(row.split(",")[2] == "10" for row in lines[1:])
    side = json.loads(out.with_suffix(".json").read_text())
    assert side["seed"] == 1 and side["config"]["trials"] == 10 and side["kind"] == "synth"
    assert side["version"]


def test_missing_seed_is_named(tmp_path, capsys):
    cfg = dict(ERR_SWEEP)
    del cfg["seed"]
    path = write_json(tmp_path, "c.json", cfg)
    assert cli.main(["bench-synth", "--config", str(path), "--out",
                     str(tmp_path / "o.csv")]) == 1
    assert "seed" in capsys.readouterr().err
    assert not (tmp_path / "o.csv").exists()


def test_schema_errors_reported_per_field():
    cfg = dict(ERR_SWEEP, n="fifty", modes=["bp"], trials=0)
    problems = io.validate_config(cfg)
    for field in ("n", "modes", "trials"):
        assert any(p.startswith(field) for p in problems), problems


def test_semantic_checks():
    assert any("size_S" in p for p in io.validate_config(dict(ERR_SWEEP, size_S=17)))
    assert any("K1" in p for p in io.validate_config(dict(SRC, K1=5)))
    assert io.validate_config(ERR_SWEEP) == [] and io.validate_config(SRC) == []


def test_seed_environment_override(tmp_path):
    path = write_json(tmp_path, "c.json", ERR_SWEEP)
    assert io.load_config(path, env={"SASBL_SEED": "42"})["seed"] == 42
    assert io.load_config(path, env={})["seed"] == 1
    with pytest.raises(io.ConfigError):
        io.load_config(path, env={"SASBL_SEED": "x"})


def test_srcloc_bench_and_rerun_identity(tmp_path):
    cfg = write_json(tmp_path, "s.json", SRC)
    outs = []
    for tag, jobs in (("a", "1"), ("b", "2")):
        out = tmp_path / f"{tag}.csv"
        assert cli.main(["bench-srcloc", "--config", str(cfg), "--out", str(out),
                         "--jobs", jobs]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].decode().splitlines()[0] == io.SRCLOC_HEADER
    assert len(outs[0].decode().splitlines()) == 1 + 2


def test_solver_override_in_config(tmp_path):
    cfg = write_json(tmp_path, "c.json", dict(ERR_SWEEP, grid=[4], trials=1,
                                              solver={"max_iter": 3}))
    out = tmp_path / "o.csv"
    assert cli.main(["bench-synth", "--config", str(cfg), "--out", str(out)]) == 0
    row = out.read_text().splitlines()[1].split(",")
    assert float(row[-1]) <= 3
    assert json.loads(out.with_suffix(".json").read_text())["solver"]["max_iter"] == 3


def test_validate_command(tmp_path, capsys):
    good = write_json(tmp_path, "g.json", SRC)
    assert cli.main(["validate", "--config", str(good)]) == 0
    assert "srcloc" in capsys.readouterr().out
    bad = write(tmp_path, "b.json", "{not json")
    assert cli.main(["validate", "--config", str(bad)]) == 1


def test_module_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "sasbl", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and "bench-synth" in proc.stdout
