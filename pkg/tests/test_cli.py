import subprocess
import sys

import pytest

from crbm.cli import EXIT_NONCONVERGENCE, EXIT_OK, EXIT_USAGE, main
from crbm.report import read_csv, strip_timestamp
from crbm.store import read_store

SMALL = ["--h", "0.02", "--train", "0.7,0.85,1.0,1.15", "--n-valid", "4", "--no-svg"]


@pytest.fixture
def reports(tmp_path):
    return tmp_path / "reports"


def test_mesh(tmp_path, reports, capsys):
    out = tmp_path / "mesh.store"
    assert main(["mesh", "--h", "0.02", "--reports", str(reports), "--out", str(out)]) == EXIT_OK
    meta, rows = read_csv(reports / "mesh.csv")
    assert meta["schema"] == "mesh" and int(rows[0]["n_dof"]) > 0
    s = read_store(out)
    assert s["tris"].dtype.name == "uint32" and s["nodes"].shape[1] == 2
    assert "n_nodes=" in capsys.readouterr().out


def test_hf_solve(tmp_path, reports):
    out = tmp_path / "hf.store"
    assert main(["hf-solve", "--mu", "1.0", "--friction", "tresca", "--h", "0.02", "--reports", str(reports),
                 "--out", str(out)]) == EXIT_OK
    _, rows = read_csv(reports / "hf_tresca_mu1.csv")
    assert rows[0]["converged"] == "1" and float(rows[0]["e_AC_ntau"]) > 0
    assert read_store(out)["hf/U_cv"].ndim == 1


def test_hf_solve_nonconvergence_exit_code(reports):
    assert main(["hf-solve", "--mu", "1.0", "--h", "0.02", "--max-iter", "1", "--reports", str(reports)]) \
        == EXIT_NONCONVERGENCE


@pytest.mark.parametrize("argv", [
    [],
    ["nope"],
    ["hf-solve"],
    ["hf-solve", "--mu", "abc"],
    ["hf-solve", "--mu", "2.0", "--h", "0.02"],
    ["hf-solve", "--mu", "1.0", "--friction", "sticky"],
    ["hf-solve", "--mu", "1.0", "--config", "/nonexistent/run.ini"],
    ["offline", "--friction", "coulomb", "--h", "0.02"],
    ["online", "--store", "/nonexistent.store", "--mu", "1.0", "--N", "3"],
])
def test_usage_errors(argv, tmp_path, capsys):
    assert main(argv + ["--reports", str(tmp_path)]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_offline_online_validate(tmp_path, reports, capsys):
    store = tmp_path / "a.store"
    common = SMALL + ["--store", str(store), "--reports", str(reports)]
    assert main(["offline"] + common) == EXIT_OK
    assert "S_b=" in capsys.readouterr().out
    assert main(["online", "--store", str(store), "--mu", "0.9", "--N", "4", "--reports", str(reports)]) == EXIT_OK
    assert "per_iteration=" in capsys.readouterr().out
    _, rows = read_csv(reports / "online_mu0.9_N4.csv")
    assert rows[0]["converged"] == "1"
    assert main(["online", "--store", str(store), "--mu", "0.9", "--N", "99"]) == EXIT_USAGE
    assert main(["validate", "--Ns", "2,4"] + common) == EXIT_OK
    first = {n: strip_timestamp((reports / n).read_text()) for n in ("pod.csv", "eim.csv", "rb_rows.csv", "rb_max.csv")}
    _, rb = read_csv(reports / "rb_max.csv")
    assert [r["N"] for r in rb] == ["2", "4"]
    assert main(["validate", "--Ns", "2,4"] + common) == EXIT_OK
    for n, text in first.items():
        assert strip_timestamp((reports / n).read_text()) == text


def test_study_small(reports, capsys):
    assert main(["study", "--mus", "1.0", "--hs", "0.04,0.02", "--reports", str(reports)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "order=" in out
    _, rows = read_csv(reports / "study.csv")
    assert len(rows) == 2 and rows[0]["order"] == "" and rows[1]["order"] != ""


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "crbm.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("crbm ")
    proc = subprocess.run([sys.executable, "-m", "crbm.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 1
