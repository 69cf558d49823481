import subprocess
import sys

import pytest

from hodlr3d._io import parse_csv
from hodlr3d.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_census_formula_only(capsys):
    code, out, _ = _run(capsys, "--cmd", "census", "--L", "1", "--variant", "all")
    assert code == EXIT_OK
    rows = parse_csv(out)
    summary = {(r["variant"], r["kind"], r["class"]): r for r in rows if r["level"] == "all"}
    assert summary[("hodlr3d", "dense", "all")]["count_enumerated"] == "56"
    assert summary[("hstrong", "dense", "all")]["count_enumerated"] == "64"
    assert out.startswith("# cmd=census")


def test_census_with_points(tmp_path, capsys):
    path = tmp_path / "c.csv"
    code, _, _ = _run(capsys, "--cmd", "census", "--N", "500,1200", "--nmax", "50",
                      "--out", str(path))
    assert code == EXIT_OK
    rows = parse_csv(path.read_text())
    assert {r["N"] for r in rows} == {"500", "1200"}
    assert all(r["coverage_ok"] == "1" for r in rows)


def test_rank_study(capsys):
    code, out, _ = _run(capsys, "--cmd", "rank-study", "--N", "16,32", "--seed", "3")
    assert code == EXIT_OK
    rows = parse_csv(out)
    assert len(rows) == 4 * 2 + 4
    assert rows[0]["epsilon"] == "1e-14"
    assert sum(r["N"] == "slope" for r in rows) == 4


def test_matvec_bench(capsys):
    code, out, _ = _run(capsys, "--cmd", "matvec-bench", "--N", "600", "--nmax", "40",
                        "--variant", "all", "--kernel", "r4")
    assert code == EXIT_OK
    rows = parse_csv(out)
    assert [r["variant"] for r in rows] == ["hodlr3d", "hodlr", "hstrong"]
    assert all(float(r["rel_error"]) < 1e-5 for r in rows)


def test_matvec_bench_match_error(capsys):
    code, out, _ = _run(capsys, "--cmd", "matvec-bench", "--N", "600", "--nmax", "40",
                        "--match-error", "1e-6")
    assert code == EXIT_OK
    assert parse_csv(out)[0]["matched"] == "1"


def test_solve_ie(capsys):
    code, out, _ = _run(capsys, "--cmd", "solve-ie", "--grid-n", "4,6", "--nmax", "30")
    assert code == EXIT_OK
    rows = parse_csv(out)
    assert [r["N"] for r in rows] == ["64", "216"]


def test_solve_ie_rejects_kernel(capsys):
    code, _, err = _run(capsys, "--cmd", "solve-ie", "--kernel", "r4")
    assert code == EXIT_USAGE and "laplace3d" in err


def test_parallel_bench(capsys, monkeypatch):
    monkeypatch.setenv("HODLR3D_NUM_WORKERS", "1,2")
    code, out, _ = _run(capsys, "--cmd", "parallel-bench", "--N", "800", "--nmax", "40")
    assert code == EXIT_OK
    rows = parse_csv(out)
    assert [r["n_p"] for r in rows] == ["1", "2"]
    assert all(float(r["rel_diff"]) <= 1e-12 for r in rows)


@pytest.mark.parametrize("argv", [
    ["--cmd", "bogus"],
    [],
    ["--cmd", "census", "--N", "0"],
    ["--cmd", "census", "--N", "a,b"],
    ["--cmd", "matvec-bench", "--eps", "-1"],
    ["--cmd", "census", "--L", "-2"],
])
def test_usage_errors(capsys, argv):
    assert main(argv) == EXIT_USAGE


def test_runtime_error_exit_code(capsys, tmp_path):
    code, _, err = _run(capsys, "--cmd", "census", "--N", "100",
                        "--out", str(tmp_path / "missing" / "x.csv"))
    assert code == EXIT_RUNTIME and "Error" in err


def test_version_and_help(capsys):
    assert main(["--version"]) == EXIT_OK
    assert "0.1.0" in capsys.readouterr().out
    assert main(["--help"]) == EXIT_OK


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hodlr3d", "--cmd", "census", "--L", "1"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "hodlr3d" in proc.stdout
