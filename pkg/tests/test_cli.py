import csv
import json

import numpy as np
import pytest

from vkplate.cli import main
from vkplate.eigen import buckling_eigs
from vkplate.fespace import build_space
from vkplate.mesh import build_mesh

TINY = ["--set", "nx=6", "--set", "ny=6"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(autouse=True)
def _no_env(monkeypatch):
    monkeypatch.delenv("VKPLATE_OUTPUT_DIR", raising=False)


def test_exact(capsys):
    assert main(["eigs", "--exact", "1", "1", "1"]) == 0
    assert capsys.readouterr().out.startswith("39.47841")


def test_eigs_outputs(tmp_path):
    out = tmp_path / "e"
    assert main(["eigs", "-o", str(out), "--set", "degree=1", "--set", "nx=14", "--set", "ny=14", "--set", "k=3"]) == 0
    e = rows(out / "eigs.csv")
    assert [r["index"] for r in e] == ["1", "2", "3"]
    assert float(e[0]["value"]) == pytest.approx(39.91, rel=0.01)
    spec = rows(out / "spectrum.csv")
    assert list(spec[0]) == ["lambda", "sigma1", "sigma2", "sigma3"]
    assert len(spec) == 21
    assert (out / "spectrum.png").stat().st_size > 0
    assert (out / "spectrum.svg").stat().st_size > 0


def test_order(tmp_path, capsys):
    assert main(["eigs", "--order", "-o", str(tmp_path), "--set", "degree=1"]) == 0
    order = float(capsys.readouterr().out.split()[-1])
    assert order == pytest.approx(2.0, abs=0.2)


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["eigs", "-o", str(tmp_path), "--set", "nosuchkey=1"]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("[mesh]\nL = -1\n")
    assert main(["eigs", "-c", str(bad)]) == 2
    assert main(["online", "-o", str(tmp_path / "none")]) == 2


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    import vkplate.cli as cli
    from vkplate.errors import EigensolverError

    def boom(*a, **k):
        raise EigensolverError("no convergence", partial=[])

    monkeypatch.setattr(cli, "buckling_eigs", boom)
    assert main(["eigs", "-o", str(tmp_path)] + TINY) == 3


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("VKPLATE_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["eigs"] + TINY + ["--set", "figures=false"]) == 0
    assert (tmp_path / "env" / "eigs.csv").exists()
    assert not (tmp_path / "env" / "spectrum.png").exists()


DIAG = TINY + ["--set", "lambda_start=36", "--set", "lambda_end=44", "--set", "d_lambda=1"]


def test_diagram_csv_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["diagram"] + DIAG + ["--set", "seeds=1 1 +; 1 1 -"]
    assert main(args + ["-o", str(a)]) == 0
    assert main(args + ["-o", str(b)]) == 0
    assert (a / "diagram.csv").read_bytes() == (b / "diagram.csv").read_bytes()
    assert (a / "diagram.svg").read_bytes() == (b / "diagram.svg").read_bytes()
    r = rows(a / "diagram.csv")
    assert list(r[0]) == ["branch_id", "seed_m", "seed_n", "seed_sign", "psi", "lambda", "ordinate",
                          "converged", "iterations"]
    assert len(r) == 2 * 9
    plus = [float(x["ordinate"]) for x in r if x["branch_id"] == "0"]
    minus = [float(x["ordinate"]) for x in r if x["branch_id"] == "1"]
    assert np.allclose(plus, np.negative(minus), atol=1e-8)
    dep = rows(a / "bifurcations.csv")
    assert len(dep) == 2 and 39.0 <= float(dep[0]["lambda_star"]) <= 40.0


def test_empty_seed_list_gives_trivial_diagram(tmp_path, capsys):
    assert main(["diagram", "-o", str(tmp_path), "--set", "seeds="] + DIAG) == 0
    assert rows(tmp_path / "diagram.csv") == []
    assert "0 branches" in capsys.readouterr().out


def test_pod_then_online(tmp_path):
    out = str(tmp_path)
    common = TINY + ["--set", "lambda_start=36", "--set", "lambda_end=60", "--set", "d_lambda=1",
                     "--set", "seeds=1 1 +; 1 1 -", "-o", out]
    assert main(["pod", "--set", "store_every=2", "--set", "n_max=6"] + common) == 0
    assert (tmp_path / "basis.rom").exists()
    assert main(["online", "--set", "test_points=6", "--set", "test_start=40", "--set", "test_end=58"] + common) == 0
    err = rows(tmp_path / "rb_error.csv")
    assert list(err[0]) == ["N", "E_N", "t_online_ms", "t_full_ms"]
    E = [float(r["E_N"]) for r in err]
    assert len(E) == 6
    assert all(b < a for a, b in zip(E[:5], E[1:5]))
    # reduced diagram follows the full one within E_N (H1 error bounds the
    # nodal error only loosely, so compare with a safety factor)
    red = {(r["branch_id"], r["lambda"]): float(r["ordinate"]) for r in rows(tmp_path / "reduced_diagram.csv")}
    full = {(r["branch_id"], r["lambda"]): float(r["ordinate"]) for r in rows(tmp_path / "training_diagram.csv")}
    diffs = [abs(red[k] - full[k]) for k in full if k in red and abs(full[k]) > 0.1]
    assert diffs and max(diffs) <= max(10 * E[-1], 1e-6)


def test_sweep2d(tmp_path):
    out = tmp_path
    assert main(["sweep2d", "-o", str(out), "--set", "nx=5", "--set", "ny=5", "--set", "lambda_end=100",
                 "--set", "d_lambda=2", "--set", "psi_grid=0 0.5", "--set", "figures=false"]) == 0
    crit = rows(out / "sweep2d_critical.csv")
    assert [float(r["psi"]) for r in crit] == [0.0, 0.5]
    s = build_space(build_mesh(1.0, 5, 5), 2)
    for r in crit:
        ref = buckling_eigs(s, float(r["psi"]), k=1)[0].value
        assert float(r["lambda_star"]) == pytest.approx(ref, rel=0.02)
    assert {r["psi"] for r in rows(out / "sweep2d.csv")} == {"0.0", "0.5"}


def test_validate_report(tmp_path):
    assert main(["validate", "--only", "11", "-o", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "validate.json").read_text())
    assert rep["passed"] and rep["checks"][0]["id"] == 11


def test_validate_failure_exit_code(tmp_path, monkeypatch):
    import vkplate.validation as validation

    monkeypatch.setattr(validation, "run_checks",
                        lambda ids, ny, progress=None, seed=2024: [validation.CheckResult(1, "x", False)])
    assert main(["validate", "--only", "1", "-o", str(tmp_path)]) == 4
    assert main(["validate", "--only", "12", "-o", str(tmp_path)]) == 2


def test_config_command(capsys):
    assert main(["config", "--set", "L=2"]) == 0
    assert "L = 2.0" in capsys.readouterr().out
