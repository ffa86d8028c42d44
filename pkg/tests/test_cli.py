import json
import subprocess
import sys

import numpy as np
import pytest

from riwtl import cli
from riwtl import transfer as tr
from riwtl.core import Dataset, TransferProblem
from riwtl.simlab import sur

from conftest import make_identical_problem


def _write(tmp_path, prob):
    paths = []
    for i, d in enumerate(prob.datasets):
        p = tmp_path / f"d{i}.csv"
        cli.write_dataset_csv(p, d)
        paths.append(str(p))
    return paths[0], paths[1:]


def test_load_small_file(tmp_path):
    f = tmp_path / "a.csv"
    f.write_text("y,a,b\n1,2,3\n4,5,6\n7,8,9\n")
    d, names = cli.load_dataset_csv(f)
    assert (d.n, d.p) == (3, 2) and names == ["a", "b"]


@pytest.mark.parametrize("text,needle", [
    ("y,a\n1,nan\n", "row 2, column 'a'"),
    ("y,a\n1,x\n", "non-numeric"),
    ("y,a\n1\n", "row 2 has 1 fields"),
    ("a,y\n1,2\n", "first column"),
])
def test_load_errors(tmp_path, text, needle):
    f = tmp_path / "bad.csv"
    f.write_text(text)
    with pytest.raises(cli.DataError, match=needle):
        cli.load_dataset_csv(f)


def test_round_trip_is_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    d = Dataset(rng.standard_normal((7, 3)), rng.standard_normal(7))
    cli.write_dataset_csv(tmp_path / "r.csv", d)
    back, _ = cli.load_dataset_csv(tmp_path / "r.csv")
    assert np.array_equal(back.x, d.x) and np.array_equal(back.y, d.y)


def test_column_mismatch(tmp_path):
    (tmp_path / "t.csv").write_text("y,a,b\n1,2,3\n")
    (tmp_path / "s.csv").write_text("y,b,a\n1,2,3\n")
    with pytest.raises(cli.DataError, match="differ"):
        cli.load_problem(tmp_path / "t.csv", [tmp_path / "s.csv"])


def test_fit_without_sources_matches_library(tmp_path):
    prob = make_identical_problem(K=0)
    target, _ = _write(tmp_path, prob)
    out = tmp_path / "o"
    assert cli.main(["fit", "--target", target, "--method", "lasso", "--lambda", "0.1", "--out", str(out)]) == 0
    got = np.loadtxt(out / "beta_hat.csv", delimiter=",", skiprows=1, usecols=1)
    want = tr.fit_lasso_target(prob, 0.1).beta_hat
    np.testing.assert_allclose(got, want, rtol=1e-11, atol=1e-15)
    meta = json.loads((out / "fit.json").read_text())
    assert meta["result"]["sur"] == 1.0
    assert meta["version"] and meta["config"]["lambda"] == 0.1


def test_tune_then_fit_reports_sur(tmp_path):
    prob = make_identical_problem(K=1, n_k=120)
    target, sources = _write(tmp_path, prob)
    cfg = tmp_path / "grid.yaml"
    cfg.write_text("schema_version: 1\nM_grid: [1.0, 2.0]\nn_lambda: 10\n")
    assert cli.main(["tune", "--target", target, "--source", *sources, "--method", "riw-tl-u",
                     "--config", str(cfg), "--out", str(tmp_path / "t")]) == 0
    chosen = json.loads((tmp_path / "t" / "chosen.json").read_text())["chosen"]
    assert (tmp_path / "t" / "scores.csv").read_text().startswith("M,b,lambda,score,error")
    out = tmp_path / "f"
    assert cli.main(["fit", "--target", target, "--source", *sources, "--method", "riw-tl-u",
                     "--lambda", repr(chosen["lambda"]), "--M", repr(chosen["M"]), "--out", str(out)]) == 0
    reported = json.loads((out / "fit.json").read_text())["result"]["sur"]
    loaded, _ = cli.load_problem(target, sources)
    fit = tr.fit_riw_tl_u(loaded, tr.RiwConfig.from_M(chosen["M"], "uniform", lam=chosen["lambda"]))
    assert reported == pytest.approx(sur(fit, loaded), rel=1e-11)
    assert (out / "selection.csv").exists()


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["simulate", "--config", str(tmp_path / "none.yaml"), "--out", str(tmp_path / "o")]) == 2
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["exit_code"] == 2 and rec["kind"] == "config_error"
    assert json.loads((tmp_path / "o" / "error.json").read_text())["status"] == "error"
    bad = tmp_path / "bad.csv"
    bad.write_text("y,a\n1,oops\n")
    assert cli.main(["fit", "--target", str(bad), "--method", "lasso", "--out", str(tmp_path / "p")]) == 3
    v0 = tmp_path / "v0.yaml"
    v0.write_text("schema_version: 0\n")
    assert cli.main(["fig1", "--config", str(v0), "--out", str(tmp_path / "q")]) == 2
    nested = tmp_path / "n.yaml"
    nested.write_text("schema_version: 1\ngrid:\n  a: 1\n")
    assert cli.main(["simulate", "--config", str(nested), "--out", str(tmp_path / "r")]) == 2
    # an all-zero response has lambda_max = 0, which tuning cannot grid
    zero = tmp_path / "z.csv"
    zero.write_text("y,a,b\n" + "0,1,2\n0,3,1\n0,2,2\n0,1,1\n0,5,0\n0,2,7\n")
    assert cli.main(["tune", "--target", str(zero), "--method", "lasso", "--out", str(tmp_path / "s")]) == 4
    assert cli.main(["fit", "--target", str(zero), "--method", "riw-tl", "--out", str(tmp_path / "t")]) == 2


def test_fig1_and_flag_override(tmp_path):
    cfg = tmp_path / "f.yaml"
    cfg.write_text("schema_version: 1\nreplicates: 2\nn1: 200\nseed: 1\n")
    assert cli.main(["fig1", "--config", str(cfg), "--seed", "3", "--out", str(tmp_path / "o")]) == 0
    meta = json.loads((tmp_path / "o" / "metadata.json").read_text())
    assert meta["seed"] == 3
    lines = (tmp_path / "o" / "inclusion.csv").read_text().splitlines()
    assert lines[0] == "delta_l1,xinf_lo,xinf_hi,count,frequency" and len(lines) == 1 + 81


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "riwtl.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "riwtl" in r.stdout
