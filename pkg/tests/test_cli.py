import csv
import io
import json

import numpy as np
import pytest

from fmpca.benchmark import ERROR_COLUMNS, SUMMARY_COLUMNS, BenchmarkConfig, run_benchmark
from fmpca.cli import main
from fmpca.datagen import SimConfig
from fmpca.tensor import write_tnsr

TINY_SIM = {"n": 6, "kept": [50, 100, 150], "asset_count": 30, "seed": 2}


@pytest.fixture
def dataset(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"sim": TINY_SIM}))
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "data")]) == 0
    return tmp_path / "data"


def test_gen_data_single_asset_and_determinism(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps(TINY_SIM))
    for name in ("a", "b"):
        assert main(["gen-data", "--config", str(cfg), "--asset-count", "1",
                     "--out", str(tmp_path / name)]) == 0
    a, b = (tmp_path / "a" / "manifest.csv"), (tmp_path / "b" / "manifest.csv")
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 2


def test_fit_both_modes_and_diff(dataset, tmp_path, capsys):
    c, f = tmp_path / "central", tmp_path / "fed"
    assert main(["fit", "--dataset", str(dataset), "--mode", "central", "--out", str(c)]) == 0
    assert main(["fit", "--dataset", str(dataset), "--mode", "federated", "--split", "15,10,5",
                 "--out", str(f)]) == 0
    capsys.readouterr()
    assert main(["diff", str(c), str(f), "--tol", "1e-8"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["max_factor_deviation"] <= 1e-8
    assert report["max_scatter_relative_deviation"] <= 1e-8
    fit = json.loads((f / "fit.json").read_text())
    assert fit["audit_findings"] == [] and fit["mode"] == "federated"
    assert (f / "protocol_log.jsonl").exists()
    assert (f / "mpca" / "mpca.json").exists() and (f / "prog.json").exists()


def test_fit_files_deterministic(dataset, tmp_path):
    for name in ("r1", "r2"):
        assert main(["fit", "--dataset", str(dataset), "--mode", "federated", "--split", "20,10",
                     "--ranks", "2,2,1", "--out", str(tmp_path / name)]) == 0
    for rel in ("mpca/mpca.json", "mpca/factor_0.tnsr", "prog.json", "fit.json",
                "protocol_log.jsonl"):
        assert (tmp_path / "r1" / rel).read_bytes() == (tmp_path / "r2" / rel).read_bytes()


def test_predict(dataset, tmp_path, capsys):
    out = tmp_path / "m"
    assert main(["fit", "--dataset", str(dataset), "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["predict", "--model", str(out), "--tensor",
                 str(dataset / "asset_0000.tnsr")]) == 0
    result = json.loads(capsys.readouterr().out)
    assert set(result) == {"location", "scale", "point"}
    assert result["point"] == pytest.approx(np.exp(result["location"]))
    write_tnsr(tmp_path / "bad.tnsr", np.zeros((2, 2, 2)))
    assert main(["predict", "--model", str(out), "--tensor", str(tmp_path / "bad.tnsr")]) == 2


def test_exit_codes(dataset, tmp_path):
    assert main(["fit", "--dataset", str(dataset), "--mode", "federated", "--split", "5,5",
                 "--out", str(tmp_path / "x")]) == 2
    assert main(["fit", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path / "x")]) == 2
    assert main(["gen-data", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert main(["fit", "--dataset", str(dataset), "--ranks", "6,6,3",
                 "--out", str(tmp_path / "x")]) == 3
    assert main(["no-such-command"]) == 2
    non_converged = tmp_path / "nc"
    assert main(["fit", "--dataset", str(dataset), "--eta", "-1", "--max-iter", "2",
                 "--out", str(non_converged)]) == 0
    assert json.loads((non_converged / "fit.json").read_text())["converged"] is False


def test_benchmark_command_outputs(tmp_path):
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps({"sim": {"n": 6, "kept": [50, 100, 150], "asset_count": 40},
                               "split": [16, 10, 6], "replications": 2}))
    for name in ("b1", "b2"):
        assert main(["benchmark", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    for f in ("summary.csv", "errors.csv", "config.json"):
        assert (tmp_path / "b1" / f).read_bytes() == (tmp_path / "b2" / f).read_bytes()
    lines = (tmp_path / "b1" / "summary.csv").read_text().splitlines()
    assert lines[0].startswith("# rank selection: fixed variation fraction q=0.97")
    rows = list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))
    assert tuple(rows[0]) == SUMMARY_COLUMNS
    assert len(rows) == 2 * 5
    assert [r["method"] for r in rows[:5]] == ["fmpca", "combined", "user_1", "user_2", "user_3"]
    fm = [r for r in rows if r["method"] == "fmpca"]
    assert all(float(r["max_dev_vs_combined"]) <= 1e-6 for r in fm)
    errs = list(csv.DictReader(open(tmp_path / "b1" / "errors.csv")))
    assert tuple(errs[0]) == ERROR_COLUMNS and len(errs) == 2 * 5 * 8


def test_benchmark_single_method_and_cv(tmp_path):
    sim = SimConfig(n=6, kept=(50, 100, 150), asset_count=40)
    one = run_benchmark(BenchmarkConfig(sim=sim, split=(16, 10, 6), replications=1,
                                        methods=("user_1",)))
    assert list(one.replications[0]) == ["user_1"]
    assert one.summary_csv().count("\n") == 3
    cv = run_benchmark(BenchmarkConfig(sim=sim, split=(16, 10, 6), replications=1, cv_folds=3,
                                       methods=("fmpca", "combined")))
    assert "3-fold cross-validation" in cv.header()
    assert cv.max_dev(0, "fmpca") <= 1e-6


def test_benchmark_config_validation():
    with pytest.raises(ValueError):
        BenchmarkConfig(split=(50, 50, 25))
    with pytest.raises(ValueError):
        BenchmarkConfig(methods=("user_9",))
    with pytest.raises(ValueError):
        BenchmarkConfig(cv_folds=1)
    with pytest.raises(ValueError):
        BenchmarkConfig(family="sev")
