import csv
import json
import subprocess
import sys
import time

import pytest

from dctnn.cli import EXIT_CONFIG, EXIT_DATA, main, read_manifest

SMALL = ["--dims", "8,8,8", "--n", "200"]
FIT = ["--ranks", "3,3,3", "--cp-rank", "6", "--epochs", "3"]


def run_ok(*argv):
    assert main([str(a) for a in argv]) == 0


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    run_ok("simulate", *SMALL, "--seed", 4, "--out", root / "data")
    run_ok("fit", "--data", root / "data", "--out", root / "tucker", "--structure", "tucker", *FIT)
    run_ok("fit", "--data", root / "data", "--out", root / "cp", "--structure", "cp", *FIT)
    return root


def artifacts(path):
    return read_manifest(path)["artifacts"]


def read_rows(path):
    with open(path) as f:
        return list(csv.reader(f))


def test_simulate_outputs(workspace):
    m = read_manifest(workspace / "data")
    assert {"X.bin", "samples.csv", "config.json", "summary.json"} <= set(m["artifacts"])
    assert m["seed"] == 4 and "numpy" in m["versions"] and m["wall_clock_seconds"] >= 0
    rows = read_rows(workspace / "data" / "samples.csv")
    assert rows[0] == ["index", "y", "true_pi", "true_logit", "split"]
    assert len(rows) == 201


def test_fit_outputs(workspace):
    metrics = json.loads((workspace / "tucker" / "metrics.json").read_text())
    assert {"test_accuracy", "test_mse", "test_prob_mean_y1"} <= set(metrics)
    rows = read_rows(workspace / "tucker" / "residuals.csv")
    assert rows[0] == ["index", "y", "fitted", "residual"] and len(rows) == 121


def test_uq_outputs(workspace, tmp_path):
    run_ok("uq", "--model", workspace / "tucker", "--out", tmp_path / "u")
    rows = read_rows(tmp_path / "u" / "band.csv")
    assert rows[0] == ["lambda", "sens", "sens_lo", "sens_hi", "spec", "spec_lo", "spec_hi"]
    assert len(rows) == 201
    # ten significant digits
    assert max(len(v.replace("-", "").replace(".", "").lstrip("0")) for r in rows[1:] for v in r) <= 10
    auc = json.loads((tmp_path / "u" / "auc.json").read_text())
    assert auc["sens"]["lower"] <= auc["sens"]["upper"]


def test_uq_with_model_smoother_gives_zero_width(workspace, tmp_path):
    run_ok("uq", "--model", workspace / "tucker", "--smoother", "model", "--out", tmp_path / "u")
    for row in read_rows(tmp_path / "u" / "intervals.csv")[1:]:
        assert row[3] == row[4] == row[2]


def test_select_outputs(workspace, tmp_path):
    run_ok("select", "--model-a", workspace / "tucker", "--model-b", workspace / "cp",
           "--out", tmp_path / "s")
    decision = json.loads((tmp_path / "s" / "decision.json").read_text())
    assert decision["final"] in ("ModelA", "ModelB", "Tie", "Conflict")
    fwd = decision["directions"][0]
    assert len(fwd["auc_sens"]) == 2 and fwd["verdict_sens"] in ("ModelA", "ModelB", "Tie")
    rows = read_rows(tmp_path / "s" / "diff_band_forward.csv")
    assert rows[0][0] == "dlambda" and len(rows) == 201


def test_identical_checkpoints_tie(workspace, tmp_path):
    run_ok("select", "--model-a", workspace / "tucker", "--model-b", workspace / "tucker",
           "--out", tmp_path / "s")
    assert json.loads((tmp_path / "s" / "decision.json").read_text())["final"] == "Tie"


def test_select_rejects_models_from_different_datasets(workspace, tmp_path):
    run_ok("simulate", *SMALL, "--seed", 5, "--out", tmp_path / "other")
    run_ok("fit", "--data", tmp_path / "other", "--out", tmp_path / "m", *FIT)
    code = main(["select", "--model-a", str(workspace / "tucker"), "--model-b", str(tmp_path / "m"),
                 "--out", str(tmp_path / "s")])
    assert code == EXIT_DATA


def test_every_subcommand_is_deterministic(workspace, tmp_path):
    run_ok("simulate", *SMALL, "--seed", 4, "--out", tmp_path / "data")
    assert artifacts(tmp_path / "data") == artifacts(workspace / "data")
    run_ok("fit", "--data", workspace / "data", "--out", tmp_path / "tucker", "--structure",
           "tucker", *FIT)
    assert artifacts(tmp_path / "tucker") == artifacts(workspace / "tucker")
    for k in (1, 2):
        run_ok("uq", "--model", workspace / "tucker", "--out", tmp_path / f"u{k}")
        run_ok("select", "--model-a", workspace / "tucker", "--model-b", workspace / "cp",
               "--out", tmp_path / f"s{k}")
        run_ok("coverage", "--data", workspace / "data", "--reps", 1, "--n", 200, "--epochs", 2,
               "--out", tmp_path / f"c{k}")
    for name in ("u", "s", "c"):
        assert artifacts(tmp_path / f"{name}1") == artifacts(tmp_path / f"{name}2")


def test_coverage_report_schema(tmp_path, workspace):
    run_ok("coverage", "--data", workspace / "data", "--reps", 2, "--n", 200, "--epochs", 2,
           "--out", tmp_path / "c")
    report = json.loads((tmp_path / "c" / "coverage.json").read_text())
    assert report["summary"]["reps"] == 2
    rep = report["replications"][0]
    assert {"lambda", "sens_covered", "spec_covered", "auc_sens_covered", "nested"} <= set(rep)


def test_config_file_and_flag_precedence(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[simulate]\nn = 100\nseed = 9\ndims = 8, 8, 8\n")
    run_ok("simulate", "--config", ini, "--seed", 2, "--out", tmp_path / "d")
    cfg = read_manifest(tmp_path / "d")["config"]
    assert cfg["n"] == 100 and cfg["seed"] == 2 and cfg["dims"] == [8, 8, 8]


def test_exit_codes(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[simulate]\nbogus = 1\n")
    assert main(["simulate", "--config", str(ini), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["simulate", "--n", "7", "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["simulate", "--n", "200"]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as e:
        main(["fit", "--epochs", "many"])
    assert e.value.code == EXIT_CONFIG
    assert main(["fit", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "m")]) == EXIT_DATA
    assert main(["uq", "--model", str(tmp_path / "missing"), "--out", str(tmp_path / "u")]) == EXIT_DATA


def test_coverage_needs_oracle(workspace, tmp_path):
    data = tmp_path / "noracle"
    run_ok("simulate", *SMALL, "--seed", 4, "--out", data)
    lines = (data / "samples.csv").read_text().splitlines()
    stripped = [lines[0]] + [",".join(r.split(",")[:2] + ["", ""] + r.split(",")[4:]) for r in lines[1:]]
    (data / "samples.csv").write_text("\n".join(stripped) + "\n")
    assert main(["coverage", "--data", str(data), "--reps", "1", "--out", str(tmp_path / "c")]) == EXIT_DATA


def test_smoke_simulation_is_fast(tmp_path):
    t0 = time.perf_counter()
    run_ok("simulate", "--n", 200, "--out", tmp_path / "d")
    assert time.perf_counter() - t0 < 10


def test_inspect_and_module_entry_point(workspace):
    out = subprocess.run([sys.executable, "-m", "dctnn", "inspect", str(workspace / "tucker")],
                         capture_output=True, text=True, check=True).stdout
    assert '"command": "fit"' in out and "metrics.json" in out
