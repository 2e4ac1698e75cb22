import json
import re
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from egpdgraph.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main


def write_config(root, out="run", **overrides):
    cfg = {
        "regions": "data/regions.csv",
        "panel": "data/panel.csv",
        "adjacency": {"lambda": 300, "alpha": 2, "delta": 400},
        "occurrence": {"layers": [{"kind": "graph_skip", "width": 5}]},
        "spread": {"layers": [{"kind": "graph_skip", "width": 4}]},
        "train": {"learning_rate": 0.02, "epochs": 60},
        "bootstrap": {"block_size": 2, "replicates": 3},
        "grid": {"delta": [0, 50]},
        "seed": 4,
        "out": out,
    }
    cfg.update(overrides)
    path = root / "config.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    truth = root / "truth.json"
    truth.write_text(json.dumps({"n_regions": 14, "n_months": 16, "missing_regions": 1}))
    assert main(["simulate", "--config", str(truth), "--seed", "3", "--out", str(root / "data")]) == 0
    config = write_config(root)
    assert main(["fit", "--config", str(config)]) == EXIT_OK
    return root, config


def test_simulate_writes_truth(workspace):
    root, _ = workspace
    for name in ("regions.csv", "panel.csv", "truth.json", "truth_cells.csv"):
        assert (root / "data" / name).exists()
    assert json.loads((root / "data" / "truth.json").read_text())["seed"] == 3


def test_ingest_check_reports_summary(workspace, capsys):
    _, config = workspace
    assert main(["ingest-check", "--config", str(config)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["regions"] == 14 and summary["missing_responses"] == 16


def test_fit_writes_five_artifacts(workspace):
    root, _ = workspace
    for name in ("standardizer.json", "occurrence_model.json", "spread_model.json",
                 "loss_traces.csv", "run_metadata.json"):
        assert (root / "run" / name).exists()


def test_fit_rerun_identical_metadata(workspace, tmp_path):
    root, config = workspace
    assert main(["fit", "--config", str(config), "--out", str(tmp_path / "again")]) == 0
    for name in ("run_metadata.json", "spread_model.json", "loss_traces.csv", "standardizer.json"):
        assert (tmp_path / "again" / name).read_bytes() == (root / "run" / name).read_bytes()


def test_evaluate_hazard_attribute(workspace):
    root, config = workspace
    assert main(["evaluate", "--config", str(config)]) == 0
    scores = pd.read_csv(root / "run" / "scores.csv")
    assert list(scores.columns) == ["metric", "value", "replicate"]
    assert {"auc_validation", "crps_validation", "twcrps_validation"} <= set(scores["metric"])
    qq = pd.read_csv(root / "run" / "qq_exponential.csv")
    assert list(qq.columns) == ["empirical", "theoretical", "band_lo", "band_hi"]
    assert np.all(np.diff(qq["empirical"]) >= 0)

    assert main(["hazard", "--config", str(config), "--month", "5"]) == 0
    hz = pd.read_csv(root / "run" / "hazard.csv")
    assert list(hz.columns) == ["region_id", "month", "p0", "log_rel_severity", "ch"]
    assert len(hz) == 14 and np.all(hz["ch"] >= 0) and np.all(hz["month"] == 5)
    assert set(pd.read_csv(root / "run" / "trends.csv")["metric"]) == {"p0", "log_rel_severity", "ch"}

    assert main(["attribute", "--config", str(config), "--month", "2"]) == 0
    ranking = pd.read_csv(root / "run" / "attribution_ranking.csv")
    assert list(ranking.columns) == ["covariate", "target", "iqr", "rank"]
    assert set(ranking["target"]) == {"p0", "sigma"}
    scores = pd.read_csv(root / "run" / "attribution_scores.csv")
    assert list(scores.columns) == ["covariate", "region_id", "month", "target", "score"]


def test_bootstrap_rows_and_summary(workspace):
    root, config = workspace
    assert main(["bootstrap", "--config", str(config), "--replicates", "3"]) == 0
    table = pd.read_csv(root / "run" / "replicates.csv", dtype=str)
    assert list(table.columns) == ["replicate", "kappa", "xi", "val_loss_occ", "val_loss_egpd"]
    assert table["replicate"].tolist() == ["0", "1", "2", "summary"]
    assert re.fullmatch(r"-?\d+\.\d+ \(-?\d+\.\d+, -?\d+\.\d+\)", table.iloc[3]["kappa"])
    # evaluate now picks up replicate bands
    assert main(["evaluate", "--config", str(config)]) == 0
    qq = pd.read_csv(root / "run" / "qq_gaussian.csv")
    assert qq["band_lo"].notna().all() and np.all(qq["band_lo"] <= qq["band_hi"])
    scores = pd.read_csv(root / "run" / "scores.csv", dtype={"replicate": str})
    assert {"point", "0", "1", "2"} <= set(scores["replicate"])


def test_grid_selects_by_recorded_metrics(workspace):
    root, config = workspace
    assert main(["grid", "--config", str(config), "--out", str(root / "gridrun")]) == 0
    grid = pd.read_csv(root / "gridrun" / "grid.csv", float_precision="round_trip")
    assert sorted(grid["delta"]) == [0.0, 50.0] and len(grid) == 2
    best = json.loads((root / "gridrun" / "best.json").read_text())
    assert best["occurrence"]["val_auc"] == grid["val_auc"].max()
    assert best["spread"]["val_nll_egpd"] == grid["val_nll_egpd"].min()
    assert grid.loc[grid["delta"] == 0, "n_edges"].item() == 0


def test_missing_artifacts_listed(workspace, tmp_path, capsys):
    _, config = workspace
    assert main(["evaluate", "--config", str(config), "--out", str(tmp_path / "empty")]) == EXIT_VALIDATION
    err = capsys.readouterr().err
    assert "run_metadata.json" in err and "spread_model.json" in err


def test_validation_failures_exit_one(tmp_path, capsys):
    (tmp_path / "regions.csv").write_text("id,lat,lon,area_km2\n1,-33,150,10\n2,-34,151,20\n")
    (tmp_path / "panel.csv").write_text("region_id,year,month,x,response\n1,2001,1,0.5,-1\n2,2001,1,0.2,0\n")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"regions": "regions.csv", "panel": "panel.csv"}))
    assert main(["ingest-check", "--config", str(cfg)]) == EXIT_VALIDATION
    assert "region 1, 2001-01" in capsys.readouterr().err
    (tmp_path / "c2.json").write_text(json.dumps({"regions": "regions.csv", "panel": "panel.csv",
                                                  "train": {"epochs": 3}, "out": "o"}))
    assert main(["fit", "--config", str(tmp_path / "c2.json")]) == EXIT_VALIDATION


def test_numerical_failure_exit_two(workspace, tmp_path):
    root, _ = workspace
    cfg = write_config(root, out=str(tmp_path / "boom"), train={"learning_rate": 1e6, "epochs": 200})
    try:
        assert main(["fit", "--config", str(cfg)]) == EXIT_NUMERICAL
    finally:
        write_config(root)


def test_module_entry_point(workspace):
    res = subprocess.run([sys.executable, "-m", "egpdgraph.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "ingest-check", "fit", "evaluate", "hazard", "bootstrap", "attribute", "grid"):
        assert cmd in res.stdout
