"""End-to-end CLI flows on tiny configurations."""

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from transar.cli import main

from conftest import make_election_frames


SIM_CONFIG = {
    "n0": 64, "nk": 25, "K": 3, "p": 1, "q": 8,
    "a_size": 2, "H": 1, "cov_design": "identity", "error_law": "normal", "seed": 5,
}


def run_cli(*argv):
    assert main(list(argv)) == 0


@pytest.fixture
def sim_dir(tmp_path):
    config = tmp_path / "sim.json"
    config.write_text(json.dumps(SIM_CONFIG))
    out = tmp_path / "studies"
    run_cli("simulate", "--config", str(config), "--out", str(out))
    return out


class TestSimulateCli:
    def test_writes_studies_and_manifest(self, sim_dir):
        assert sorted(p.name for p in sim_dir.glob("study_*")) == [
            "study_00", "study_01", "study_02", "study_03",
        ]
        manifest = json.loads((sim_dir / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 5
        meta = json.loads((sim_dir / "study_00" / "meta.json").read_text())
        assert meta["role"] == "target" and meta["n"] == 64
        params = pd.read_csv(sim_dir / "study_00" / "params.csv")
        assert list(params["param"][:2]) == ["lambda_1", "beta_1"]

    def test_data_shapes(self, sim_dir):
        frame = pd.read_csv(sim_dir / "study_01" / "data.csv")
        assert frame.shape == (25, 9)
        weights = pd.read_csv(sim_dir / "study_01" / "w1.csv")
        assert set(weights.columns) == {"row", "col", "weight"}


class TestEstimateCli:
    def test_theta_csv_named_coordinates(self, sim_dir, tmp_path):
        out = tmp_path / "fit"
        run_cli("estimate", "--data", str(sim_dir / "study_00"), "--penalty", "auto",
                "--out", str(out))
        theta = pd.read_csv(out / "theta.csv")
        assert list(theta["param"]) == ["lambda_1"] + [f"beta_{j}" for j in range(1, 9)]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["penalty_requested"] == "auto"
        assert manifest["penalty_resolved"] > 0

    def test_explicit_penalty(self, sim_dir, tmp_path):
        out = tmp_path / "fit0"
        run_cli("estimate", "--data", str(sim_dir / "study_00"), "--penalty", "0.0",
                "--out", str(out))
        assert (out / "theta.csv").exists()


class TestTransferCli:
    def test_transfer_outputs(self, sim_dir, tmp_path):
        out = tmp_path / "transfer"
        run_cli(
            "transfer", "--target", str(sim_dir / "study_00"),
            "--sources", str(sim_dir / "study_01"), str(sim_dir / "study_02"),
            "--set", "1,2", "--out", str(out),
        )
        frame = pd.read_csv(out / "estimate.csv")
        assert list(frame.columns) == ["param", "omega", "delta", "theta"]
        np.testing.assert_allclose(frame["theta"], frame["omega"] + frame["delta"])
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["transfer_set"] == [1, 2]
        assert manifest["lambda_omega_resolved"] > 0

    def test_empty_set_fallback_flag(self, sim_dir, tmp_path):
        out = tmp_path / "fallback"
        run_cli(
            "transfer", "--target", str(sim_dir / "study_00"),
            "--sources", str(sim_dir / "study_01"), "--out", str(out),
        )
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["fallback"] is True


class TestDetectCli:
    def test_report_and_audit(self, sim_dir, tmp_path):
        out = tmp_path / "detect"
        run_cli(
            "detect", "--target", str(sim_dir / "study_00"),
            "--sources", str(sim_dir / "study_01"), str(sim_dir / "study_02"),
            str(sim_dir / "study_03"),
            "--seed", "3", "--replications", "2", "--out", str(out),
        )
        report = pd.read_csv(out / "report.csv")
        assert len(report) == 2 * 3  # replications x sources
        assert set(report.columns) >= {"replication", "k", "avg_loss", "threshold", "detected"}
        audit = [json.loads(line) for line in (out / "audit.jsonl").read_text().splitlines()]
        assert len(audit) == 2 * 4 * 3  # replications x (K+1) x folds
        assert {entry["r"] for entry in audit} == {1, 2, 3}


class TestBenchCli:
    def test_rmse_and_curves(self, tmp_path):
        grid = {
            "base": SIM_CONFIG,
            "a_sizes": [0, 2], "h_values": [1], "designs": ["identity"],
            "methods": ["SAR", "OracleTranSAR"], "replications": 2, "seed": 1,
        }
        grid_path = tmp_path / "grid.json"
        grid_path.write_text(json.dumps(grid))
        out = tmp_path / "bench"
        run_cli("bench", "--grid", str(grid_path), "--out", str(out))
        rmse = pd.read_csv(out / "rmse.csv")
        assert len(rmse) == 4
        assert list(rmse.columns) == [
            "design", "h", "a_size", "method", "rmse_lambda", "rmse_total", "replications_used",
        ]
        curves = pd.read_csv(out / "curves.csv")
        assert list(curves.columns) == ["method", "a_size", "h", "design", "rmse"]


class TestElectionCli:
    def test_election_outputs(self, tmp_path):
        cov, resp, adj, votes, truth = make_election_frames(seed=3, n_states=3, side=4, q=3)
        for name, frame in [("covariates", cov), ("response", resp), ("adjacency", adj),
                            ("votes", votes), ("truth", truth)]:
            frame.to_csv(tmp_path / f"{name}.csv", index=False)
        out = tmp_path / "election"
        run_cli(
            "election",
            "--covariates", str(tmp_path / "covariates.csv"),
            "--response", str(tmp_path / "response.csv"),
            "--adjacency", str(tmp_path / "adjacency.csv"),
            "--votes", str(tmp_path / "votes.csv"),
            "--truth", str(tmp_path / "truth.csv"),
            "--targets", "S1", "--replications", "2", "--seed", "4",
            "--out", str(out),
        )
        county = pd.read_csv(out / "county_pred.csv")
        assert set(county["method"]) == {"TranSAR", "SAR"}
        assert len(county) == 2 * 16
        state = pd.read_csv(out / "state_pred.csv")
        assert set(state.columns) == {"state", "method", "predicted_rate",
                                      "replication_votes", "winner"}
        rmse = pd.read_csv(out / "rmse.csv")
        assert len(rmse) == 2
        winners = pd.read_csv(out / "winners.csv")
        assert set(winners["winner"]) <= {"DEM", "REP"}
