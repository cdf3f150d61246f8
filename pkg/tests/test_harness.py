"""Experiment runner: RMSE arithmetic, grid bookkeeping, determinism."""

import dataclasses
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from transar.estimators import PenaltyConfig
from transar.harness import ExperimentGrid, rmse, run_grid
from transar.simulate import SimulationConfig


SMALL_BASE = SimulationConfig(n0=100, nk=49, K=4, p=1, q=15, a_size=2, H=1, seed=0)


class TestRmse:
    def test_exact_estimates(self):
        truth = np.array([0.4, 1.0, 0.0])
        assert rmse([truth, truth.copy()], truth) == 0.0

    def test_single_replication_norm(self):
        truth = np.zeros(5)
        est = np.array([3.0, 4.0, 0.0, 0.0, 0.0])
        assert_allclose(rmse([est], truth), 5.0)

    def test_two_replications(self):
        truth = np.zeros(2)
        assert_allclose(rmse([np.array([1.0, 0.0]), np.array([3.0, 0.0])], truth), math.sqrt(5))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rmse([], np.zeros(2))


class TestGridValidation:
    def test_unknown_method(self):
        with pytest.raises(ValueError, match="unknown methods"):
            ExperimentGrid(base=SMALL_BASE, methods=("SAR", "MAGIC"))

    def test_replications_positive(self):
        with pytest.raises(ValueError, match="replications"):
            ExperimentGrid(base=SMALL_BASE, replications=0)

    def test_cell_enumeration(self):
        grid = ExperimentGrid(base=SMALL_BASE, a_sizes=(0, 2), h_values=(0, 1),
                              designs=("identity", "ar_05"))
        assert len(grid.cells()) == 8


class TestRunGrid:
    def test_record_count_and_determinism(self):
        grid = ExperimentGrid(
            base=SMALL_BASE, a_sizes=(2,), h_values=(1,), designs=("identity",),
            methods=("SAR",), replications=1, seed=7,
        )
        records1 = run_grid(grid)
        records2 = run_grid(grid)
        assert len(records1) == 1
        assert records1 == records2  # bit-identical dataclasses

    def test_full_record_grid(self):
        grid = ExperimentGrid(
            base=SMALL_BASE, a_sizes=(0, 2), h_values=(0,), designs=("identity",),
            methods=("SAR", "OracleTranSAR"), replications=2, seed=1,
        )
        records = run_grid(grid)
        assert len(records) == 2 * 1 * 1 * 2
        for record in records:
            assert record.replications_used == 2
            assert record.rmse_total >= 0.0

    def test_glm_baseline_lambda_is_nan(self):
        grid = ExperimentGrid(
            base=SMALL_BASE, a_sizes=(2,), h_values=(1,), designs=("identity",),
            methods=("glm-baseline",), replications=1, seed=2,
        )
        record = run_grid(grid)[0]
        assert math.isnan(record.rmse_lambda)
        assert record.rmse_total > 0.0

    def test_parallel_matches_serial(self):
        grid = ExperimentGrid(
            base=SMALL_BASE, a_sizes=(0, 2), h_values=(0,), designs=("identity",),
            methods=("SAR", "K-TranSAR"), replications=2, seed=3,
        )
        assert run_grid(grid, n_jobs=1) == run_grid(grid, n_jobs=2)

    def test_ar_designs_run(self):
        grid = ExperimentGrid(
            base=SMALL_BASE, a_sizes=(2,), h_values=(0,), designs=("ar_05", "ar_09"),
            methods=("SAR",), replications=1, seed=4,
        )
        records = run_grid(grid)
        assert {r.design for r in records} == {"ar_05", "ar_09"}


class TestMonotoneImprovement:
    def test_oracle_rmse_nonincreasing_in_a_size(self):
        # Mean error is non-increasing in the informative count, up to 1.5
        # standard errors of the replication noise.
        base = SimulationConfig(n0=144, nk=100, K=8, p=1, q=30, a_size=0, H=0, seed=0)
        reps = 20
        stats = {}
        for a_size in (0, 4, 8):
            errors = []
            for rep in range(reps):
                cfg = dataclasses.replace(base, a_size=a_size, seed=100 + rep)
                from transar.harness import replication_estimates

                est, truth = replication_estimates(cfg, ("OracleTranSAR",), PenaltyConfig())
                errors.append(np.linalg.norm(est["OracleTranSAR"] - truth))
            errors = np.asarray(errors)
            stats[a_size] = (errors.mean(), errors.std(ddof=1) / math.sqrt(reps))
        for low, high in [(0, 4), (4, 8)]:
            mean_hi, se_hi = stats[high]
            mean_lo, se_lo = stats[low]
            assert mean_hi <= mean_lo + 1.5 * (se_hi + se_lo)
