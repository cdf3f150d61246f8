"""Shared fixtures: small SAR datasets and a synthetic multi-state election."""

from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

CRITERION_LINES: list[str] = []


def record_criterion(line: str) -> None:
    CRITERION_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)

from transar.estimators import Dataset
from transar.spatial import SarSystem, build_grid_weight, sar_solve


def make_sar_dataset(
    n_side: int = 7,
    q: int = 3,
    lam: float = 0.4,
    beta=None,
    noise: float = 1.0,
    seed: int = 0,
    order: int = 1,
) -> tuple[Dataset, np.ndarray]:
    """A single grid SAR study plus its true theta."""
    rng = np.random.default_rng(seed)
    w = build_grid_weight(n_side, order)
    n = n_side * n_side
    x = rng.standard_normal((n, q))
    if beta is None:
        beta = np.zeros(q)
        beta[: min(3, q)] = 1.0
    beta = np.asarray(beta, dtype=float)
    v = noise * rng.standard_normal(n) if noise else np.zeros(n)
    y = sar_solve(SarSystem([lam], (w,)), x @ beta + v)
    ds = Dataset(y=y, x=x, weights=(w,), id=f"grid{n_side}")
    return ds, np.concatenate([[lam], beta])


def queen_pairs(side: int) -> list[tuple[int, int]]:
    """Queen contiguity (shared edge or vertex) on a side x side grid."""
    pairs = []
    for r in range(side):
        for c in range(side):
            i = r * side + c
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if dr == dc == 0:
                        continue
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < side and 0 <= cc < side:
                        j = rr * side + cc
                        if i < j:
                            pairs.append((i, j))
    return pairs


def make_election_frames(
    seed: int = 0,
    n_states: int = 7,
    side: int = 6,
    q: int = 8,
    lam: float = 0.3,
    noise: float = 0.15,
):
    """Synthetic county tables: all states share one SAR data process.

    Returns (covariates, response, adjacency, votes, truth) DataFrames in the
    ingest CSV schemas; truth is a second response draw from the same process.
    """
    rng = np.random.default_rng(seed)
    beta = np.zeros(q)
    beta[:3] = (0.8, -0.5, 0.3)
    intercept = -0.05
    cov_rows, resp_rows, adj_rows, vote_rows, truth_rows = [], [], [], [], []
    pairs = queen_pairs(side)
    from transar.spatial import build_from_adjacency

    w = build_from_adjacency(side * side, pairs)
    system = SarSystem([lam], (w,))
    for s in range(n_states):
        state = f"S{s + 1}"
        n = side * side
        ids = [f"{state}-{i:03d}" for i in range(n)]
        x = rng.standard_normal((n, q))
        signal = x @ beta + intercept
        y = sar_solve(system, signal + noise * rng.standard_normal(n))
        y_new = sar_solve(system, signal + noise * rng.standard_normal(n))
        votes = rng.integers(1_000, 100_000, size=n)
        for i, cid in enumerate(ids):
            cov_rows.append({"county_id": cid, "state": state,
                             **{f"f{j + 1}": x[i, j] for j in range(q)}})
            resp_rows.append({"county_id": cid, "response": y[i]})
            truth_rows.append({"county_id": cid, "response": y_new[i]})
            vote_rows.append({"county_id": cid, "votes": int(votes[i])})
        for a, b in pairs:
            adj_rows.append({"src": ids[a], "dst": ids[b]})
    return (
        pd.DataFrame(cov_rows),
        pd.DataFrame(resp_rows),
        pd.DataFrame(adj_rows),
        pd.DataFrame(vote_rows),
        pd.DataFrame(truth_rows),
    )


@pytest.fixture
def election_csvs(tmp_path):
    """Synthetic election CSV files on disk; returns their paths."""
    cov, resp, adj, votes, truth = make_election_frames(seed=11)
    paths = {}
    for name, frame in [("covariates", cov), ("response", resp),
                        ("adjacency", adj), ("votes", votes), ("truth", truth)]:
        path = tmp_path / f"{name}.csv"
        frame.to_csv(path, index=False)
        paths[name] = path
    return paths
