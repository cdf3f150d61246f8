"""County-level election prediction pipeline.

Each state is a separate SAR study: counties are the spatial units, the
response is the county-level difference in support rates (positive values
favor DEM by convention), and the weight matrix comes from a precomputed
county contiguity list restricted to in-state pairs. A target (swing) state
is fit by the detection-plus-transfer pipeline with every other state as a
candidate source, county support is predicted through the reduced form
Y_hat = S(lambda_hat)^{-1} X beta_hat, and state-level support is the
vote-weighted county average. The winner call aggregates over bootstrap
replications: DEM needs strictly more than half of the runs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .detection import initial_estimator, transar
from .estimators import Dataset, ModelParams, PenaltyConfig
from .spatial import SarSystem, build_from_adjacency, sar_solve

logger = logging.getLogger(__name__)

MIN_COUNTIES = 5
DEM, REP = "DEM", "REP"


@dataclass(frozen=True)
class Scaler:
    """Per-state feature standardization recorded at ingest time."""

    mean: np.ndarray
    sd: np.ndarray

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.sd


@dataclass(frozen=True, eq=False)
class ElectionData:
    """Per-state datasets plus everything needed to aggregate and predict."""

    states: dict[str, Dataset]
    counties: dict[str, tuple[str, ...]]
    votes: dict[str, np.ndarray]
    scalers: dict[str, Scaler]
    feature_names: tuple[str, ...]
    unmatched: tuple[str, ...]
    rejected_states: tuple[str, ...]

    def state_names(self) -> list[str]:
        return sorted(self.states)


@dataclass(frozen=True)
class StatePrediction:
    """Aggregated outcome for one (target state, method) pair."""

    state: str
    method: str
    predicted_rate: float
    winner: str
    replication_votes: float
    county_pred: np.ndarray
    rmse: float | None = None
    bias: float | None = None


def _read_csv(path, required: tuple[str, ...]) -> pd.DataFrame:
    frame = pd.read_csv(
        path,
        dtype={c: str for c in required if c in ("county_id", "state", "src", "dst")},
        float_precision="round_trip",
    )
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing required column(s) {missing}")
    return frame


def ingest(covariates_csv, response_csv, adjacency_csv, votes_csv) -> ElectionData:
    """Join the county tables and build one standardized Dataset per state.

    Counties present in the covariate table but missing a response or a vote
    count are listed in the unmatched report and dropped; adjacency rows
    referencing dropped counties are ignored. States with fewer than 5
    matched counties are rejected (recorded, not fatal). Covariates are
    standardized per state (mean 0, sd 1, constant columns left at 0) and an
    intercept column is prepended; the scaler is recorded for prediction.
    """
    cov = _read_csv(covariates_csv, ("county_id", "state"))
    resp = _read_csv(response_csv, ("county_id", "response"))
    votes = _read_csv(votes_csv, ("county_id", "votes"))
    adj = _read_csv(adjacency_csv, ("src", "dst"))

    features = tuple(c for c in cov.columns if c not in ("county_id", "state"))
    if cov["county_id"].duplicated().any():
        dupes = sorted(cov.loc[cov["county_id"].duplicated(), "county_id"])
        raise ValueError(f"duplicate county ids in covariates: {dupes[:5]}")

    resp_map = dict(zip(resp["county_id"], resp["response"].astype(float)))
    vote_map = dict(zip(votes["county_id"], votes["votes"].astype(float)))

    ids = set(cov["county_id"])
    matched = {cid for cid in ids if cid in resp_map and cid in vote_map}
    unmatched = sorted((ids | set(resp_map) | set(vote_map)) - matched)

    state_of = dict(zip(cov["county_id"], cov["state"]))
    pairs_by_state: dict[str, list[tuple[str, str]]] = {}
    for src, dst in zip(adj["src"], adj["dst"]):
        if src in matched and dst in matched and state_of[src] == state_of[dst]:
            pairs_by_state.setdefault(state_of[src], []).append((src, dst))

    states: dict[str, Dataset] = {}
    counties: dict[str, tuple[str, ...]] = {}
    vote_arrays: dict[str, np.ndarray] = {}
    scalers: dict[str, Scaler] = {}
    rejected: list[str] = []
    for state, group in cov[cov["county_id"].isin(matched)].groupby("state", sort=True):
        group = group.sort_values("county_id")
        ids_here = tuple(group["county_id"])
        if len(ids_here) < MIN_COUNTIES:
            rejected.append(state)
            continue
        index = {cid: i for i, cid in enumerate(ids_here)}
        raw = group[list(features)].to_numpy(dtype=float)
        mean = raw.mean(axis=0)
        sd = raw.std(axis=0)
        sd = np.where(sd == 0.0, 1.0, sd)
        scaler = Scaler(mean=mean, sd=sd)
        x = np.column_stack([np.ones(len(ids_here)), scaler.apply(raw)])
        y = np.array([resp_map[cid] for cid in ids_here])
        pairs = [(index[a], index[b]) for a, b in pairs_by_state.get(state, [])]
        w = build_from_adjacency(len(ids_here), pairs)
        states[state] = Dataset(y=y, x=x, weights=(w,), id=state, has_intercept=True)
        counties[state] = ids_here
        vote_arrays[state] = np.array([vote_map[cid] for cid in ids_here])
        scalers[state] = scaler
    return ElectionData(
        states=states,
        counties=counties,
        votes=vote_arrays,
        scalers=scalers,
        feature_names=features,
        unmatched=tuple(unmatched),
        rejected_states=tuple(sorted(rejected)),
    )


def predict_county(theta: ModelParams, dataset: Dataset) -> np.ndarray:
    """Reduced-form county prediction Y_hat = S(lambda_hat)^{-1} X beta_hat."""
    signal = dataset.x @ theta.beta
    if not dataset.weights or np.all(theta.lam == 0.0):
        return signal
    return sar_solve(SarSystem(theta.lam, dataset.weights), signal)


def state_aggregate(predicted: np.ndarray, votes: np.ndarray) -> float:
    """Vote-weighted average of county rates: sum_i pred_i votes_i / sum votes."""
    predicted = np.asarray(predicted, dtype=float).ravel()
    votes = np.asarray(votes, dtype=float).ravel()
    if predicted.shape != votes.shape:
        raise ValueError("predicted and votes must have matching length")
    if np.any(votes < 0):
        raise ValueError("votes must be nonnegative")
    total = votes.sum()
    if total <= 0:
        raise ValueError("total votes must be positive")
    return float(predicted @ votes / total)


def _truth_arrays(data: ElectionData, truth) -> dict[str, np.ndarray]:
    if truth is None:
        return {}
    if isinstance(truth, pd.DataFrame):
        truth = dict(zip(truth["county_id"], truth["response"].astype(float)))
    arrays = {}
    for state, ids in data.counties.items():
        if all(cid in truth for cid in ids):
            arrays[state] = np.array([float(truth[cid]) for cid in ids])
    return arrays


def run_election(
    data: ElectionData,
    targets: list[str],
    replications: int,
    rng: np.random.Generator,
    *,
    penalties: PenaltyConfig = PenaltyConfig(),
    truth=None,
    methods: tuple[str, ...] = ("TranSAR", "SAR"),
) -> list[StatePrediction]:
    """Fit each target state with every other state as a source.

    The detection-plus-transfer pipeline reruns `replications` times with
    fresh bootstrap draws; county predictions are averaged across runs and
    the winner is DEM only when strictly more than half of the runs favor it.
    The target-only SAR fit is deterministic, so its runs coincide. When
    truth (a county_id -> response mapping or response-shaped DataFrame) is
    supplied, county-level prediction RMSE and state-level bias are attached.
    One state failing is logged and skipped without aborting the others.
    """
    unknown = [t for t in targets if t not in data.states]
    if unknown:
        raise ValueError(f"target state(s) {unknown} not present in the ingested data")
    truth_arrays = _truth_arrays(data, truth)
    seeds = rng.integers(0, 2**63 - 1, size=(len(targets), replications))
    predictions: list[StatePrediction] = []
    for i, state in enumerate(targets):
        target_ds = data.states[state]
        votes = data.votes[state]
        sources = [data.states[s] for s in data.state_names() if s != state]
        true_y = truth_arrays.get(state)
        true_rate = state_aggregate(true_y, votes) if true_y is not None else None
        try:
            params_ini, info = initial_estimator(target_ds, penalties, return_info=True)
        except Exception:  # noqa: BLE001 - per-state isolation
            logger.exception("state %s: target fit failed; skipping", state)
            continue
        for method in methods:
            try:
                county_runs = []
                for m in range(replications):
                    if method == "SAR":
                        pred = predict_county(params_ini, target_ds)
                    else:
                        run_rng = np.random.default_rng(seeds[i, m])
                        estimate, _ = transar(
                            target_ds, sources, run_rng, penalties,
                            theta_ini=params_ini, sigma0=info.sigma_hat,
                        )
                        pred = predict_county(estimate.params(target_ds.p), target_ds)
                    county_runs.append(pred)
                rates = np.array([state_aggregate(pred, votes) for pred in county_runs])
                dem_share = float(np.mean(rates > 0.0))
                mean_pred = np.mean(county_runs, axis=0)
                rmse_val = None
                bias_val = None
                if true_y is not None:
                    rmse_val = float(np.mean([
                        np.sqrt(np.mean((pred - true_y) ** 2)) for pred in county_runs
                    ]))
                    bias_val = float(rates.mean() - true_rate)
                predictions.append(
                    StatePrediction(
                        state=state,
                        method=method,
                        predicted_rate=float(rates.mean()),
                        winner=DEM if dem_share > 0.5 else REP,
                        replication_votes=dem_share,
                        county_pred=mean_pred,
                        rmse=rmse_val,
                        bias=bias_val,
                    )
                )
            except Exception:  # noqa: BLE001
                logger.exception("state %s method %s failed; skipping", state, method)
    return predictions
