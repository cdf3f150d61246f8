"""Command-line entry points.

Subcommands mirror the library layers: ``simulate`` writes study
directories, ``estimate`` fits a single study, ``transfer`` runs the
two-stage estimator over an explicit source set, ``detect`` scores sources
by bootstrap loss comparison, ``bench`` reproduces the RMSE tables, and
``election`` runs the county pipeline. Every command records a manifest of
the resolved configuration; reruns with identical inputs produce
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .dataio import param_names, read_dataset, write_dataset, write_manifest
from .detection import detect, transar
from .election import ingest, run_election
from .estimators import PenaltyConfig, tsls
from .harness import ExperimentGrid, run_grid
from .simulate import SimulationConfig, gen_study_collection
from .transfer import TransferConfig, a_transar


def _penalty_config(args) -> PenaltyConfig:
    return PenaltyConfig(
        theta_c=args.theta_c,
        omega_c=args.omega_c,
        delta_c=args.delta_c,
        first_c=args.first_c,
        ridge_eps=args.ridge,
    )


def _add_penalty_args(parser: argparse.ArgumentParser) -> None:
    defaults = PenaltyConfig()
    parser.add_argument("--theta-c", type=float, default=defaults.theta_c,
                        help="constant c in the target-fit penalty c*sigma*sqrt(log(q)/n)")
    parser.add_argument("--omega-c", type=float, default=defaults.omega_c,
                        help="constant for the pooled transferring-stage penalty")
    parser.add_argument("--delta-c", type=float, default=defaults.delta_c,
                        help="constant for the debiasing-stage penalty")
    parser.add_argument("--first-c", type=float, default=defaults.first_c,
                        help="constant for penalized first-stage columns")
    parser.add_argument("--ridge", type=float, default=defaults.ridge_eps,
                        help="ridge stabilization added to Q'Q in the first stage")


def _parse_penalty(text: str):
    if text in ("auto", "bic"):
        return text
    return float(text)


def _load_sources(paths) -> list:
    return [read_dataset(p) for p in paths]


def _frame_to_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False)


def cmd_simulate(args) -> None:
    config = SimulationConfig(**json.loads(Path(args.config).read_text()))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    studies = gen_study_collection(config)
    for k, study in enumerate(studies):
        write_dataset(
            study.dataset,
            out / f"study_{k:02d}",
            true_params=study.true_params,
            extra_meta={"informative": study.informative, "role": "target" if k == 0 else "source"},
        )
    write_manifest(out / "manifest.json", {
        "command": "simulate",
        "config": dataclasses.asdict(config),
        "studies": [f"study_{k:02d}" for k in range(len(studies))],
        "version": __version__,
    })


def cmd_estimate(args) -> None:
    dataset = read_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    penalty = _parse_penalty(args.penalty)
    params, info = tsls(
        dataset, penalty, ridge_eps=args.ridge,
        penalty_c=args.theta_c, first_c=args.first_c, return_info=True,
    )
    frame = pd.DataFrame({"param": param_names(dataset.p, dataset.q), "value": params.theta})
    _frame_to_csv(frame, out / "theta.csv")
    write_manifest(out / "manifest.json", {
        "command": "estimate",
        "data": str(args.data),
        "penalty_requested": args.penalty,
        "penalty_resolved": info.penalty,
        "sigma_hat": info.sigma_hat,
        "first_stage_mode": info.first_stage_mode,
        "ridge_eps": args.ridge,
        "theta_c": args.theta_c,
        "first_c": args.first_c,
        "version": __version__,
    })


def cmd_transfer(args) -> None:
    target = read_dataset(args.target)
    sources = _load_sources(args.sources)
    transfer_set = frozenset(int(k) for k in args.set.split(",") if k.strip()) if args.set else frozenset()
    config = TransferConfig(
        transfer_set=transfer_set,
        lambda_omega=_parse_penalty(args.lambda_omega),
        lambda_delta=_parse_penalty(args.lambda_delta),
        spatial=not args.no_spatial,
        include_target_in_pool=args.include_target_in_pool,
        penalties=_penalty_config(args),
    )
    estimate = a_transar(target, sources, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({
        "param": param_names(target.p, target.q),
        "omega": estimate.omega_hat,
        "delta": estimate.delta_hat,
        "theta": estimate.theta_hat,
    })
    _frame_to_csv(frame, out / "estimate.csv")
    diag = estimate.diagnostics
    write_manifest(out / "manifest.json", {
        "command": "transfer",
        "target": str(args.target),
        "sources": [str(s) for s in args.sources],
        "transfer_set": sorted(transfer_set),
        "lambda_omega_requested": args.lambda_omega,
        "lambda_delta_requested": args.lambda_delta,
        "lambda_omega_resolved": diag.lambda_omega,
        "lambda_delta_resolved": diag.lambda_delta,
        "sigma0": diag.sigma0,
        "fallback": diag.fallback,
        "spatial": not args.no_spatial,
        "include_target_in_pool": args.include_target_in_pool,
        "penalties": dataclasses.asdict(_penalty_config(args)),
        "version": __version__,
    })


def cmd_detect(args) -> None:
    target = read_dataset(args.target)
    sources = _load_sources(args.sources)
    penalties = _penalty_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    audit_lines = []
    for rep in range(args.replications):
        rng = np.random.default_rng([args.seed, rep])
        report = detect(target, sources, rng, penalties)
        for k in range(1, len(sources) + 1):
            rows.append({
                "replication": rep,
                "k": k,
                "avg_loss": report.source_losses[k - 1],
                "baseline_loss": report.baseline_loss,
                "sigma_hat": report.sigma_hat,
                "threshold": report.threshold,
                "detected": k in report.detected,
            })
        for k in range(report.fold_losses.shape[0]):
            for r in range(report.fold_losses.shape[1]):
                audit_lines.append(json.dumps(
                    {"replication": rep, "k": k, "r": r + 1, "loss": report.fold_losses[k, r]},
                    sort_keys=True,
                ))
    _frame_to_csv(pd.DataFrame(rows), out / "report.csv")
    (out / "audit.jsonl").write_text("\n".join(audit_lines) + "\n")
    write_manifest(out / "manifest.json", {
        "command": "detect",
        "target": str(args.target),
        "sources": [str(s) for s in args.sources],
        "seed": args.seed,
        "replications": args.replications,
        "penalties": dataclasses.asdict(penalties),
        "version": __version__,
    })


def cmd_bench(args) -> None:
    raw = json.loads(Path(args.grid).read_text())
    base = SimulationConfig(**raw.pop("base", {}))
    penalties = PenaltyConfig(**raw.pop("penalties", {}))
    for key in ("a_sizes", "h_values", "designs", "methods"):
        if key in raw:
            raw[key] = tuple(raw[key])
    grid = ExperimentGrid(base=base, penalties=penalties, **raw)
    records = run_grid(grid, n_jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([dataclasses.asdict(r) for r in records])
    frame = frame[["design", "h", "a_size", "method", "rmse_lambda", "rmse_total", "replications_used"]]
    _frame_to_csv(frame, out / "rmse.csv")
    curves = frame.rename(columns={"rmse_total": "rmse"})[["method", "a_size", "h", "design", "rmse"]]
    _frame_to_csv(curves, out / "curves.csv")
    write_manifest(out / "manifest.json", {
        "command": "bench",
        "grid": {
            "base": dataclasses.asdict(grid.base),
            "a_sizes": list(grid.a_sizes),
            "h_values": list(grid.h_values),
            "designs": list(grid.designs),
            "methods": list(grid.methods),
            "replications": grid.replications,
            "seed": grid.seed,
            "penalties": dataclasses.asdict(grid.penalties),
        },
        "version": __version__,
    })


def cmd_election(args) -> None:
    data = ingest(args.covariates, args.response, args.adjacency, args.votes)
    truth = None
    if args.truth:
        truth_frame = pd.read_csv(args.truth, dtype={"county_id": str})
        truth = dict(zip(truth_frame["county_id"], truth_frame["response"].astype(float)))
    targets = [t for t in args.targets.split(",") if t]
    rng = np.random.default_rng(args.seed)
    predictions = run_election(
        data, targets, args.replications, rng,
        penalties=_penalty_config(args), truth=truth,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    county_rows = []
    state_rows = []
    rmse_rows = []
    winner_rows = []
    for pred in predictions:
        ids = data.counties[pred.state]
        for cid, value in zip(ids, pred.county_pred):
            county_rows.append({"state": pred.state, "county_id": cid,
                                "method": pred.method, "predicted": value})
        state_rows.append({
            "state": pred.state, "method": pred.method,
            "predicted_rate": pred.predicted_rate,
            "replication_votes": pred.replication_votes,
            "winner": pred.winner,
        })
        winner_rows.append({"state": pred.state, "method": pred.method, "winner": pred.winner})
        if pred.rmse is not None:
            rmse_rows.append({"state": pred.state, "method": pred.method,
                              "rmse": pred.rmse, "bias": pred.bias})
    _frame_to_csv(pd.DataFrame(county_rows, columns=["state", "county_id", "method", "predicted"]),
                  out / "county_pred.csv")
    _frame_to_csv(pd.DataFrame(state_rows, columns=["state", "method", "predicted_rate",
                                                    "replication_votes", "winner"]),
                  out / "state_pred.csv")
    _frame_to_csv(pd.DataFrame(rmse_rows, columns=["state", "method", "rmse", "bias"]),
                  out / "rmse.csv")
    _frame_to_csv(pd.DataFrame(winner_rows, columns=["state", "method", "winner"]),
                  out / "winners.csv")
    write_manifest(out / "manifest.json", {
        "command": "election",
        "covariates": str(args.covariates),
        "response": str(args.response),
        "adjacency": str(args.adjacency),
        "votes": str(args.votes),
        "truth": str(args.truth) if args.truth else None,
        "targets": targets,
        "replications": args.replications,
        "seed": args.seed,
        "unmatched_counties": list(data.unmatched),
        "rejected_states": list(data.rejected_states),
        "penalties": dataclasses.asdict(_penalty_config(args)),
        "version": __version__,
    })


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transar",
                                     description="Transfer learning for spatial autoregressive models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate target and source studies from a config")
    p.add_argument("--config", required=True, help="JSON file with SimulationConfig fields")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="penalized 2SLS on one study directory")
    p.add_argument("--data", required=True)
    p.add_argument("--penalty", default="auto", help="float, 'auto', or 'bic'")
    p.add_argument("--out", required=True)
    _add_penalty_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("transfer", help="two-stage transfer over an explicit source set")
    p.add_argument("--target", required=True)
    p.add_argument("--sources", required=True, nargs="+")
    p.add_argument("--set", default="", help="comma-separated 1-based source indices")
    p.add_argument("--lambda-omega", default="auto")
    p.add_argument("--lambda-delta", default="auto")
    p.add_argument("--no-spatial", action="store_true")
    p.add_argument("--include-target-in-pool", action="store_true")
    p.add_argument("--out", required=True)
    _add_penalty_args(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("detect", help="bootstrap transferable-source detection")
    p.add_argument("--target", required=True)
    p.add_argument("--sources", required=True, nargs="+")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_penalty_args(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("bench", help="Monte Carlo RMSE grid")
    p.add_argument("--grid", required=True, help="JSON file with ExperimentGrid fields")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("election", help="county-level election prediction pipeline")
    p.add_argument("--covariates", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--adjacency", required=True)
    p.add_argument("--votes", required=True)
    p.add_argument("--targets", required=True, help="comma-separated state names")
    p.add_argument("--replications", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truth", default=None, help="optional response-shaped CSV of realized outcomes")
    p.add_argument("--out", required=True)
    _add_penalty_args(p)
    p.set_defaults(func=cmd_election)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
