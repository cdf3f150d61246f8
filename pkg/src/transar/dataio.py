"""On-disk layout for datasets exchanged through the CLI.

A study lives in one directory:

    data.csv    header ``y,x1,...,xq``, one row per spatial unit
    w1.csv ...  one file per weight matrix, sparse triplets with header
                ``row,col,weight`` (zero-based indices, sorted)
    meta.json   n, p, q, id, has_intercept, per-matrix row_normalized flags
    params.csv  optional true parameters (``param,value``), written by the
                simulator for downstream evaluation

Adjacency lists use the separate ``src,dst`` CSV format from
:mod:`transar.spatial`. Writers are deterministic: identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import sparse

from .estimators import Dataset, ModelParams
from .spatial import SpatialWeightMatrix


def param_names(p: int, q: int) -> list[str]:
    return [f"lambda_{l + 1}" for l in range(p)] + [f"beta_{j + 1}" for j in range(q)]


def write_weight_csv(w: SpatialWeightMatrix, path: Path) -> None:
    coo = sparse.coo_matrix(w.matrix)
    frame = pd.DataFrame({"row": coo.row, "col": coo.col, "weight": coo.data})
    frame = frame.sort_values(["row", "col"]).reset_index(drop=True)
    frame.to_csv(path, index=False)


def read_weight_csv(path: Path, n: int, row_normalized: bool) -> SpatialWeightMatrix:
    frame = pd.read_csv(path, float_precision="round_trip")
    m = sparse.coo_matrix(
        (frame["weight"].to_numpy(dtype=float),
         (frame["row"].to_numpy(dtype=int), frame["col"].to_numpy(dtype=int))),
        shape=(n, n),
    ).tocsr()
    return SpatialWeightMatrix(m, row_normalized=row_normalized)


def write_dataset(ds: Dataset, path: Path, true_params: ModelParams | None = None,
                  extra_meta: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    columns = {"y": ds.y}
    for j in range(ds.q):
        columns[f"x{j + 1}"] = ds.x[:, j]
    pd.DataFrame(columns).to_csv(path / "data.csv", index=False)
    for l, w in enumerate(ds.weights, start=1):
        write_weight_csv(w, path / f"w{l}.csv")
    meta = {
        "id": ds.id,
        "n": ds.n,
        "p": ds.p,
        "q": ds.q,
        "has_intercept": ds.has_intercept,
        "row_normalized": [w.row_normalized for w in ds.weights],
    }
    if extra_meta:
        meta.update(extra_meta)
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if true_params is not None:
        frame = pd.DataFrame({
            "param": param_names(ds.p, ds.q),
            "value": true_params.theta,
        })
        frame.to_csv(path / "params.csv", index=False)


def read_dataset(path: Path) -> Dataset:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    frame = pd.read_csv(path / "data.csv", float_precision="round_trip")
    y = frame["y"].to_numpy(dtype=float)
    x = frame[[f"x{j + 1}" for j in range(meta["q"])]].to_numpy(dtype=float)
    flags = meta.get("row_normalized", [False] * meta["p"])
    weights = tuple(
        read_weight_csv(path / f"w{l + 1}.csv", meta["n"], flags[l]) for l in range(meta["p"])
    )
    return Dataset(y=y, x=x, weights=weights, id=meta.get("id", path.name),
                   has_intercept=meta.get("has_intercept", False))


def read_true_params(path: Path, p: int) -> ModelParams | None:
    f = Path(path) / "params.csv"
    if not f.exists():
        return None
    frame = pd.read_csv(f, float_precision="round_trip")
    return ModelParams.from_theta(frame["value"].to_numpy(dtype=float), p)


def write_manifest(path: Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
