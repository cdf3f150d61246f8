"""Sparse spatial weight matrices and SAR system solves.

A spatial autoregressive (SAR) model ties each unit's outcome to a weighted
average of its neighbors' outcomes:

    Y = sum_l lambda_l W_l Y + X beta + V,

so every simulation draw and every reduced-form prediction requires solving
the linear system S(lambda) x = rhs with

    S(lambda) = I - sum_l lambda_l W_l.

This module owns the weight matrices (grid patterns, contiguity lists, row
normalization) and the sparse solve. All objects are immutable after
construction and safe to share across workers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

# Reciprocal condition estimates below this raise SingularSystemError.
RCOND_THRESHOLD = 1e-12


class SingularSystemError(RuntimeError):
    """S(lambda) = I - sum_l lambda_l W_l is singular or near-singular."""

    def __init__(self, lam, rcond: float | None = None):
        self.lam = np.atleast_1d(np.asarray(lam, dtype=float))
        self.rcond = rcond
        msg = f"SAR system matrix is singular or near-singular at lambda={self.lam.tolist()}"
        if rcond is not None:
            msg += f" (reciprocal condition estimate {rcond:.3e})"
        super().__init__(msg)


@dataclass(frozen=True, eq=False)
class SpatialWeightMatrix:
    """Non-stochastic n x n spatial weights with a zero diagonal.

    Parameters
    ----------
    matrix : scipy.sparse.csr_matrix
        Square weight matrix. The diagonal must be exactly zero and all
        stored entries finite.
    row_normalized : bool
        Set by :func:`row_normalize`; when True, every row with at least one
        nonzero entry sums to 1 (within 1e-12) and rows without neighbors are
        all-zero.
    """

    matrix: sparse.csr_matrix
    row_normalized: bool = False

    def __post_init__(self):
        m = sparse.csr_matrix(self.matrix)
        m.sum_duplicates()
        m.sort_indices()
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"weight matrix must be square, got {m.shape}")
        if m.nnz and not np.all(np.isfinite(m.data)):
            raise ValueError("weight matrix entries must be finite")
        if np.any(m.diagonal() != 0.0):
            raise ValueError("weight matrix diagonal must be exactly zero")
        m.eliminate_zeros()
        object.__setattr__(self, "matrix", m)
        if self.row_normalized:
            sums = np.asarray(m.sum(axis=1)).ravel()
            nonzero = sums != 0.0
            if not np.allclose(sums[nonzero], 1.0, atol=1e-12, rtol=0.0):
                raise ValueError("row_normalized is set but row sums deviate from 1")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def lag(self, values: np.ndarray) -> np.ndarray:
        """Spatial lag W @ values; the neighbor average when row-normalized."""
        return self.matrix @ values

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass(frozen=True)
class SarSystem:
    """Spatial dependence coefficients paired with their weight matrices."""

    lam: np.ndarray
    weights: tuple[SpatialWeightMatrix, ...]

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        weights = tuple(self.weights)
        if lam.ndim != 1 or lam.size != len(weights):
            raise ValueError(f"got {lam.size} coefficients for {len(weights)} weight matrices")
        if not np.all(np.isfinite(lam)):
            raise ValueError("lambda coefficients must be finite")
        sizes = {w.n for w in weights}
        if len(sizes) > 1:
            raise ValueError(f"weight matrices disagree on n: {sorted(sizes)}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.weights[0].n if self.weights else 0

    def system_matrix(self) -> sparse.csr_matrix:
        """S(lambda) = I - sum_l lambda_l W_l as sparse CSR."""
        n = self.n
        s = sparse.identity(n, format="csr")
        for coef, w in zip(self.lam, self.weights):
            if coef != 0.0:
                s = s - coef * w.matrix
        return sparse.csr_matrix(s)


def row_normalize(w: SpatialWeightMatrix) -> SpatialWeightMatrix:
    """Divide each nonzero row by its sum; rows without neighbors stay all-zero.

    Raises
    ------
    ValueError
        If any stored weight is negative.
    """
    m = w.matrix
    if m.nnz and m.data.min() < 0.0:
        raise ValueError("row normalization requires nonnegative weights")
    sums = np.asarray(m.sum(axis=1)).ravel()
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums != 0.0)
    normalized = sparse.diags(scale) @ m
    return SpatialWeightMatrix(sparse.csr_matrix(normalized), row_normalized=True)


def _grid_pairs(side: int, order: int) -> list[tuple[int, int]]:
    """Undirected neighbor pairs on a side x side row-major grid.

    order 1 links left/right neighbors, order 2 links the units above and
    below, and order >= 3 links the full ring at Chebyshev distance order-1.
    """
    pairs: list[tuple[int, int]] = []
    if order == 1:
        for r in range(side):
            for c in range(side - 1):
                i = r * side + c
                pairs.append((i, i + 1))
    elif order == 2:
        for r in range(side - 1):
            for c in range(side):
                i = r * side + c
                pairs.append((i, i + side))
    else:
        d = order - 1
        offsets = [
            (dr, dc)
            for dr in range(-d, d + 1)
            for dc in range(-d, d + 1)
            if max(abs(dr), abs(dc)) == d
        ]
        for r in range(side):
            for c in range(side):
                i = r * side + c
                for dr, dc in offsets:
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < side and 0 <= cc < side:
                        j = rr * side + cc
                        if i < j:
                            pairs.append((i, j))
    return pairs


def build_grid_weight(side: int, order: int, n_units: int | None = None) -> SpatialWeightMatrix:
    """Row-normalized neighbor pattern for units on a square grid.

    Parameters
    ----------
    side : int
        Grid side length; the full grid has side**2 units in row-major order.
    order : int
        Interaction pattern: 1 = left/right, 2 = above/below, k >= 3 = the
        ring of cells at Chebyshev distance k-1. Requires order - 1 < side.
    n_units : int, optional
        Keep only the first n_units cells (row-major) before normalizing.
        Defaults to the full grid. Lets non-square sample sizes live on the
        smallest enclosing grid.

    Returns
    -------
    SpatialWeightMatrix
        Deterministic, symmetric before normalization, zero diagonal.
    """
    if side < 2:
        raise ValueError(f"side must be >= 2, got {side}")
    if order < 1 or order - 1 >= side:
        raise ValueError(f"order must satisfy 1 <= order <= side={side}, got {order}")
    n = side * side if n_units is None else int(n_units)
    if not 1 <= n <= side * side:
        raise ValueError(f"n_units must be in [1, {side * side}], got {n}")
    pairs = [(i, j) for i, j in _grid_pairs(side, order) if i < n and j < n]
    return build_from_adjacency(n, pairs)


def build_from_adjacency(n: int, pairs) -> SpatialWeightMatrix:
    """Symmetric 0/1 adjacency from undirected index pairs, row-normalized.

    Duplicate and reversed pairs collapse to a single link. Self-pairs and
    out-of-range indices raise ValueError.
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    links: set[tuple[int, int]] = set()
    for i, j in pairs:
        i, j = int(i), int(j)
        if i == j:
            raise ValueError(f"self-pair ({i}, {j}) is not a valid adjacency")
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"pair ({i}, {j}) out of range for n={n}")
        links.add((min(i, j), max(i, j)))
    if links:
        ij = np.asarray(sorted(links), dtype=np.int64)
        r = np.concatenate([ij[:, 0], ij[:, 1]])
        c = np.concatenate([ij[:, 1], ij[:, 0]])
        data = np.ones(r.size, dtype=float)
        m = sparse.coo_matrix((data, (r, c)), shape=(n, n)).tocsr()
    else:
        m = sparse.csr_matrix((n, n))
    return row_normalize(SpatialWeightMatrix(m))


def load_adjacency_pairs(path) -> list[tuple[int, int]]:
    """Read undirected pairs from a CSV with header ``src,dst``.

    Indices are zero-based integers, one pair per line.
    """
    pairs: list[tuple[int, int]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:2]] != ["src", "dst"]:
            raise ValueError(f"{path}: expected header 'src,dst', got {reader.fieldnames}")
        for row in reader:
            pairs.append((int(row["src"]), int(row["dst"])))
    return pairs


def _rcond_estimate(s: sparse.csc_matrix, lu) -> float:
    """1-norm reciprocal condition estimate from a factorized system."""
    norm_s = splinalg.onenormest(s)
    inv_op = splinalg.LinearOperator(s.shape, matvec=lu.solve, rmatvec=lambda v: lu.solve(v, trans="T"))
    norm_inv = splinalg.onenormest(inv_op)
    if norm_s == 0.0 or norm_inv == 0.0:
        return 0.0
    return 1.0 / (norm_s * norm_inv)


def sar_solve(system: SarSystem, rhs: np.ndarray) -> np.ndarray:
    """Solve S(lambda) x = rhs by sparse LU with a near-singularity guard.

    Parameters
    ----------
    system : SarSystem
    rhs : ndarray
        Shape (n,) or (n, m); must be finite.

    Returns
    -------
    ndarray
        Solution with relative residual <= 1e-10.

    Raises
    ------
    SingularSystemError
        If the factorization fails or the reciprocal condition estimate
        falls below 1e-12; carries the offending lambda.
    """
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise ValueError("rhs must be finite")
    n = system.n
    if rhs.shape[0] != n:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, system has n={n}")
    s = sparse.csc_matrix(system.system_matrix())
    try:
        lu = splinalg.splu(s)
    except RuntimeError as exc:
        raise SingularSystemError(system.lam) from exc
    rcond = _rcond_estimate(s, lu)
    if rcond < RCOND_THRESHOLD:
        raise SingularSystemError(system.lam, rcond)
    x = lu.solve(rhs)
    # One step of iterative refinement keeps the residual at the contract level.
    resid = rhs - s @ x
    denom = np.linalg.norm(rhs)
    if denom > 0 and np.linalg.norm(resid) > 1e-10 * denom:
        x = x + lu.solve(resid)
    return x
