"""Base estimation machinery for SAR datasets.

The endogenous spatial lag W Y cannot be regressed on directly, so every fit
here goes through two-stage least squares: project the design

    XX = (W_1 Y, ..., W_p Y, X)

onto the instrument space Q = (X, W_1 X, ..., W_p X), then minimize the
penalized 2SLS loss

    (1/2n) || Y - XX_hat theta ||^2 + penalty * || theta - center ||_1

by cyclic coordinate descent. When the instrument count d reaches the sample
size (high-dimensional reduced form) the exact projection degenerates to the
identity, so the first stage switches to per-column Lasso fits.

Penalties marked "auto" resolve through a scaled-Lasso iteration,
penalty = c * sigma_hat * sqrt(log(q)/n), with sigma_hat re-estimated from
structural residuals Y - XX theta_hat until the two agree. This keeps the
tuning invariant to the noise scale of the data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .spatial import SpatialWeightMatrix

DEFAULT_RIDGE_EPS = 1e-10
LASSO_TOL = 1e-7
LASSO_MAX_SWEEPS = 10_000
BIC_GRID = (0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0)


class RankDeficiencyError(np.linalg.LinAlgError):
    """Instrument cross-product is rank deficient with ridge_eps = 0."""


@dataclass(frozen=True)
class PenaltyConfig:
    """Multipliers for every auto-resolved penalty in the pipeline.

    Each Lasso-type fit uses penalty = c * sigma_hat * sqrt(log(q)/n) with the
    constant c below. Defaults were calibrated on the grid-simulation designs;
    every CLI exposes them.
    """

    theta_c: float = 2.0   # target-only fits and per-fold detection fits
    omega_c: float = 0.5   # pooled transferring stage
    delta_c: float = 2.0   # debiasing stage
    first_c: float = 1.0   # penalized first-stage columns
    ridge_eps: float = DEFAULT_RIDGE_EPS


@dataclass(frozen=True, eq=False)
class Dataset:
    """One study: response, covariates, and its spatial weight matrices."""

    y: np.ndarray
    x: np.ndarray
    weights: tuple[SpatialWeightMatrix, ...]
    id: str = ""
    has_intercept: bool = False

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        weights = tuple(self.weights)
        if x.shape[0] != y.size:
            raise ValueError(f"y has {y.size} rows, x has {x.shape[0]}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValueError("dataset entries must be finite")
        for w in weights:
            if w.n != y.size:
                raise ValueError(f"weight matrix has n={w.n}, data has n={y.size}")
        if self.has_intercept and x.shape[1] and not np.all(x[:, 0] == 1.0):
            raise ValueError("has_intercept is set but the first column is not all ones")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def q(self) -> int:
        return self.x.shape[1]

    @property
    def p(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class ModelParams:
    """theta = (lambda, beta): spatial dependence plus covariate effects."""

    lam: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float)) if np.size(self.beta) else np.zeros(0)
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(beta))):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "beta", beta)

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.lam, self.beta])

    @classmethod
    def from_theta(cls, theta: np.ndarray, p: int) -> "ModelParams":
        theta = np.asarray(theta, dtype=float).ravel()
        return cls(lam=theta[:p], beta=theta[p:])


@dataclass(frozen=True)
class DesignMatrix:
    """Raw SAR design and its instrumented (fitted) counterpart."""

    xx: np.ndarray
    xx_hat: np.ndarray


@dataclass(frozen=True)
class LassoInfo:
    sweeps: int
    converged: bool
    objective_trace: tuple[float, ...]


@dataclass(frozen=True)
class TslsInfo:
    penalty: float
    sigma_hat: float
    first_stage_mode: str
    sweeps: int
    converged: bool


def default_penalty(n: int, q: int, c: float = 1.0) -> float:
    """Theory-rate penalty c * sqrt(log(max(q, 2)) / n)."""
    if n < 1 or q < 1:
        raise ValueError("n and q must be >= 1")
    return c * math.sqrt(math.log(max(q, 2)) / n)


def raw_design(dataset: Dataset) -> np.ndarray:
    """XX = (W_1 Y, ..., W_p Y, X): spatial lags first, then covariates."""
    lags = [w.lag(dataset.y) for w in dataset.weights]
    return np.column_stack(lags + [dataset.x]) if lags else dataset.x.copy()


def loading_factors(design: np.ndarray, free: tuple[int, ...] = ()) -> np.ndarray:
    """Scale-invariant penalty loadings: column RMS norms, 0 for free coords.

    Multiplying the penalty by each column's scale makes selection behave as
    if columns were standardized, which matters because spatial-lag columns
    can be an order of magnitude weaker than the covariates. Free coordinates
    (the intercept) carry factor 0 and are never penalized.
    """
    factors = np.sqrt(np.mean(np.asarray(design, dtype=float) ** 2, axis=0))
    for j in free:
        factors[j] = 0.0
    return factors


def penalty_factors(dataset: Dataset, design: np.ndarray) -> np.ndarray:
    """Loadings for a dataset's fit design; exempts the intercept column."""
    free = (dataset.p,) if dataset.has_intercept else ()
    return loading_factors(design, free)


def build_instruments(dataset: Dataset) -> np.ndarray:
    """Instrument matrix Q = (X, W_1 X, ..., W_p X).

    When the dataset's first covariate column is an intercept it is dropped
    from each W_j X block (its lag is collinear with the intercept on
    row-normalized weights), giving d = q(1+p) - p columns instead of q(1+p).
    """
    x = dataset.x
    lagged = x[:, 1:] if (dataset.has_intercept and x.shape[1] > 0) else x
    blocks = [x] + [w.matrix @ lagged for w in dataset.weights]
    return np.hstack(blocks)


def first_stage(q_mat: np.ndarray, xx: np.ndarray, ridge_eps: float = DEFAULT_RIDGE_EPS) -> DesignMatrix:
    """Project the design onto the instrument space.

    Computes xx_hat = Q (Q'Q + ridge_eps I)^{-1} Q' xx. With ridge_eps = 0
    this is the exact projection, which reproduces any xx column already in
    span(Q) (in particular the X block); a rank-deficient Q'Q then raises
    RankDeficiencyError advising a nonzero ridge_eps.
    """
    q_mat = np.asarray(q_mat, dtype=float)
    xx = np.asarray(xx, dtype=float)
    gram = q_mat.T @ q_mat
    if ridge_eps < 0:
        raise ValueError("ridge_eps must be nonnegative")
    if ridge_eps == 0.0:
        try:
            cho = sla.cho_factor(gram)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError(
                "instrument cross-product Q'Q is rank deficient; pass ridge_eps > 0"
            ) from exc
        coef = sla.cho_solve(cho, q_mat.T @ xx)
    else:
        gram = gram + ridge_eps * np.eye(gram.shape[0])
        coef = np.linalg.solve(gram, q_mat.T @ xx)
    return DesignMatrix(xx=xx, xx_hat=q_mat @ coef)


def _cd_lasso_gram(
    gram: np.ndarray,
    cross: np.ndarray,
    penalty: float,
    factors: np.ndarray | None = None,
    tol: float = LASSO_TOL,
    max_sweeps: int = LASSO_MAX_SWEEPS,
    warm: np.ndarray | None = None,
):
    """Minimize (1/2) v'Gv - b'v + penalty * sum_j f_j |v_j| from Gram inputs.

    G and b are the (1/n)-scaled Gram matrix and cross-product. Coordinates
    with factor 0 are profiled out exactly (Frisch-Waugh on the Gram): the
    penalized block runs through coordinate descent on the Schur complement
    and the free block is recovered by a least-squares back-solve, which is
    the joint minimizer and far faster than coordinate steps on weak
    unpenalized columns.
    """
    if factors is not None:
        factors = np.asarray(factors, dtype=float)
        free = np.flatnonzero(factors == 0.0)
        if free.size:
            pen_idx = np.flatnonzero(factors != 0.0)
            g_ff = gram[np.ix_(free, free)]
            g_fp = gram[np.ix_(free, pen_idx)]
            b_f = cross[free]

            def solve_free(rhs):
                return np.linalg.lstsq(g_ff, rhs, rcond=None)[0]

            if pen_idx.size == 0:
                v = np.zeros(gram.shape[0])
                v[free] = solve_free(b_f)
                return v, LassoInfo(sweeps=0, converged=True, objective_trace=())
            w_mat = solve_free(g_fp)
            g_red = gram[np.ix_(pen_idx, pen_idx)] - g_fp.T @ w_mat
            b_red = cross[pen_idx] - w_mat.T @ b_f
            warm_red = None if warm is None else np.asarray(warm, dtype=float)[pen_idx]
            v_pen, info = _cd_lasso_gram(
                g_red, b_red, penalty, factors[pen_idx], tol, max_sweeps, warm_red
            )
            v = np.zeros(gram.shape[0])
            v[pen_idx] = v_pen
            v[free] = solve_free(b_f - g_fp @ v_pen)
            return v, info

    m = gram.shape[0]
    if factors is None:
        thresh = np.full(m, float(penalty))
    else:
        thresh = penalty * factors
    v = np.zeros(m) if warm is None else np.array(warm, dtype=float)
    gv = gram @ v if warm is not None else np.zeros(m)
    diag = np.ascontiguousarray(np.diag(gram))
    workable = diag > 0.0
    trace: list[float] = []

    def objective() -> float:
        pen = float(np.abs(v[workable]) @ thresh[workable]) if np.any(v) else 0.0
        return 0.5 * float(v @ gv) - float(cross @ v) + pen

    def proposed_changes() -> np.ndarray:
        # Jacobi-style view of the next coordinate moves; zero at a minimizer.
        rho = np.where(workable, cross - gv + diag * v, 0.0)
        new = np.zeros(m)
        move = workable & (np.abs(rho) > thresh) & np.isfinite(thresh)
        new[move] = (rho[move] - np.sign(rho[move]) * thresh[move]) / diag[move]
        return np.abs(new - v)

    def sweep(indices) -> float:
        nonlocal gv
        max_delta = 0.0
        for j in indices:
            gj = diag[j]
            rho = cross[j] - gv[j] + gj * v[j]
            t = thresh[j]
            if abs(rho) <= t or not np.isfinite(t):
                new = 0.0
            else:
                new = (rho - math.copysign(t, rho)) / gj
            d = new - v[j]
            if d != 0.0:
                gv += gram[j] * d
                v[j] = new
                if abs(d) > max_delta:
                    max_delta = abs(d)
        return max_delta

    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        changes = proposed_changes()
        trace.append(objective())
        if changes.max(initial=0.0) < tol:
            converged = True
            break
        active = np.flatnonzero((v != 0.0) | (changes >= tol))
        while sweeps < max_sweeps:
            delta = sweep(active)
            sweeps += 1
            if delta < tol:
                break
        gv = gram @ v  # refresh: clears float drift from incremental updates
        trace.append(objective())
    return v, LassoInfo(sweeps=sweeps, converged=converged, objective_trace=tuple(trace))


def lasso(
    design: np.ndarray,
    y: np.ndarray,
    penalty: float,
    center: np.ndarray | None = None,
    penalty_factors: np.ndarray | None = None,
    *,
    tol: float = LASSO_TOL,
    max_sweeps: int = LASSO_MAX_SWEEPS,
    return_info: bool = False,
):
    """L1-penalized least squares with an arbitrary shrinkage center.

    Minimizes (1/2n) ||y - A v||^2 + penalty * sum_j f_j |v_j - c_j| by
    coordinate descent on delta = v - center. penalty = 0 recovers the OLS
    solution on full-rank designs; penalty above the KKT null threshold
    max_j |A_j'(y - A c)| / n returns the center exactly.

    Parameters
    ----------
    design : ndarray, shape (n, m)
    y : ndarray, shape (n,)
    penalty : float
        Nonnegative; may be inf.
    center : ndarray, optional
        Shrinkage center c (default zero).
    penalty_factors : ndarray, optional
        Per-coordinate multipliers f_j; 0 leaves a coordinate unpenalized.
    return_info : bool
        Also return a LassoInfo with sweep counts and the objective trace.
    """
    a = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if a.ndim != 2 or a.shape[0] != y.size:
        raise ValueError(f"design shape {a.shape} incompatible with y of length {y.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(y))):
        raise ValueError("lasso inputs must be finite")
    if penalty < 0:
        raise ValueError("penalty must be nonnegative")
    n, m = a.shape
    if center is not None:
        center = np.asarray(center, dtype=float).ravel()
        if center.size != m:
            raise ValueError(f"center has length {center.size}, expected {m}")
        if not np.all(np.isfinite(center)):
            raise ValueError("center must be finite")
        resp = y - a @ center
    else:
        resp = y
    gram = a.T @ a / n
    cross = a.T @ resp / n
    delta, info = _cd_lasso_gram(gram, cross, penalty, penalty_factors, tol, max_sweeps)
    out = delta if center is None else center + delta
    return (out, info) if return_info else out


def scaled_lasso(
    design: np.ndarray,
    y: np.ndarray,
    rate: float,
    c: float,
    *,
    resid_design: np.ndarray | None = None,
    penalty_factors: np.ndarray | None = None,
    sigma0: float | None = None,
    max_iter: int = 30,
    tol: float = LASSO_TOL,
    max_sweeps: int = LASSO_MAX_SWEEPS,
    gram: np.ndarray | None = None,
):
    """Lasso with noise-adaptive penalty c * sigma_hat * rate.

    Alternates a Lasso fit with re-estimation of the noise scale
    sigma_hat^2 = ||y - R v||^2 / max(n - df, 1), where R defaults to the fit
    design but may be the raw (structural) design so that sigma_hat estimates
    the model error rather than the projection residual. Noiseless data drive
    sigma_hat, and hence the penalty, to zero.

    Returns
    -------
    (coef, sigma_hat, penalty, LassoInfo)
    """
    a = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    r_design = a if resid_design is None else np.asarray(resid_design, dtype=float)
    n, m = a.shape
    if gram is None:
        gram = a.T @ a / n
    cross = a.T @ y / n
    sigma = float(np.std(y)) if sigma0 is None else float(sigma0)
    sigma = max(sigma, 0.0)
    coef = None
    info = LassoInfo(sweeps=0, converged=True, objective_trace=())
    penalty = c * sigma * rate
    for _ in range(max_iter):
        penalty = c * sigma * rate
        coef, info = _cd_lasso_gram(gram, cross, penalty, penalty_factors, tol, max_sweeps, warm=coef)
        resid = y - r_design @ coef
        df = int(np.count_nonzero(coef))
        new_sigma = math.sqrt(float(resid @ resid) / max(n - df, 1))
        if abs(new_sigma - sigma) <= 1e-6 * max(sigma, 1e-12):
            sigma = new_sigma
            break
        sigma = new_sigma
    penalty = c * sigma * rate
    return coef, sigma, penalty, info


def first_stage_penalized(
    q_mat: np.ndarray,
    xx: np.ndarray,
    n_endog: int,
    c: float = PenaltyConfig.first_c,
) -> DesignMatrix:
    """High-dimensional first stage: per-column Lasso instead of projection.

    Fits each of the first n_endog design columns (the spatial lags) on the
    instruments with a scaled-Lasso penalty; the remaining columns are the
    exogenous X block, which lives inside Q and passes through unchanged.
    Penalty loadings are the instrument column scales ||Q_j|| / sqrt(n), so
    selection is invariant to the very uneven scaling of the lagged blocks.

    Each fitted column is then rescaled by a scalar least-squares step onto
    its own direction, restoring the projection identity
    fit' (col - fit) = 0 that exact 2SLS fitted values satisfy; without it,
    Lasso shrinkage attenuates the column and inflates the spatial
    coefficient in the second stage.
    """
    q_mat = np.asarray(q_mat, dtype=float)
    xx = np.asarray(xx, dtype=float)
    n, d = q_mat.shape
    rate = default_penalty(n, d, 1.0)
    gram = q_mat.T @ q_mat / n
    loadings = np.sqrt(np.diag(gram))
    xx_hat = xx.copy()
    for j in range(n_endog):
        coef, _, _, _ = scaled_lasso(
            q_mat, xx[:, j], rate, c,
            penalty_factors=loadings, gram=gram,
            tol=1e-5, max_sweeps=2000,
        )
        fit = q_mat @ coef
        denom = float(fit @ fit)
        if denom > 0.0:
            fit = fit * (float(fit @ xx[:, j]) / denom)
        xx_hat[:, j] = fit
    return DesignMatrix(xx=xx, xx_hat=xx_hat)


def fitted_design(
    dataset: Dataset,
    *,
    ridge_eps: float = DEFAULT_RIDGE_EPS,
    mode: str = "auto",
    first_c: float = PenaltyConfig.first_c,
    spatial: bool = True,
) -> DesignMatrix:
    """Build the instrumented design for one dataset.

    mode "auto" projects when the instrument count is below the sample size
    and falls back to the penalized per-column first stage otherwise. With
    spatial=False the design is the covariate block alone (no lags, no
    projection), which is the non-spatial baseline.
    """
    if not spatial:
        x = dataset.x.copy()
        return DesignMatrix(xx=x, xx_hat=x.copy())
    xx = raw_design(dataset)
    if dataset.p == 0:
        return DesignMatrix(xx=xx, xx_hat=xx.copy())
    q_mat = build_instruments(dataset)
    if mode == "auto":
        mode = "projection" if q_mat.shape[1] < dataset.n else "penalized"
    if mode == "projection":
        return first_stage(q_mat, xx, ridge_eps)
    if mode == "penalized":
        return first_stage_penalized(q_mat, xx, dataset.p, first_c)
    raise ValueError(f"unknown first-stage mode {mode!r}")


def _bic_select(design, y, resid_design, rate, factors, grid=BIC_GRID):
    """Pick the penalty constant minimizing n log(RSS/n) + df log(n)."""
    n = design.shape[0]
    best = None
    for c in grid:
        coef, sigma, pen, _ = scaled_lasso(design, y, rate, c, resid_design=resid_design, penalty_factors=factors)
        resid = y - resid_design @ coef
        rss = float(resid @ resid)
        df = int(np.count_nonzero(coef))
        bic = n * math.log(max(rss / n, 1e-300)) + df * math.log(n)
        if best is None or bic < best[0]:
            best = (bic, c, coef, sigma, pen)
    return best[1:]


def tsls(
    dataset: Dataset,
    penalty="auto",
    ridge_eps: float = DEFAULT_RIDGE_EPS,
    *,
    penalty_c: float = PenaltyConfig.theta_c,
    first_c: float = PenaltyConfig.first_c,
    first_stage_mode: str = "auto",
    return_info: bool = False,
):
    """(Penalized) two-stage least squares for a single SAR dataset.

    Builds instruments, runs the first stage, then solves the Lasso on the
    fitted design with center 0. penalty may be a nonnegative float, "auto"
    (scaled-Lasso with constant penalty_c), or "bic" (grid search over the
    constant). penalty = 0 is the classical 2SLS point estimate.
    """
    dm = fitted_design(dataset, ridge_eps=ridge_eps, mode=first_stage_mode, first_c=first_c)
    factors = penalty_factors(dataset, dm.xx_hat)
    y = dataset.y
    rate = default_penalty(dataset.n, dataset.q, 1.0)
    if isinstance(penalty, str):
        if penalty == "auto":
            theta, sigma, pen, info = scaled_lasso(
                dm.xx_hat, y, rate, penalty_c, resid_design=dm.xx, penalty_factors=factors
            )
        elif penalty == "bic":
            _, theta, sigma, pen = _bic_select(dm.xx_hat, y, dm.xx, rate, factors)
            info = LassoInfo(sweeps=0, converged=True, objective_trace=())
        else:
            raise ValueError(f"penalty must be a float, 'auto', or 'bic'; got {penalty!r}")
    else:
        pen = float(penalty)
        theta, info = lasso(dm.xx_hat, y, pen, penalty_factors=factors, return_info=True)
        resid = y - dm.xx @ theta
        sigma = math.sqrt(float(resid @ resid) / max(dataset.n - np.count_nonzero(theta), 1))
    params = ModelParams.from_theta(theta, dataset.p)
    if return_info:
        mode = first_stage_mode
        if mode == "auto":
            d = dataset.q * (1 + dataset.p) - (dataset.p if dataset.has_intercept else 0)
            mode = "projection" if d < dataset.n else "penalized"
        return params, TslsInfo(
            penalty=pen,
            sigma_hat=sigma,
            first_stage_mode=mode,
            sweeps=info.sweeps,
            converged=info.converged,
        )
    return params
