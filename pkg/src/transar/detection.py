"""Transferable-source detection via spatial residual bootstrap.

Sample splitting would sever the neighbor links that define a SAR model, so
similarity between a source and the target is judged on bootstrap worlds
built from the target's own residuals instead:

1. Fit an initial target estimate and form structural residuals
   e_hat = Y - XX theta_ini.
2. Resample e_hat (centered) three times; each fold r regenerates a response
   Y_r = XX theta_ini + e_hat_r on the same X and W, and its design is
   re-lagged: XX_r = (W_1 Y_r, ..., W_p Y_r, X).
3. For each fold r, fit on the other two folds stacked (baseline) and on each
   source joined with those two folds, then score both fits on fold r:
   L_r(theta) = (1/2 n_0) ||Y_r - XX_r theta||^2.
4. A source is detected when its average loss exceeds the baseline by at most
   max(sigma_hat, 0.01), where sigma_hat = sqrt((1/2) sum_r (L_r - L_bar)^2)
   is the dispersion of the three baseline fold losses.

Stacked fits keep block-diagonal spatial structure: every block carries its
own weights and instruments, so the combined fit only shares coefficients,
never cross-block links. Per-block Gram matrices are cached and summed, which
makes the 3 x (K+1) fits cheap coordinate descents.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .estimators import (
    Dataset,
    ModelParams,
    PenaltyConfig,
    RankDeficiencyError,
    _cd_lasso_gram,
    default_penalty,
    fitted_design,
    raw_design,
    tsls,
)
from .spatial import SingularSystemError
from .transfer import TransferConfig, TransferEstimate, a_transar

logger = logging.getLogger(__name__)

N_FOLDS = 3
MIN_THRESHOLD = 0.01


@dataclass(frozen=True, eq=False)
class BootstrapFold:
    """One bootstrap world: regenerated response on the target's X and W."""

    dataset: Dataset
    indices: np.ndarray


@dataclass(frozen=True)
class DetectionReport:
    """Per-source average losses, their dispersion, and the detected set.

    detected holds 1-based source indices and is exactly
    {k : source_losses[k-1] - baseline_loss <= threshold} minus any sources
    whose fits failed (recorded in excluded).
    """

    baseline_loss: float
    source_losses: np.ndarray
    sigma_hat: float
    threshold: float
    detected: tuple[int, ...]
    fold_losses: np.ndarray
    excluded: tuple[int, ...]
    theta_ini: ModelParams
    sigma0: float


def initial_estimator(target: Dataset, penalties: PenaltyConfig = PenaltyConfig(), *, return_info: bool = False):
    """Penalized 2SLS initial fit of the target (q may exceed n0)."""
    if target.n < 3:
        raise ValueError(f"initial estimator needs at least 3 observations, got {target.n}")
    return tsls(
        target,
        "auto",
        ridge_eps=penalties.ridge_eps,
        penalty_c=penalties.theta_c,
        first_c=penalties.first_c,
        return_info=return_info,
    )


def residual_bootstrap(
    target: Dataset, theta_ini: ModelParams, rng: np.random.Generator, n_folds: int = N_FOLDS
) -> list[BootstrapFold]:
    """Three independent residual-bootstrap copies of the target response.

    Residuals are recentered to mean zero before resampling; X and the weight
    matrices are reused unchanged (shared by reference). Each fold stores its
    draw indices so the response reconstructs exactly.
    """
    theta = np.asarray(theta_ini.theta if isinstance(theta_ini, ModelParams) else theta_ini, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta_ini must be finite")
    xx = raw_design(target)
    fitted = xx @ theta
    resid = target.y - fitted
    resid = resid - resid.mean()
    folds = []
    for r in range(n_folds):
        idx = rng.integers(0, target.n, size=target.n)
        y_r = fitted + resid[idx]
        ds = Dataset(
            y=y_r, x=target.x, weights=target.weights,
            id=f"{target.id}:boot{r + 1}", has_intercept=target.has_intercept,
        )
        folds.append(BootstrapFold(dataset=ds, indices=idx))
    return folds


def fold_loss(theta, fold: BootstrapFold) -> float:
    """(1/2 n_0) ||Y_r - XX_r theta||^2 on the fold's raw (re-lagged) design."""
    vec = theta.theta if isinstance(theta, ModelParams) else np.asarray(theta, dtype=float).ravel()
    resid = fold.dataset.y - raw_design(fold.dataset) @ vec
    return float(resid @ resid) / (2.0 * fold.dataset.n)


def _block_stats(dataset: Dataset, penalties: PenaltyConfig):
    """Unnormalized Gram, cross-product, and row count of one instrumented block."""
    dm = fitted_design(dataset, ridge_eps=penalties.ridge_eps, first_c=penalties.first_c)
    return dm.xx_hat.T @ dm.xx_hat, dm.xx_hat.T @ dataset.y, dataset.n


def detect(
    target: Dataset,
    sources: list[Dataset],
    rng: np.random.Generator,
    penalties: PenaltyConfig = PenaltyConfig(),
    *,
    theta_ini: ModelParams | None = None,
    sigma0: float | None = None,
) -> DetectionReport:
    """Score every source against bootstrap worlds of the target.

    For each fold r the baseline fit uses the two remaining folds stacked;
    each source fit adds that source as a third block (combined sample size
    n_k + 2 n_0). Penalties resolve as theta_c * sigma0 * sqrt(log(q)/n) with
    the combined n. Sources whose block construction or fit fails are flagged
    and conservatively excluded from the detected set.
    """
    if not sources:
        raise ValueError("detection needs at least one source dataset")
    if theta_ini is None or sigma0 is None:
        theta_ini, info = initial_estimator(target, penalties, return_info=True)
        sigma0 = info.sigma_hat
    folds = residual_bootstrap(target, theta_ini, rng)
    fold_stats = [_block_stats(fold.dataset, penalties) for fold in folds]

    k_count = len(sources)
    source_stats: list = []
    excluded: list[int] = []
    for k, ds in enumerate(sources, start=1):
        try:
            source_stats.append(_block_stats(ds, penalties))
        except (RankDeficiencyError, SingularSystemError, np.linalg.LinAlgError) as exc:
            logger.warning("source %d excluded from detection: %s", k, exc)
            source_stats.append(None)
            excluded.append(k)

    free = (target.p,) if target.has_intercept else ()
    q = target.q
    fold_losses = np.full((k_count + 1, N_FOLDS), np.nan)

    def combined_fit(gram_sum, cross_sum, n_rows):
        factors = np.sqrt(np.diag(gram_sum) / n_rows)
        for j in free:
            factors[j] = 0.0
        pen = penalties.theta_c * sigma0 * default_penalty(n_rows, q, 1.0)
        theta, _ = _cd_lasso_gram(gram_sum / n_rows, cross_sum / n_rows, pen, factors)
        return theta

    for r in range(N_FOLDS):
        g0 = np.zeros_like(fold_stats[0][0])
        b0 = np.zeros_like(fold_stats[0][1])
        n0c = 0
        for s, (g, b, n) in enumerate(fold_stats):
            if s != r:
                g0 = g0 + g
                b0 = b0 + b
                n0c += n
        theta0 = combined_fit(g0, b0, n0c)
        fold_losses[0, r] = fold_loss(theta0, folds[r])
        for k, stats in enumerate(source_stats, start=1):
            if stats is None:
                continue
            gk, bk, nk = stats
            theta_k = combined_fit(g0 + gk, b0 + bk, n0c + nk)
            fold_losses[k, r] = fold_loss(theta_k, folds[r])

    baseline = float(fold_losses[0].mean())
    source_losses = fold_losses[1:].mean(axis=1)
    sigma_hat = float(np.sqrt(0.5 * np.sum((fold_losses[0] - baseline) ** 2)))
    threshold = max(sigma_hat, MIN_THRESHOLD)
    detected = tuple(
        k
        for k in range(1, k_count + 1)
        if k not in excluded and source_losses[k - 1] - baseline <= threshold
    )
    return DetectionReport(
        baseline_loss=baseline,
        source_losses=source_losses,
        sigma_hat=sigma_hat,
        threshold=threshold,
        detected=detected,
        fold_losses=fold_losses,
        excluded=tuple(excluded),
        theta_ini=theta_ini,
        sigma0=float(sigma0),
    )


def transar(
    target: Dataset,
    sources: list[Dataset],
    rng: np.random.Generator,
    penalties: PenaltyConfig = PenaltyConfig(),
    *,
    lambda_omega: float | str = "auto",
    lambda_delta: float | str = "auto",
    theta_ini: ModelParams | None = None,
    sigma0: float | None = None,
    include_target_in_pool: bool = False,
) -> tuple[TransferEstimate, DetectionReport]:
    """Full pipeline: detect transferable sources, then transfer from them.

    Runs :func:`detect` and feeds the detected set to the two-stage transfer
    estimator; an empty detected set triggers its documented target-only
    fallback. Deterministic given (datasets, rng state).
    """
    report = detect(target, sources, rng, penalties, theta_ini=theta_ini, sigma0=sigma0)
    config = TransferConfig(
        transfer_set=frozenset(report.detected),
        lambda_omega=lambda_omega,
        lambda_delta=lambda_delta,
        include_target_in_pool=include_target_in_pool,
        penalties=penalties,
    )
    estimate = a_transar(target, sources, config, sigma0=report.sigma0)
    return estimate, report
