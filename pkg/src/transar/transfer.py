"""Two-stage transfer estimation with a known transferable set.

Stage one (transferring) pools the selected sources: per-source instrumented
designs are stacked and a single Lasso

    omega_hat = argmin (1/2 n_A) || Y_A - XX_hat_A omega ||^2 + lambda_omega ||omega||_1

is solved over the combined n_A rows. Stage two (debiasing) corrects the
pooled estimate on the target data:

    delta_hat = argmin (1/2 n_0) || Y_0 - XX_hat_0 (omega_hat + delta) ||^2
                + lambda_delta ||delta||_1,

and the final estimate is theta_hat = omega_hat + delta_hat, assembled rather
than re-solved. An empty transfer set falls back to the target-only penalized
fit (omega_hat = 0), which coincides with tsls at penalty lambda_delta.

Auto penalties resolve as c * sigma0 * sqrt(log(q)/n) where sigma0 is the
noise scale of the *target* study; anchoring both stages to the target keeps
the pooled fit honest when sources are wildly heterogeneous.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimators import (
    Dataset,
    ModelParams,
    PenaltyConfig,
    default_penalty,
    fitted_design,
    lasso,
    loading_factors,
    tsls,
)


class EmptyTransferSetError(ValueError):
    """The transferring stage needs at least one source dataset."""


@dataclass(frozen=True)
class TransferConfig:
    """Which sources to pool and how hard to penalize each stage.

    transfer_set holds 1-based source indices (source k of K). Penalties may
    be explicit floats or "auto"; spatial=False drops every spatial lag and
    instrument, giving the non-spatial transfer-Lasso baseline.
    """

    transfer_set: frozenset[int] = frozenset()
    lambda_omega: float | str = "auto"
    lambda_delta: float | str = "auto"
    spatial: bool = True
    include_target_in_pool: bool = False
    penalties: PenaltyConfig = field(default_factory=PenaltyConfig)

    def __post_init__(self):
        object.__setattr__(self, "transfer_set", frozenset(int(k) for k in self.transfer_set))
        for name in ("lambda_omega", "lambda_delta"):
            value = getattr(self, name)
            if isinstance(value, str):
                if value != "auto":
                    raise ValueError(f"{name} must be a float or 'auto', got {value!r}")
            elif value < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class TransferDiagnostics:
    lambda_omega: float | None
    lambda_delta: float
    sigma0: float
    fallback: bool
    sweeps_transfer: int
    sweeps_debias: int
    converged: bool


@dataclass(frozen=True)
class TransferEstimate:
    """Transferring-stage estimate, bias correction, and their sum."""

    omega_hat: np.ndarray
    delta_hat: np.ndarray
    theta_hat: np.ndarray
    diagnostics: TransferDiagnostics

    def params(self, p: int) -> ModelParams:
        return ModelParams.from_theta(self.theta_hat, p)


def _check_pool(sources: list[Dataset]) -> tuple[int, int, bool]:
    p, q = sources[0].p, sources[0].q
    intercept = sources[0].has_intercept
    for ds in sources[1:]:
        if (ds.p, ds.q, ds.has_intercept) != (p, q, intercept):
            raise ValueError("pooled sources must share p, q, and the intercept flag")
    return p, q, intercept


def transfer_stage(
    sources: list[Dataset],
    lambda_omega: float,
    *,
    spatial: bool = True,
    penalties: PenaltyConfig = PenaltyConfig(),
    return_info: bool = False,
):
    """Pooled penalized fit across the selected sources.

    Each source gets its own instruments and first stage; the fitted designs
    and responses are stacked and a single Lasso with penalty lambda_omega is
    solved over the n_A combined rows. Returns the length p+q estimate (the
    lambda block is zero when spatial=False).
    """
    if not sources:
        raise EmptyTransferSetError("transfer_stage requires a nonempty source list")
    p, q, intercept = _check_pool(sources)
    designs = [
        fitted_design(ds, ridge_eps=penalties.ridge_eps, first_c=penalties.first_c, spatial=spatial)
        for ds in sources
    ]
    stacked = np.vstack([dm.xx_hat for dm in designs])
    y = np.concatenate([ds.y for ds in sources])
    free = _free_coords(p if spatial else 0, intercept)
    factors = loading_factors(stacked, free)
    coef, info = lasso(stacked, y, lambda_omega, penalty_factors=factors, return_info=True)
    omega = coef if spatial else np.concatenate([np.zeros(p), coef])
    return (omega, info) if return_info else omega


def _free_coords(p: int, intercept: bool) -> tuple[int, ...]:
    return (p,) if intercept else ()


def debias_stage(
    target: Dataset,
    omega_hat: np.ndarray,
    lambda_delta: float,
    *,
    spatial: bool = True,
    penalties: PenaltyConfig = PenaltyConfig(),
    return_info: bool = False,
):
    """Penalized correction of omega_hat on the target study.

    Solves the recentered Lasso: the response is Y - XX_hat omega_hat and the
    center is zero, so delta_hat shrinks toward keeping the pooled estimate.
    Returns (delta_hat, theta_hat) with theta_hat = omega_hat + delta_hat.
    """
    omega_hat = np.asarray(omega_hat, dtype=float).ravel()
    m = target.p + target.q
    if omega_hat.size != m:
        raise ValueError(f"omega_hat has length {omega_hat.size}, expected {m}")
    dm = fitted_design(target, ridge_eps=penalties.ridge_eps, first_c=penalties.first_c, spatial=spatial)
    design = dm.xx_hat
    offset = design @ (omega_hat if spatial else omega_hat[target.p :])
    factors = loading_factors(design, _free_coords(target.p if spatial else 0, target.has_intercept))
    recentered = target.y - offset
    coef, info = lasso(design, recentered, lambda_delta, penalty_factors=factors, return_info=True)
    delta = coef if spatial else np.concatenate([np.zeros(target.p), coef])
    theta = omega_hat + delta
    return (delta, theta, info) if return_info else (delta, theta)


def _resolve_sigma0(target: Dataset, config: TransferConfig, sigma0: float | None) -> float:
    if sigma0 is not None:
        return float(sigma0)
    _, info = tsls(
        target,
        "auto",
        ridge_eps=config.penalties.ridge_eps,
        penalty_c=config.penalties.theta_c,
        first_c=config.penalties.first_c,
        return_info=True,
    )
    return info.sigma_hat


def a_transar(
    target: Dataset,
    sources: list[Dataset],
    config: TransferConfig,
    *,
    omega_hat: np.ndarray | None = None,
    sigma0: float | None = None,
) -> TransferEstimate:
    """Two-stage transfer estimate for a known transferable set.

    Runs the transferring stage on config.transfer_set (1-based indices into
    sources), then the debiasing stage on the target. A precomputed omega_hat
    may be supplied instead of raw source data (the privacy-preserving mode).
    An empty set falls back to the target-only fit: omega_hat = 0 and
    theta_hat = tsls(target, lambda_delta).
    """
    bad = [k for k in config.transfer_set if not 1 <= k <= len(sources)]
    if bad:
        raise ValueError(f"transfer_set indices {sorted(bad)} outside [1, {len(sources)}]")
    m = target.p + target.q
    needs_auto = config.lambda_omega == "auto" or config.lambda_delta == "auto"
    sig0 = _resolve_sigma0(target, config, sigma0) if needs_auto else (sigma0 or 0.0)

    lambda_delta = (
        config.penalties.delta_c * sig0 * default_penalty(target.n, target.q, 1.0)
        if config.lambda_delta == "auto"
        else float(config.lambda_delta)
    )

    pool = [sources[k - 1] for k in sorted(config.transfer_set)]
    if config.include_target_in_pool and pool:
        pool = [target] + pool

    fallback = omega_hat is None and not pool
    sweeps_transfer = 0
    converged = True
    if fallback:
        omega = np.zeros(m)
        lambda_omega = None
    elif omega_hat is not None:
        omega = np.asarray(omega_hat, dtype=float).ravel()
        if omega.size != m:
            raise ValueError(f"omega_hat has length {omega.size}, expected {m}")
        lambda_omega = None
    else:
        n_pool = sum(ds.n for ds in pool)
        lambda_omega = (
            config.penalties.omega_c * sig0 * default_penalty(n_pool, target.q, 1.0)
            if config.lambda_omega == "auto"
            else float(config.lambda_omega)
        )
        omega, info_t = transfer_stage(
            pool, lambda_omega, spatial=config.spatial, penalties=config.penalties, return_info=True
        )
        sweeps_transfer = info_t.sweeps
        converged = info_t.converged

    delta, theta, info_d = debias_stage(
        target, omega, lambda_delta, spatial=config.spatial, penalties=config.penalties, return_info=True
    )
    return TransferEstimate(
        omega_hat=omega,
        delta_hat=delta,
        theta_hat=theta,
        diagnostics=TransferDiagnostics(
            lambda_omega=lambda_omega,
            lambda_delta=lambda_delta,
            sigma0=sig0,
            fallback=fallback,
            sweeps_transfer=sweeps_transfer,
            sweeps_debias=info_d.sweeps,
            converged=converged and info_d.converged,
        ),
    )
