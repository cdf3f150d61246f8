"""Transfer learning for spatial autoregressive models.

Estimation of SAR models Y = sum_l lambda_l W_l Y + X beta + V by penalized
two-stage least squares, pooled across informative source studies with a
debiasing correction on the target, plus automatic transferable-source
detection through a spatial residual bootstrap. Includes the Monte Carlo
harness behind the RMSE tables and a county-level election pipeline.
"""

__version__ = "0.1.0"

from .detection import (
    BootstrapFold,
    DetectionReport,
    detect,
    fold_loss,
    initial_estimator,
    residual_bootstrap,
    transar,
)
from .election import (
    ElectionData,
    StatePrediction,
    ingest,
    predict_county,
    run_election,
    state_aggregate,
)
from .estimators import (
    Dataset,
    DesignMatrix,
    ModelParams,
    PenaltyConfig,
    RankDeficiencyError,
    build_instruments,
    default_penalty,
    first_stage,
    first_stage_penalized,
    fitted_design,
    lasso,
    loading_factors,
    penalty_factors,
    raw_design,
    scaled_lasso,
    tsls,
)
from .harness import ExperimentGrid, RmseRecord, rmse, run_grid
from .simulate import (
    GeneratedStudy,
    SimulationConfig,
    gen_covariates,
    gen_errors,
    gen_study_collection,
)
from .spatial import (
    SarSystem,
    SingularSystemError,
    SpatialWeightMatrix,
    build_from_adjacency,
    build_grid_weight,
    load_adjacency_pairs,
    row_normalize,
    sar_solve,
)
from .transfer import (
    EmptyTransferSetError,
    TransferConfig,
    TransferEstimate,
    a_transar,
    debias_stage,
    transfer_stage,
)

__all__ = [
    "BootstrapFold",
    "Dataset",
    "DesignMatrix",
    "DetectionReport",
    "ElectionData",
    "EmptyTransferSetError",
    "ExperimentGrid",
    "GeneratedStudy",
    "ModelParams",
    "PenaltyConfig",
    "RankDeficiencyError",
    "RmseRecord",
    "SarSystem",
    "SimulationConfig",
    "SingularSystemError",
    "SpatialWeightMatrix",
    "StatePrediction",
    "TransferConfig",
    "TransferEstimate",
    "a_transar",
    "build_from_adjacency",
    "build_grid_weight",
    "build_instruments",
    "debias_stage",
    "default_penalty",
    "detect",
    "fitted_design",
    "first_stage",
    "first_stage_penalized",
    "fold_loss",
    "gen_covariates",
    "gen_errors",
    "gen_study_collection",
    "ingest",
    "initial_estimator",
    "lasso",
    "load_adjacency_pairs",
    "predict_county",
    "raw_design",
    "residual_bootstrap",
    "rmse",
    "row_normalize",
    "run_election",
    "run_grid",
    "sar_solve",
    "scaled_lasso",
    "state_aggregate",
    "transar",
    "transfer_stage",
    "tsls",
]
