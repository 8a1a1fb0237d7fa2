"""Blind demixing of bilinear measurements via scaled Wirtinger flow.

Recovers s pairs (h_i, x_i) from their summed bilinear projections
y_j = sum_i b_j^* h_i x_i^* a_ij using spectral initialization and
regularization-free scaled gradient descent, plus the metric and
verification machinery around it.
"""

from .estimator import WirtingerFlowDemixer
from .metrics import (
    Alignment,
    align_source,
    align_source_unit,
    align_state,
    dist,
    incoherence_measures,
    incoherence_mu,
    relative_error,
)
from .objective import (
    DemixState,
    HessianBlocks,
    assemble_source_hessian,
    hessian_blocks,
    leave_one_out_gradient,
    loss,
    residuals,
    wirtinger_gradient,
)
from .problem import (
    Dimensions,
    GroundTruth,
    ProblemInstance,
    load_instance,
    make_dft_rows,
    make_instance,
    sample_design,
    sample_ground_truth,
    save_instance,
    snr_db,
    synthesize_measurements,
)
from .solver import (
    DivergenceError,
    SolverConfig,
    TrajectoryRecord,
    spectral_init,
    run,
    wf_step,
)
from .verify import (
    RscReport,
    alignment_ratio_series,
    check_rsc,
    leave_one_out_trajectories,
    population_hessian,
    spectral_concentration,
)

__all__ = [
    "Alignment",
    "DemixState",
    "Dimensions",
    "DivergenceError",
    "GroundTruth",
    "HessianBlocks",
    "ProblemInstance",
    "RscReport",
    "SolverConfig",
    "TrajectoryRecord",
    "WirtingerFlowDemixer",
    "align_source",
    "align_source_unit",
    "align_state",
    "alignment_ratio_series",
    "assemble_source_hessian",
    "check_rsc",
    "dist",
    "hessian_blocks",
    "incoherence_measures",
    "incoherence_mu",
    "leave_one_out_gradient",
    "leave_one_out_trajectories",
    "load_instance",
    "loss",
    "make_dft_rows",
    "make_instance",
    "population_hessian",
    "relative_error",
    "residuals",
    "run",
    "sample_design",
    "sample_ground_truth",
    "save_instance",
    "snr_db",
    "spectral_concentration",
    "spectral_init",
    "synthesize_measurements",
    "wf_step",
    "wirtinger_gradient",
]

__version__ = "0.1.0"
