"""fusionloc: 3D multi-source localization fusing sensor-array covariance
fitting with camera detection priors through an unbalanced-optimal-transport
regularizer, solved by greedy coordinate descent."""

__version__ = "0.1.0"

from .scene import (
    ArrayGeometry,
    CameraPose,
    Grid,
    Scene,
    SourceSet,
    TransferMatrix,
    build_transfer_matrix,
    load_scene,
    steering_for_point,
)
from .signals import (
    Covariance,
    SnapshotBlock,
    add_noise_for_snr,
    empirical_covariance,
    model_covariance,
    snapshots_for_scene,
    source_steering,
    synthesize_snapshots,
)
from .camera import (
    DetectionPrior,
    angular_cost,
    project_onto_reference_plane,
    project_pixels_to_plane,
    resolve_detections,
)
from .cmf import (
    CmfWorkspace,
    PowerMap,
    SolveTrace,
    cmf_gradient,
    cmf_objective,
    cmf_solve_cd,
    cmf_solve_nnls,
)
from .uot import (
    FusedWorkspace,
    FusionParams,
    TransportPlan,
    balanced_ot_cost,
    coordinate_gradient,
    coordinate_step,
    fused_objective,
    solve_cmf_uot,
)
from .evaluate import (
    EstimateSet,
    Scenario,
    SweepResult,
    extract_peaks,
    match_mse,
    run_monte_carlo,
)

__all__ = [
    "ArrayGeometry", "CameraPose", "Grid", "Scene", "SourceSet", "TransferMatrix",
    "build_transfer_matrix", "load_scene", "steering_for_point",
    "Covariance", "SnapshotBlock", "add_noise_for_snr", "empirical_covariance",
    "model_covariance", "snapshots_for_scene", "source_steering", "synthesize_snapshots",
    "DetectionPrior", "angular_cost", "project_onto_reference_plane",
    "project_pixels_to_plane", "resolve_detections",
    "CmfWorkspace", "PowerMap", "SolveTrace", "cmf_gradient", "cmf_objective",
    "cmf_solve_cd", "cmf_solve_nnls",
    "FusedWorkspace", "FusionParams", "TransportPlan", "balanced_ot_cost",
    "coordinate_gradient", "coordinate_step", "fused_objective", "solve_cmf_uot",
    "EstimateSet", "Scenario", "SweepResult", "extract_peaks", "match_mse",
    "run_monte_carlo",
]
