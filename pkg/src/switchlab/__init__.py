"""switchlab: effect estimation and design analysis for switchback experiments."""

__version__ = "0.1.0"

from .errors import (
    AllWeightsZero,
    BootstrapDegenerate,
    DegenerateDesign,
    EmptyArm,
    IsolatedRegion,
    SchemaError,
    SwitchlabError,
    TiMismatch,
)
from .kernels import KernelSpec, kernel_eval, spatial_weights, temporal_weights
from .panel import (
    DesignSpec,
    PanelDataset,
    SpatioPanelDataset,
    generate_actions,
    neighbor_average,
    validate,
)
from .tvcdp import TVCDP, CoefficientPath, TestReport
from .stvcdp import STVCDP, STCoefficientPath
from .nn_vcdp import NNVCDP
from .design import (
    TEN_REGION_ADJACENCY,
    Environment,
    STEnvironment,
    StudyConfig,
    build_environment_from_fit,
    build_st_environment_from_fit,
    make_st_truth,
    make_temporal_truth,
    mse_compare,
    noise_environment,
    rejection_study,
    simulate_dataset,
    simulate_st_dataset,
    st_analog_environment,
    temporal_analog_environment,
    unsmoothed_de,
)

__all__ = [
    "AllWeightsZero",
    "BootstrapDegenerate",
    "CoefficientPath",
    "DegenerateDesign",
    "DesignSpec",
    "EmptyArm",
    "Environment",
    "IsolatedRegion",
    "KernelSpec",
    "NNVCDP",
    "PanelDataset",
    "STCoefficientPath",
    "STEnvironment",
    "STVCDP",
    "SchemaError",
    "SpatioPanelDataset",
    "StudyConfig",
    "SwitchlabError",
    "TVCDP",
    "TestReport",
    "TiMismatch",
    "build_environment_from_fit",
    "build_st_environment_from_fit",
    "generate_actions",
    "kernel_eval",
    "TEN_REGION_ADJACENCY",
    "make_st_truth",
    "make_temporal_truth",
    "mse_compare",
    "noise_environment",
    "unsmoothed_de",
    "neighbor_average",
    "rejection_study",
    "simulate_dataset",
    "simulate_st_dataset",
    "spatial_weights",
    "st_analog_environment",
    "temporal_analog_environment",
    "temporal_weights",
    "validate",
]
