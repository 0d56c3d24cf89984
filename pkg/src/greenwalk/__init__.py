"""Green and Martin kernels, boundary measures, and conformality
diagnostics for transient random walks on discrete groups."""

from .errors import (
    ConfigError,
    ConvergenceError,
    GreenwalkError,
    PartitionError,
    PrecisionError,
    RangeError,
    RepresentationError,
    ResourceLimitError,
    SamplingError,
    TransienceError,
    UnsupportedGroupError,
)
from .groups import (
    Ball,
    GroupElement,
    GroupModel,
    ball_enumerate,
    parse_element,
    parse_group,
    serialize_element,
)
from .walks import (
    WalkSpec,
    drift_z,
    generation_certificate,
    make_walk,
    named_walk,
    product_walk,
    resolve_walk,
    srw_free,
    wreath_walk,
)
from .kernels import (
    KernelTable,
    build_kernel_table,
    harnack_scan,
    n_step_distribution,
    spectral_radius_estimate,
)
from .boundary import (
    BoundaryApproximant,
    best_spine_candidate,
    cocycle_residual,
    extend_kernel,
    free_tree_kernel_oracle,
    harmonicity_residual,
    parse_approximant,
    spine_scan,
)
from .measures import (
    MeasureModel,
    all_cells,
    cell_name,
    parse_cell,
    translate_cell,
    tree_exit_measure,
    uniform_depth1_measure,
)
from .sampler import (
    harmonic_measure_estimate,
    rn_identity_check,
    sample_path,
    stationarity_residual,
)
from .conformal import (
    BetaVerdict,
    CellFunction,
    KmsWord,
    PhiCurve,
    classify,
    conformality_residual,
    invariant_measure_feasibility,
    kms_residual,
    kms_word_eval,
    multiplicity_report,
    phi_curve,
    phi_map_pushforward_check,
)
from .acceptance import run_all, summary_lines

__all__ = [
    "Ball",
    "BetaVerdict",
    "BoundaryApproximant",
    "CellFunction",
    "ConfigError",
    "ConvergenceError",
    "GreenwalkError",
    "GroupElement",
    "GroupModel",
    "KernelTable",
    "KmsWord",
    "MeasureModel",
    "PartitionError",
    "PhiCurve",
    "PrecisionError",
    "RangeError",
    "RepresentationError",
    "ResourceLimitError",
    "SamplingError",
    "TransienceError",
    "UnsupportedGroupError",
    "WalkSpec",
    "all_cells",
    "ball_enumerate",
    "best_spine_candidate",
    "build_kernel_table",
    "cell_name",
    "classify",
    "cocycle_residual",
    "conformality_residual",
    "drift_z",
    "extend_kernel",
    "free_tree_kernel_oracle",
    "generation_certificate",
    "harmonic_measure_estimate",
    "harmonicity_residual",
    "harnack_scan",
    "invariant_measure_feasibility",
    "kms_residual",
    "kms_word_eval",
    "make_walk",
    "multiplicity_report",
    "n_step_distribution",
    "named_walk",
    "parse_approximant",
    "parse_cell",
    "parse_element",
    "parse_group",
    "phi_curve",
    "phi_map_pushforward_check",
    "product_walk",
    "resolve_walk",
    "rn_identity_check",
    "run_all",
    "sample_path",
    "serialize_element",
    "spectral_radius_estimate",
    "spine_scan",
    "srw_free",
    "stationarity_residual",
    "summary_lines",
    "translate_cell",
    "tree_exit_measure",
    "uniform_depth1_measure",
    "wreath_walk",
]

__version__ = "0.1.0"
