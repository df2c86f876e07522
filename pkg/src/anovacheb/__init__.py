"""ANOVA-truncated Chebyshev least-squares approximation of scattered data.

Fit partial sums of normed tensor Chebyshev polynomials over grouped
(low-order ANOVA) index sets, rank the ANOVA terms by global sensitivity
index, and refit on the detected active set.
"""

__version__ = "0.1.0"

from anovacheb.errors import (
    AnovaChebError,
    DegenerateModelError,
    DomainError,
    FormatError,
    InvalidThresholdError,
    NumericError,
    ResourceError,
    ShapeError,
    UnknownTermError,
    UsageError,
    VersionError,
)
from anovacheb.core import (
    AnovaTermSet,
    CoefficientVector,
    Dataset,
    Density,
    GroupedIndexSet,
    NodeSet,
    build_superposition_term_set,
    cardinality,
    read_dataset,
    read_points,
    write_dataset,
)
from anovacheb.transform import GroupedTransform, TermTransformPlan, chebyshev_basis
from anovacheb.solver import (
    LsqrConfig,
    LsqrResult,
    SpectralReport,
    lsqr_solve,
    scale_nodes,
    solve_chebyshev_nodes,
    solve_uniform_nodes,
    spectral_diagnostic,
    weight_vector,
)
from anovacheb.anova import (
    SensitivityReport,
    detect_active_set,
    global_sensitivity_indices,
    project_coefficients,
    superposition_dimension,
    term_variance,
    truncate,
    variance_from_coefficients,
)
from anovacheb.pipeline import (
    ApproximationModel,
    evaluate,
    fit_initial,
    load_model,
    refit,
    save_model,
    two_stage,
)

__all__ = [
    "__version__",
    "AnovaChebError",
    "DegenerateModelError",
    "DomainError",
    "FormatError",
    "InvalidThresholdError",
    "NumericError",
    "ResourceError",
    "ShapeError",
    "UnknownTermError",
    "UsageError",
    "VersionError",
    "AnovaTermSet",
    "CoefficientVector",
    "Dataset",
    "Density",
    "GroupedIndexSet",
    "NodeSet",
    "build_superposition_term_set",
    "cardinality",
    "read_dataset",
    "read_points",
    "write_dataset",
    "LsqrConfig",
    "LsqrResult",
    "SpectralReport",
    "lsqr_solve",
    "scale_nodes",
    "solve_chebyshev_nodes",
    "solve_uniform_nodes",
    "spectral_diagnostic",
    "weight_vector",
    "SensitivityReport",
    "detect_active_set",
    "global_sensitivity_indices",
    "project_coefficients",
    "superposition_dimension",
    "term_variance",
    "truncate",
    "variance_from_coefficients",
    "ApproximationModel",
    "evaluate",
    "fit_initial",
    "load_model",
    "refit",
    "save_model",
    "two_stage",
    "GroupedTransform",
    "TermTransformPlan",
    "chebyshev_basis",
]
