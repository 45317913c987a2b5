from .complexity import (
    HYPOTHESIS_CLASSES,
    ComplexityResult,
    best_fit_correlation,
    logreg_hessian,
    power_iteration,
    rademacher_estimate,
    sharpness,
)
from .importance import (
    FeatureImportance,
    SensitivityRow,
    classifier_sensitivity,
    hybrid_feature_importance,
    importance_rank_table,
)
from .ood import (
    NEMENYI_CRITICAL,
    FriedmanResult,
    NemenyiResult,
    TransferCell,
    friedman,
    nemenyi,
    nemenyi_exact_p,
    ood_matrix,
)

__all__ = [
    "HYPOTHESIS_CLASSES",
    "ComplexityResult",
    "best_fit_correlation",
    "logreg_hessian",
    "power_iteration",
    "rademacher_estimate",
    "sharpness",
    "FeatureImportance",
    "SensitivityRow",
    "classifier_sensitivity",
    "hybrid_feature_importance",
    "importance_rank_table",
    "NEMENYI_CRITICAL",
    "FriedmanResult",
    "NemenyiResult",
    "TransferCell",
    "friedman",
    "nemenyi",
    "nemenyi_exact_p",
    "ood_matrix",
]
