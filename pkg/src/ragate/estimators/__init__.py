from .catalog import (
    ALL_METHOD_IDS,
    HYBRID,
    METHODS,
    EstimatorParams,
    ScoringInputs,
    compute,
    compute_all,
    manifest_hash,
    needs,
)
from .consistency import (
    Spectrum,
    components,
    deg_mat_score,
    eccentricity_score,
    eig_val_laplacian_score,
    laplacian_spectrum,
    lexical_similarity_score,
    num_sem_sets,
    semantic_entropy,
)
from .density import DensityStats, fit_density, fit_rde, mahalanobis, rde, relative_mahalanobis
from .hybrid import HybridFeatureRow, assemble_hybrid, hybrid_train_stats
from .logit import (
    cpmi_mean,
    entropy_aggregate,
    fisher_rao,
    perplexity,
    pmi_mean,
    ptrue_score,
    renyi_negentropy,
    sar,
    sar_weighted,
    sentence_sar,
    sequence_prob_aggregate,
    token_entropies,
    token_relevance,
)
from .similarity import LEXICAL, SimilarityFn, lexical_token_f1, similarity_matrix

__all__ = [
    "ALL_METHOD_IDS",
    "HYBRID",
    "METHODS",
    "EstimatorParams",
    "ScoringInputs",
    "compute",
    "compute_all",
    "manifest_hash",
    "needs",
    "Spectrum",
    "components",
    "deg_mat_score",
    "eccentricity_score",
    "eig_val_laplacian_score",
    "laplacian_spectrum",
    "lexical_similarity_score",
    "num_sem_sets",
    "semantic_entropy",
    "DensityStats",
    "fit_density",
    "fit_rde",
    "mahalanobis",
    "rde",
    "relative_mahalanobis",
    "HybridFeatureRow",
    "assemble_hybrid",
    "hybrid_train_stats",
    "cpmi_mean",
    "entropy_aggregate",
    "fisher_rao",
    "perplexity",
    "pmi_mean",
    "ptrue_score",
    "renyi_negentropy",
    "sar",
    "sar_weighted",
    "sentence_sar",
    "sequence_prob_aggregate",
    "token_entropies",
    "token_relevance",
    "LEXICAL",
    "SimilarityFn",
    "lexical_token_f1",
    "similarity_matrix",
]
