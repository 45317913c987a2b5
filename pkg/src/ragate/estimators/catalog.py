"""Registry of uncertainty methods: what each needs and how to compute it.

Each entry declares the orientation of its raw value once; ``compute`` flips
signs where needed so every exported score is higher = more uncertain.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from ..types import GenerationTrace, SampleSet, UncertaintyScore
from . import consistency as cons
from . import logit
from .density import DensityStats, mahalanobis
from .similarity import LEXICAL, SimilarityFn, similarity_matrix


@dataclass
class EstimatorParams:
    sim: SimilarityFn = LEXICAL
    renyi_alpha: float = 2.0
    cpmi_tau: float = 2.0
    cpmi_beta: float = 1.0
    sentence_sar_temp: float = 1.0
    cluster_theta: float = 0.5
    eccentricity_k: int = 2
    md_stats: DensityStats | None = None
    background_stats: DensityStats | None = None
    rde_stats: DensityStats | None = None


@dataclass
class ScoringInputs:
    """Everything an estimator may read for one question."""

    trace: GenerationTrace
    samples: SampleSet | None = None
    uncond: GenerationTrace | None = None
    p_true: float | None = None
    feature: np.ndarray | None = None
    _cache: dict[str, Any] = field(default_factory=dict, repr=False)

    def matrix(self, sim: SimilarityFn) -> np.ndarray:
        if "matrix" not in self._cache:
            self._cache["matrix"] = similarity_matrix(self.samples, sim)
        return self._cache["matrix"]

    def spectrum(self, sim: SimilarityFn) -> cons.Spectrum:
        if "spectrum" not in self._cache:
            self._cache["spectrum"] = cons.laplacian_spectrum(self.matrix(sim))
        return self._cache["spectrum"]


@dataclass(frozen=True)
class Method:
    id: str
    family: str
    needs: frozenset[str]
    fn: Callable[[ScoringInputs, EstimatorParams], float]
    raw_higher_is_uncertain: bool = True


def _ecc(inp: ScoringInputs, p: EstimatorParams) -> float:
    spec = inp.spectrum(p.sim)
    return cons.eccentricity_score(spec, min(p.eccentricity_k, len(spec.eigenvalues)))


def _require(stats: DensityStats | None, name: str) -> DensityStats:
    if stats is None:
        raise ValueError(f"{name} statistics not fitted")
    return stats


_S = frozenset({"samples"})
_N = frozenset()

METHODS: dict[str, Method] = {
    m.id: m
    for m in [
        Method("max_entropy", "logit", _N, lambda i, p: logit.entropy_aggregate(i.trace, "max")),
        Method("mean_entropy", "logit", _N, lambda i, p: logit.entropy_aggregate(i.trace, "mean")),
        Method("min_entropy", "logit", _N, lambda i, p: logit.entropy_aggregate(i.trace, "min")),
        Method("median_entropy", "logit", _N, lambda i, p: logit.entropy_aggregate(i.trace, "median")),
        Method("perplexity", "logit", _N, lambda i, p: logit.perplexity(i.trace)),
        Method("max_seq_prob", "logit", _S, lambda i, p: logit.sequence_prob_aggregate(i.samples, "max")),
        Method("mean_seq_prob", "logit", _S, lambda i, p: logit.sequence_prob_aggregate(i.samples, "mean")),
        Method("min_seq_prob", "logit", _S, lambda i, p: logit.sequence_prob_aggregate(i.samples, "min")),
        Method("median_seq_prob", "logit", _S, lambda i, p: logit.sequence_prob_aggregate(i.samples, "median")),
        Method("mean_pmi", "logit", frozenset({"uncond"}), lambda i, p: logit.pmi_mean(i.trace, i.uncond)),
        Method(
            "mean_cpmi",
            "logit",
            frozenset({"uncond"}),
            lambda i, p: logit.cpmi_mean(i.trace, i.uncond, p.cpmi_tau, p.cpmi_beta),
        ),
        Method("renyi_neg", "logit", _N, lambda i, p: logit.renyi_negentropy(i.trace, p.renyi_alpha)),
        Method("fisher_rao", "logit", _N, lambda i, p: logit.fisher_rao(i.trace)),
        Method("sar", "logit", _N, lambda i, p: logit.sar(i.trace, p.sim)),
        Method(
            "sentence_sar",
            "logit",
            _S,
            lambda i, p: logit.sentence_sar(i.samples, p.sim, p.sentence_sar_temp, i.matrix(p.sim)),
        ),
        Method("ptrue", "logit", frozenset({"ptrue"}), lambda i, p: logit.ptrue_score(i.p_true)),
        Method("lex_similarity", "consistency", _S, lambda i, p: cons.lexical_similarity_score(i.matrix(p.sim))),
        Method("num_sem_sets", "consistency", _S, lambda i, p: cons.num_sem_sets(i.matrix(p.sim), p.cluster_theta)),
        Method("deg_mat", "consistency", _S, lambda i, p: cons.deg_mat_score(i.matrix(p.sim))),
        Method("eig_val_laplacian", "consistency", _S, lambda i, p: cons.eig_val_laplacian_score(i.spectrum(p.sim))),
        Method("eccentricity", "consistency", _S, _ecc),
        Method(
            "semantic_entropy",
            "consistency",
            _S,
            lambda i, p: cons.semantic_entropy(i.samples, i.matrix(p.sim), p.cluster_theta),
        ),
        Method(
            "md",
            "internal",
            frozenset({"features"}),
            lambda i, p: mahalanobis(_require(p.md_stats, "MD"), i.feature),
        ),
        Method(
            "rmd",
            "internal",
            frozenset({"features"}),
            lambda i, p: mahalanobis(_require(p.md_stats, "MD"), i.feature)
            - mahalanobis(_require(p.background_stats, "background"), i.feature),
        ),
        Method(
            "rde",
            "internal",
            frozenset({"features"}),
            lambda i, p: mahalanobis(_require(p.rde_stats, "RDE"), i.feature),
        ),
    ]
}

HYBRID = "hybrid"
ALL_METHOD_IDS = [*METHODS, HYBRID]


def needs(method_ids: list[str]) -> frozenset[str]:
    out: set[str] = set()
    for mid in method_ids:
        if mid == HYBRID:
            continue
        if mid not in METHODS:
            raise KeyError(f"unknown uncertainty method {mid!r}")
        out |= METHODS[mid].needs
    return frozenset(out)


def compute(method_id: str, inputs: ScoringInputs, params: EstimatorParams | None = None) -> UncertaintyScore:
    if method_id not in METHODS:
        raise KeyError(f"unknown uncertainty method {method_id!r}")
    method = METHODS[method_id]
    missing = [
        n
        for n in method.needs
        if {"samples": inputs.samples, "uncond": inputs.uncond, "ptrue": inputs.p_true, "features": inputs.feature}[n]
        is None
    ]
    if missing:
        raise ValueError(f"{method_id} needs {', '.join(sorted(missing))}")
    raw = method.fn(inputs, params or EstimatorParams())
    return UncertaintyScore(method_id, float(raw if method.raw_higher_is_uncertain else -raw))


def compute_all(
    method_ids: list[str], inputs: ScoringInputs, params: EstimatorParams | None = None
) -> dict[str, float | None]:
    """Score every method that has its inputs; others map to ``None``."""
    params = params or EstimatorParams()
    out: dict[str, float | None] = {}
    for mid in method_ids:
        try:
            out[mid] = compute(mid, inputs, params).value
        except (ValueError, ArithmeticError):
            out[mid] = None
    return out


def manifest_hash(method_ids: list[str]) -> str:
    return hashlib.sha256(json.dumps(list(method_ids)).encode("utf-8")).hexdigest()[:16]
