"""Logit-based uncertainty estimators over token log-probabilities.

Every function returns a float oriented so that larger means more uncertain.
Token distributions are the top-K alternatives plus ``tail_mass`` treated as
one extra outcome.
"""

from __future__ import annotations

import math
from statistics import median
from typing import Sequence

import numpy as np

from ..types import PROB_FLOOR, DataError, GenerationTrace, SampleSet, TokenStep, trace_token_nll
from .similarity import LEXICAL, SimilarityFn, similarity_matrix

AGGREGATIONS = ("max", "mean", "min", "median")


def step_distribution(step: TokenStep) -> list[float]:
    """Probabilities of the listed alternatives, plus the tail when it is non-negligible."""
    p = [math.exp(lp) for _, lp in step.alternatives]
    if step.tail_mass > PROB_FLOOR:
        p.append(step.tail_mass)
    return p


def token_entropies(trace: GenerationTrace) -> list[float]:
    out = []
    for step in trace.steps:
        out.append(-math.fsum(q * math.log(q) for q in step_distribution(step) if q > 0))
    return out


def _aggregate(values: Sequence[float], agg: str) -> float:
    if agg == "max":
        return max(values)
    if agg == "min":
        return min(values)
    if agg == "mean":
        return math.fsum(values) / len(values)
    if agg == "median":
        return float(median(values))
    raise ValueError(f"unknown aggregation {agg!r}")


def entropy_aggregate(trace: GenerationTrace, agg: str = "max") -> float:
    if not trace.steps:
        raise DataError("empty generation")
    return _aggregate(token_entropies(trace), agg)


def perplexity(trace: GenerationTrace) -> float:
    nll = trace_token_nll(trace)
    return math.exp(math.fsum(nll) / len(nll))


def sequence_prob_aggregate(samples: SampleSet, agg: str = "max") -> float:
    probs = [math.exp(s.total_logprob) for s in samples.samples]
    return -math.log(max(_aggregate(probs, agg), PROB_FLOOR))


def _paired_logprobs(cond: GenerationTrace, uncond: GenerationTrace) -> tuple[np.ndarray, np.ndarray]:
    if len(cond) != len(uncond):
        raise DataError(f"length mismatch: conditional {len(cond)} tokens, unconditional {len(uncond)}")
    if not cond.steps:
        raise DataError("empty generation")
    a = np.array([s.chosen_logprob for s in cond.steps])
    b = np.array([s.chosen_logprob for s in uncond.steps])
    return a, b


def pmi_mean(cond: GenerationTrace, uncond: GenerationTrace) -> float:
    a, b = _paired_logprobs(cond, uncond)
    return float(-np.mean(a - b))


def cpmi_mean(cond: GenerationTrace, uncond: GenerationTrace, tau: float = 2.0, beta: float = 1.0) -> float:
    """Mean NLL, crediting back the unconditional term on high-entropy tokens."""
    a, b = _paired_logprobs(cond, uncond)
    gate = np.array(token_entropies(cond)) >= tau
    return float(np.mean(-a + gate * beta * b))


def renyi_negentropy(trace: GenerationTrace, alpha: float = 2.0) -> float:
    if alpha == 1:
        raise ValueError("alpha must differ from 1")
    divs = []
    for step in trace.steps:
        p = np.array(step_distribution(step))
        v_eff = len(p)
        divs.append(math.log(float(np.sum(p**alpha)) * v_eff ** (alpha - 1)) / (alpha - 1))
    return -float(np.mean(divs))


def fisher_rao(trace: GenerationTrace) -> float:
    dists = []
    for step in trace.steps:
        p = np.array(step_distribution(step))
        bc = float(np.sum(np.sqrt(p / len(p))))
        dists.append(2.0 / math.pi * math.acos(min(1.0, max(-1.0, bc))))
    return 1.0 - float(np.mean(dists))


def token_relevance(trace: GenerationTrace, sim: SimilarityFn = LEXICAL) -> list[float]:
    """``1 - sim(full, full without token t)`` for each token t."""
    tokens = [s.token_text for s in trace.steps]
    if len(tokens) == 1:
        return [1.0]
    full = trace.text
    return [1.0 - sim(full, "".join(tokens[:t] + tokens[t + 1:])) for t in range(len(tokens))]


def sar_weighted(nll: Sequence[float], relevance: Sequence[float]) -> float:
    return math.fsum(n * r for n, r in zip(nll, relevance))


def sar(trace: GenerationTrace, sim: SimilarityFn = LEXICAL) -> float:
    return sar_weighted(trace_token_nll(trace), token_relevance(trace, sim))


def sentence_sar(
    samples: SampleSet,
    sim: SimilarityFn = LEXICAL,
    t_temp: float = 1.0,
    matrix: np.ndarray | None = None,
) -> float:
    if t_temp <= 0:
        raise ValueError("t_temp must be positive")
    m = similarity_matrix(samples, sim) if matrix is None else matrix
    p = np.exp([s.total_logprob for s in samples.samples])
    off = m - np.diag(np.diag(m))
    boosted = p + (off @ p) / t_temp
    return float(np.mean(-np.log(np.maximum(boosted, PROB_FLOOR))))


def ptrue_score(p_true: float) -> float:
    if not 0.0 <= p_true <= 1.0:
        raise ValueError("P(True) must lie in [0, 1]")
    return 1.0 - p_true
