"""Answering strategies with exact LM-call and retrieval-call accounting.

A record's counters are derived from the path it took, never from shared
mutable counters, so cached replays produce identical records.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import prompts
from .deciders import DecisionTable, DeciderModel
from .estimators import catalog
from .estimators.catalog import HYBRID, EstimatorParams, ScoringInputs, manifest_hash
from .estimators.hybrid import assemble_hybrid, hybrid_train_stats
from .llm.gateway import GREEDY, SAMPLING, DecodeConfig, LLMGateway
from .metrics import exact_match, f1, in_accuracy
from .retrieval import Retriever
from .types import DataError, GenerationTrace, QAExample, RunRecord

log = logging.getLogger(__name__)

FORCE_SCORED = "force-scored"
NO_CONTEXT = "no-context-retrieved"


def extract_answer(trace: GenerationTrace) -> str:
    text = trace.text.strip()
    return text.split("\n", 1)[0].strip() if text else ""


def feature_manifest(estimators: Sequence[str], hybrid_manifest: Sequence[str] = ()) -> list[str]:
    """Method ids whose order defines a decider's input columns."""
    if list(estimators) == [HYBRID]:
        return [HYBRID, *hybrid_manifest]
    return list(estimators)


@dataclass
class PipelineConfig:
    estimators: list[str] = field(default_factory=lambda: ["max_entropy"])
    decider: DeciderModel | None = None
    k: int = 5
    template: str = "qa_v1"
    fewshot: str | None = "fewshot_v1"
    greedy: DecodeConfig = GREEDY
    sampling: DecodeConfig = SAMPLING
    params: EstimatorParams = field(default_factory=EstimatorParams)
    hybrid_manifest: list[str] = field(default_factory=list)
    hybrid_stats: dict[str, tuple[float, float]] = field(default_factory=dict)
    features: Mapping[str, Sequence[float]] = field(default_factory=dict)
    max_workers: int = 8

    def base_methods(self) -> list[str]:
        if self.estimators == [HYBRID]:
            return list(self.hybrid_manifest)
        return list(self.estimators)


class Pipeline:
    def __init__(self, gateway: LLMGateway, retriever: Retriever | None, cfg: PipelineConfig | None = None):
        self.gateway = gateway
        self.retriever = retriever
        self.cfg = cfg or PipelineConfig()

    # -- single generations -------------------------------------------------

    def answer_no_rag(self, example: QAExample) -> tuple[GenerationTrace, str]:
        prompt = prompts.qa_prompt(example.question, None, self.cfg.template, self.cfg.fewshot)
        trace = self.gateway.complete(prompt, self.cfg.greedy)
        return trace, extract_answer(trace)

    def answer_with_rag(self, example: QAExample, k: int | None = None) -> tuple[GenerationTrace, str, tuple[str, ...]]:
        if self.retriever is None:
            raise DataError("no retriever configured")
        hits = self.retriever.search(example.question, k or self.cfg.k)
        docs = self.retriever.documents(hits)
        flags = () if docs else (NO_CONTEXT,)
        prompt = prompts.qa_prompt(example.question, docs, self.cfg.template, self.cfg.fewshot)
        trace = self.gateway.complete(prompt, self.cfg.greedy)
        return trace, extract_answer(trace), flags

    def score(self, example: QAExample, trace: GenerationTrace, methods: Sequence[str]) -> tuple[dict[str, float | None], bool]:
        """Compute ``methods`` for the no-retrieval generation.

        Returns the scores and whether an extra force-scoring LM call ran.
        """
        need = catalog.needs(list(methods))
        inputs = ScoringInputs(trace=trace)
        forced = False
        if "samples" in need:
            prompt = prompts.qa_prompt(example.question, None, self.cfg.template, self.cfg.fewshot)
            inputs.samples = self.gateway.sample_n(prompt, self.cfg.sampling)
        if "uncond" in need and trace.steps:
            tokens = [s.token_text for s in trace.steps]
            inputs.uncond = self.gateway.force_score(prompts.answer_only_prefix(), tokens, self.cfg.greedy)
            forced = True
        if "ptrue" in need:
            inputs.p_true = float(self.gateway.ptrue_probe(example.question, extract_answer(trace)))
        if "features" in need and example.id in self.cfg.features:
            inputs.feature = np.asarray(self.cfg.features[example.id], dtype=float)
        return catalog.compute_all(list(methods), inputs, self.cfg.params), forced

    def decision_features(self, scores: Mapping[str, float | None]) -> np.ndarray:
        if self.cfg.estimators == [HYBRID]:
            row = assemble_hybrid("", scores, self.cfg.hybrid_manifest, self.cfg.hybrid_stats)
            return np.asarray(row.vector)
        vals = [scores.get(m) for m in self.cfg.estimators]
        if any(v is None for v in vals):
            missing = [m for m, v in zip(self.cfg.estimators, vals) if v is None]
            raise DataError(f"estimator(s) {missing} produced no score")
        return np.asarray(vals, dtype=float)

    # -- strategies -----------------------------------------------------------

    def _record(self, example, strategy, decision, answer, lm, rc, scores=None, flags=()) -> RunRecord:
        return RunRecord(
            example_id=example.id,
            strategy=strategy,
            decision=int(decision),
            answer=answer,
            correct_in_acc=in_accuracy(answer, example.golds),
            correct_em=exact_match(answer, example.golds),
            f1=f1(answer, example.golds),
            lm_calls=lm,
            retrieval_calls=rc,
            scores={k: v for k, v in (scores or {}).items() if v is not None},
            flags=tuple(flags),
        )

    def run_never(self, example: QAExample) -> RunRecord:
        _, answer = self.answer_no_rag(example)
        return self._record(example, "never", 0, answer, 1, 0)

    def run_always(self, example: QAExample) -> RunRecord:
        _, answer, flags = self.answer_with_rag(example)
        return self._record(example, "always", 1, answer, 1, 1, flags=flags)

    def check_manifest(self) -> None:
        decider = self.cfg.decider
        if decider is None:
            raise DataError("adaptive strategy needs a fitted decider")
        expected = manifest_hash(feature_manifest(self.cfg.estimators, self.cfg.hybrid_manifest))
        if decider.manifest_hash and decider.manifest_hash != expected:
            raise DataError(
                f"decider was trained on manifest {decider.manifest_hash}, estimators give {expected}"
            )

    def run_adaptive(self, example: QAExample) -> RunRecord:
        self.check_manifest()
        trace, answer = self.answer_no_rag(example)
        scores, forced = self.score(example, trace, self.cfg.base_methods())
        decision = self.cfg.decider.predict_one(self.decision_features(scores))
        flags: tuple[str, ...] = (FORCE_SCORED,) if forced else ()
        if decision:
            _, answer, extra = self.answer_with_rag(example)
            flags += extra
        # greedy answer and its batched samples count as one LM call
        lm = 1 + decision + int(forced)
        return self._record(example, "adaptive", decision, answer, lm, decision, scores, flags)

    def run_ideal(self, example: QAExample, labels: Mapping[str, int]) -> RunRecord:
        if example.id not in labels:
            raise DataError(f"no self-knowledge label for example {example.id!r}")
        y = int(labels[example.id])
        _, answer = self.answer_no_rag(example)
        flags: tuple[str, ...] = ()
        if y:
            _, answer, flags = self.answer_with_rag(example)
        return self._record(example, "ideal", y, answer, 1 + y, y, flags=flags)

    def run(
        self, examples: Sequence[QAExample], strategy: str, labels: Mapping[str, int] | None = None
    ) -> list[RunRecord]:
        if strategy == "adaptive":
            self.check_manifest()
        fn: Callable[[QAExample], RunRecord] = {
            "never": self.run_never,
            "always": self.run_always,
            "adaptive": self.run_adaptive,
            "ideal": lambda ex: self.run_ideal(ex, labels or {}),
        }[strategy]

        def safe(ex: QAExample) -> RunRecord:
            try:
                return fn(ex)
            except Exception as exc:  # noqa: BLE001 - per-row failures are recorded, not fatal
                log.warning("example %s failed: %s", ex.id, exc)
                return RunRecord(ex.id, strategy, 0, "", False, False, 0.0, 0, 0, error=f"{type(exc).__name__}: {exc}")

        with ThreadPoolExecutor(max_workers=self.cfg.max_workers) as pool:
            return list(pool.map(safe, examples))

    # -- training data ----------------------------------------------------------

    def decision_row(self, example: QAExample, methods: Sequence[str]) -> dict[str, Any]:
        trace, answer = self.answer_no_rag(example)
        _, rag_answer, flags = self.answer_with_rag(example)
        scores, _ = self.score(example, trace, methods)
        correct_norag = in_accuracy(answer, example.golds)
        return {
            "example_id": example.id,
            "dataset": example.dataset,
            "answer_norag": answer,
            "answer_rag": rag_answer,
            "correct_norag": correct_norag,
            "correct_rag": in_accuracy(rag_answer, example.golds),
            "y": int(not correct_norag),
            "scores": scores,
            "flags": list(flags),
            "error": None,
        }

    def build_decision_rows(self, examples: Sequence[QAExample], methods: Sequence[str]) -> list[dict[str, Any]]:
        def safe(ex: QAExample) -> dict[str, Any]:
            try:
                return self.decision_row(ex, methods)
            except Exception as exc:  # noqa: BLE001
                log.warning("example %s failed: %s", ex.id, exc)
                return {"example_id": ex.id, "dataset": ex.dataset, "error": f"{type(exc).__name__}: {exc}"}

        with ThreadPoolExecutor(max_workers=self.cfg.max_workers) as pool:
            return list(pool.map(safe, examples))


def decision_table(
    rows: Sequence[Mapping[str, Any]],
    method: str,
    hybrid_manifest: Sequence[str] = (),
    hybrid_stats: Mapping[str, tuple[float, float]] | None = None,
) -> DecisionTable:
    """Turn decision rows into a table for one method (or the Hybrid vector).

    Rows with errors or a missing score are dropped. For Hybrid, pass the
    training split's ``hybrid_stats``; when omitted they are computed from
    ``rows`` (correct only for the training split itself).
    """
    ok = [r for r in rows if not r.get("error")]
    if method == HYBRID:
        stats = hybrid_stats or hybrid_train_stats([r["scores"] for r in ok], hybrid_manifest)
        feats = [assemble_hybrid(r["example_id"], r["scores"], hybrid_manifest, stats).vector for r in ok]
        keep = ok
        columns = [HYBRID, *hybrid_manifest]
    else:
        keep = [r for r in ok if r["scores"].get(method) is not None]
        feats = [[r["scores"][method]] for r in keep]
        columns = [method]
    d = len(hybrid_manifest) if method == HYBRID else 1
    return DecisionTable(
        [r["example_id"] for r in keep],
        np.asarray(feats, dtype=float).reshape(len(keep), d),
        [r["correct_norag"] for r in keep],
        [r["correct_rag"] for r in keep],
        tuple(columns),
    )


def build_decision_table(
    pipeline: Pipeline, examples: Sequence[QAExample], method: str, hybrid_manifest: Sequence[str] = ()
) -> DecisionTable:
    methods = list(hybrid_manifest) if method == HYBRID else [method]
    return decision_table(pipeline.build_decision_rows(examples, methods), method, hybrid_manifest)
