"""Deterministic mock LLM used as a test oracle and for offline desk runs.

The mock answers from a knowledge table. Known questions get peaked token
distributions, unknown ones flat distributions, so logit-based estimators
separate them. A retrieved context containing the gold answer turns any
question into a known one. Every output is a pure function of
``(spec, prompt, decode config)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .. import prompts
from ..types import GenerationTrace, TokenStep
from .gateway import DecodeConfig, GatewayError, NSamplesUnsupported, prompt_key


def mock_tokenize(text: str) -> list[str]:
    """Whitespace tokens; every token after the first carries a leading space."""
    words = text.split()
    return [w if i == 0 else " " + w for i, w in enumerate(words)]


@dataclass(frozen=True)
class MockFact:
    question: str
    known: bool
    answer: str
    gold: str | None = None
    alternatives: tuple[tuple[str, float], ...] = ()
    p_true: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": self.question,
            "known": self.known,
            "answer": self.answer,
            "gold": self.gold,
            "alternatives": [list(a) for a in self.alternatives],
            "p_true": self.p_true,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MockFact:
        return cls(
            question=d["question"],
            known=bool(d["known"]),
            answer=d["answer"],
            gold=d.get("gold"),
            alternatives=tuple((a, float(w)) for a, w in d.get("alternatives", ())),
            p_true=d.get("p_true"),
        )


@dataclass(frozen=True)
class MockLLMSpec:
    """Configuration of the mock.

    ``sharpness`` is the logit bonus of the emitted token for known questions
    (``inf`` gives one-hot steps); ``unknown_sharpness`` applies to unknown
    ones and ``prior_sharpness`` to answer-only force scoring. ``noise`` is the
    std of the seeded Gaussian logit jitter on every vocabulary entry.
    """

    vocabulary: tuple[str, ...]
    knowledge: dict[str, MockFact] = field(default_factory=dict)
    sharpness: float = 8.0
    unknown_sharpness: float = 1.0
    prior_sharpness: float = 0.5
    noise: float = 0.5
    seed: int = 0
    model_id: str = "mock-llm"
    ptrue_known: float = 0.85
    ptrue_unknown: float = 0.3
    supports_n: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "vocabulary", tuple(dict.fromkeys(self.vocabulary)))
        if self.sharpness <= 0:
            raise ValueError("sharpness must be positive")
        vocab = set(self.vocabulary)
        for qid, fact in self.knowledge.items():
            answers = [fact.answer] + [a for a, _ in fact.alternatives]
            for ans in answers:
                missing = [w for w in ans.split() if w not in vocab]
                if missing:
                    raise ValueError(f"fact {qid!r}: tokens {missing} not in vocabulary")

    def to_dict(self) -> dict[str, Any]:
        return {
            "vocabulary": list(self.vocabulary),
            "knowledge": {k: v.to_dict() for k, v in sorted(self.knowledge.items())},
            "sharpness": _enc_float(self.sharpness),
            "unknown_sharpness": self.unknown_sharpness,
            "prior_sharpness": self.prior_sharpness,
            "noise": self.noise,
            "seed": self.seed,
            "model_id": self.model_id,
            "ptrue_known": self.ptrue_known,
            "ptrue_unknown": self.ptrue_unknown,
            "supports_n": self.supports_n,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MockLLMSpec:
        d = dict(d)
        d["vocabulary"] = tuple(d["vocabulary"])
        d["knowledge"] = {k: MockFact.from_dict(v) for k, v in d.get("knowledge", {}).items()}
        d["sharpness"] = float(d.get("sharpness", 8.0))
        return cls(**d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True), "utf-8")

    @classmethod
    def load(cls, path: str | Path) -> MockLLMSpec:
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))


def _enc_float(x: float) -> float | str:
    return "inf" if math.isinf(x) else x


def _rng(*parts: Any) -> np.random.Generator:
    digest = hashlib.sha256(json.dumps(parts, sort_keys=True).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _contains(haystack: str, needle: str) -> bool:
    from ..metrics import normalize_answer

    return normalize_answer(needle) in normalize_answer(haystack)


class MockLLM:
    """``Backend`` implementation driven by a ``MockLLMSpec``."""

    def __init__(self, spec: MockLLMSpec):
        self.spec = spec
        self.model_id = spec.model_id
        self._by_question = {f.question: f for f in spec.knowledge.values()}
        self._spec_hash = hashlib.sha256(
            json.dumps(spec.to_dict(), sort_keys=True).encode("utf-8")
        ).hexdigest()

    def _fact(self, question: str | None) -> MockFact:
        if question is None or question not in self._by_question:
            raise GatewayError(f"mock has no fact for question {question!r}")
        return self._by_question[question]

    def _step(
        self, token: str, position: int, sharp: float, k: int, *seed_parts: Any
    ) -> TokenStep:
        vocab = [w if position == 0 else " " + w for w in self.spec.vocabulary]
        if token not in vocab:
            vocab.append(token)
        chosen = vocab.index(token)
        if math.isinf(sharp):
            return TokenStep(token, 0.0, ((token, 0.0),), 0.0)
        logits = np.zeros(len(vocab))
        if self.spec.noise > 0:
            logits += self.spec.noise * _rng(self._spec_hash, position, token, *seed_parts).standard_normal(len(vocab))
        logits[chosen] += sharp
        logits -= logits.max()
        logp = logits - np.log(np.exp(logits).sum())
        order = sorted(range(len(vocab)), key=lambda i: (-logp[i], vocab[i]))
        top = order[:k]
        if chosen not in top:
            top[-1] = chosen
            top.sort(key=lambda i: (-logp[i], vocab[i]))
        rest = [i for i in range(len(vocab)) if i not in set(top)]
        tail = float(np.exp(logp[rest]).sum()) if rest else 0.0
        alts = tuple((vocab[i], float(logp[i])) for i in top)
        return TokenStep(token, float(logp[chosen]), alts, tail)

    def _trace(
        self, prompt: str, answer: str, sharp: float, k: int, used_context: bool
    ) -> GenerationTrace:
        steps = [
            self._step(tok, i, sharp, k, prompt)
            for i, tok in enumerate(mock_tokenize(answer))
        ]
        return GenerationTrace.from_steps(prompt_key(prompt), steps, used_context=used_context)

    def _ptrue_trace(self, prompt: str, fact: MockFact, proposed: str, k: int) -> GenerationTrace:
        if fact.p_true is not None:
            p = fact.p_true
        else:
            ok = fact.gold is not None and _contains(proposed, fact.gold)
            p = self.spec.ptrue_known if (fact.known or ok) else self.spec.ptrue_unknown
        alts = [(t, math.log(q)) for t, q in (("True", p), ("False", 1.0 - p)) if q > 0]
        alts.sort(key=lambda kv: -kv[1])
        alts = alts[:k]
        tail = max(0.0, 1.0 - math.fsum(math.exp(lp) for _, lp in alts))
        chosen = alts[0]
        step = TokenStep(chosen[0], chosen[1], tuple(alts), tail)
        return GenerationTrace.from_steps(prompt_key(prompt), [step])

    def generate(
        self, prompt: str, cfg: DecodeConfig, n: int = 1, sample_offset: int = 0
    ) -> list[GenerationTrace]:
        if n > 1 and not self.spec.supports_n:
            raise NSamplesUnsupported("mock configured without n>1 support")
        parsed = prompts.parse_prompt(prompt)
        fact = self._fact(parsed["question"])
        k = cfg.top_k_logprobs
        if parsed["kind"] == "ptrue":
            return [self._ptrue_trace(prompt, fact, parsed["proposed"] or "", k)] * n
        context = parsed["context"]
        grounded = context is not None and fact.gold is not None and _contains(context, fact.gold)
        used_context = context is not None
        if grounded:
            candidates = [(fact.gold, 1.0)]
            sharp = self.spec.sharpness
        else:
            candidates = [(fact.answer, 1.0), *fact.alternatives]
            sharp = self.spec.sharpness if fact.known else self.spec.unknown_sharpness
        out = []
        for j in range(n):
            if cfg.temperature == 0:
                answer = max(candidates, key=lambda c: c[1])[0]
            else:
                w = np.array([c[1] for c in candidates], dtype=float) ** (1.0 / cfg.temperature)
                rng = _rng(self._spec_hash, prompt, cfg.to_dict(), sample_offset + j)
                answer = candidates[int(rng.choice(len(candidates), p=w / w.sum()))][0]
            answer = " ".join(answer.split()[: cfg.max_tokens])
            out.append(self._trace(prompt, answer, sharp, k, used_context))
        return out

    def score(self, prefix: str, tokens: list[str], cfg: DecodeConfig) -> GenerationTrace:
        steps = [
            self._step(tok, i, self.spec.prior_sharpness, cfg.top_k_logprobs, prefix)
            for i, tok in enumerate(tokens)
        ]
        return GenerationTrace.from_steps(prompt_key(prefix + "".join(tokens)), steps)
