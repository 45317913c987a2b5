"""Shared value types: questions, documents, generations, scores and run outcomes.

All log-probabilities are natural logs. Every type is a frozen dataclass and
round-trips through ``to_dict`` / ``from_dict`` (plain JSON-compatible dicts).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Iterator, Literal

PROB_FLOOR = 1e-12
MASS_TOL = 1e-6

HopClass = Literal["single", "multi"]
Strategy = Literal["never", "always", "adaptive", "ideal"]


class DataError(ValueError):
    """Raised when input data violates a structural invariant."""


def safe_log(p: float) -> float:
    return math.log(max(p, PROB_FLOOR))


@dataclass(frozen=True)
class QAExample:
    id: str
    question: str
    golds: tuple[str, ...]
    dataset: str = ""
    hop_class: HopClass = "single"

    def __post_init__(self) -> None:
        object.__setattr__(self, "golds", tuple(self.golds))
        if not self.question:
            raise DataError(f"example {self.id!r}: empty question")
        if not self.golds:
            raise DataError(f"example {self.id!r}: no gold answers")
        if self.hop_class not in ("single", "multi"):
            raise DataError(f"example {self.id!r}: bad hop_class {self.hop_class!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "question": self.question,
            "golds": list(self.golds),
            "dataset": self.dataset,
            "hop_class": self.hop_class,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> QAExample:
        return cls(
            id=str(d["id"]),
            question=d["question"],
            golds=tuple(d["golds"]),
            dataset=d.get("dataset", ""),
            hop_class=d.get("hop_class", "single"),
        )


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    body: str

    def __post_init__(self) -> None:
        if not self.body:
            raise DataError(f"document {self.doc_id!r}: empty body")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Document:
        return cls(doc_id=str(d["doc_id"]), title=d.get("title", ""), body=d["body"])


@dataclass(frozen=True)
class TokenStep:
    """One generated token with its top-K alternatives.

    ``alternatives`` is sorted by descending logprob; ``tail_mass`` is the
    probability left outside the returned list.
    """

    token_text: str
    chosen_logprob: float
    alternatives: tuple[tuple[str, float], ...]
    tail_mass: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "alternatives", tuple((str(t), float(lp)) for t, lp in self.alternatives)
        )

    def probs(self) -> list[float]:
        return [math.exp(lp) for _, lp in self.alternatives]

    def to_dict(self) -> dict[str, Any]:
        return {
            "token_text": self.token_text,
            "chosen_logprob": self.chosen_logprob,
            "alternatives": [[t, lp] for t, lp in self.alternatives],
            "tail_mass": self.tail_mass,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TokenStep:
        return cls(
            token_text=d["token_text"],
            chosen_logprob=float(d["chosen_logprob"]),
            alternatives=tuple((t, float(lp)) for t, lp in d["alternatives"]),
            tail_mass=float(d.get("tail_mass", 0.0)),
        )


@dataclass(frozen=True)
class GenerationTrace:
    prompt_key: str
    steps: tuple[TokenStep, ...]
    text: str
    total_logprob: float
    used_context: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))

    @classmethod
    def from_steps(
        cls, prompt_key: str, steps: Iterable[TokenStep], used_context: bool = False
    ) -> GenerationTrace:
        steps = tuple(steps)
        return cls(
            prompt_key=prompt_key,
            steps=steps,
            text="".join(s.token_text for s in steps),
            total_logprob=math.fsum(s.chosen_logprob for s in steps),
            used_context=used_context,
        )

    def __len__(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict[str, Any]:
        return {
            "prompt_key": self.prompt_key,
            "steps": [s.to_dict() for s in self.steps],
            "text": self.text,
            "total_logprob": self.total_logprob,
            "used_context": self.used_context,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> GenerationTrace:
        return cls(
            prompt_key=d["prompt_key"],
            steps=tuple(TokenStep.from_dict(s) for s in d["steps"]),
            text=d["text"],
            total_logprob=float(d["total_logprob"]),
            used_context=bool(d.get("used_context", False)),
        )


@dataclass(frozen=True)
class SampleSet:
    prompt_key: str
    samples: tuple[GenerationTrace, ...]
    sampling_temperature: float = 1.0
    sequential_fallback: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.samples:
            raise DataError("sample set needs at least one sample")
        if self.sampling_temperature <= 0:
            raise DataError("sampling temperature must be positive")
        if any(s.prompt_key != self.prompt_key for s in self.samples):
            raise DataError("samples disagree on prompt_key")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def texts(self) -> list[str]:
        return [s.text for s in self.samples]

    def to_dict(self) -> dict[str, Any]:
        return {
            "prompt_key": self.prompt_key,
            "samples": [s.to_dict() for s in self.samples],
            "sampling_temperature": self.sampling_temperature,
            "sequential_fallback": self.sequential_fallback,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SampleSet:
        return cls(
            prompt_key=d["prompt_key"],
            samples=tuple(GenerationTrace.from_dict(s) for s in d["samples"]),
            sampling_temperature=float(d["sampling_temperature"]),
            sequential_fallback=bool(d.get("sequential_fallback", False)),
        )


@dataclass(frozen=True)
class HiddenFeature:
    example_id: str
    vector: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "vector", tuple(float(v) for v in self.vector))
        if not all(math.isfinite(v) for v in self.vector):
            raise DataError(f"feature {self.example_id!r}: non-finite entry")

    def to_dict(self) -> dict[str, Any]:
        return {"example_id": self.example_id, "vector": list(self.vector)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> HiddenFeature:
        return cls(example_id=str(d["example_id"]), vector=tuple(d["vector"]))


@dataclass(frozen=True)
class UncertaintyScore:
    """A score where higher means the model knows less."""

    method: str
    value: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise DataError(f"{self.method}: non-finite score {self.value}")

    def to_dict(self) -> dict[str, Any]:
        return {"method": self.method, "value": self.value}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> UncertaintyScore:
        return cls(method=d["method"], value=float(d["value"]))


@dataclass(frozen=True)
class RunRecord:
    example_id: str
    strategy: Strategy
    decision: int
    answer: str
    correct_in_acc: bool
    correct_em: bool
    f1: float
    lm_calls: int
    retrieval_calls: int
    scores: dict[str, float] = field(default_factory=dict)
    flags: tuple[str, ...] = ()
    error: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "flags", tuple(self.flags))

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["scores"] = dict(sorted(self.scores.items()))
        d["flags"] = list(self.flags)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunRecord:
        return cls(
            example_id=str(d["example_id"]),
            strategy=d["strategy"],
            decision=int(d["decision"]),
            answer=d["answer"],
            correct_in_acc=bool(d["correct_in_acc"]),
            correct_em=bool(d["correct_em"]),
            f1=float(d["f1"]),
            lm_calls=int(d["lm_calls"]),
            retrieval_calls=int(d["retrieval_calls"]),
            scores={k: float(v) for k, v in d.get("scores", {}).items()},
            flags=tuple(d.get("flags", ())),
            error=d.get("error"),
        )


def validate_trace(trace: GenerationTrace) -> list[str]:
    """Return the list of invariants ``trace`` violates (empty when valid)."""
    problems: list[str] = []
    for i, step in enumerate(trace.steps):
        lps = [lp for _, lp in step.alternatives]
        if step.chosen_logprob > 0 or any(lp > 0 for lp in lps):
            problems.append(f"step {i}: logprob ≤ 0 violated")
        if not step.alternatives:
            problems.append(f"step {i}: no alternatives")
            continue
        if any(a < b for a, b in zip(lps, lps[1:])):
            problems.append(f"step {i}: alternatives not sorted by descending logprob")
        if step.token_text not in {t for t, _ in step.alternatives}:
            problems.append(f"step {i}: chosen token missing from alternatives")
        if not 0.0 <= step.tail_mass <= 1.0:
            problems.append(f"step {i}: tail_mass outside [0, 1]")
        mass = math.fsum(math.exp(lp) for lp in lps) + step.tail_mass
        if abs(mass - 1.0) > MASS_TOL:
            problems.append(f"step {i}: mass conservation violated (total {mass:.6g})")
    total = math.fsum(s.chosen_logprob for s in trace.steps)
    if abs(total - trace.total_logprob) > 1e-9:
        problems.append("total_logprob differs from sum of chosen logprobs")
    if trace.total_logprob > 0:
        problems.append("total_logprob ≤ 0 violated")
    if trace.text != "".join(s.token_text for s in trace.steps):
        problems.append("text differs from concatenated token texts")
    return problems


def trace_token_nll(trace: GenerationTrace) -> list[float]:
    if not trace.steps:
        raise DataError("empty generation")
    return [-s.chosen_logprob for s in trace.steps]


# -- JSONL io ---------------------------------------------------------------


def dumps(obj: Any) -> str:
    """Canonical JSON used for cache entries and output files."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc


def write_jsonl(path: str | Path, rows: Iterable[dict[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dumps(row) + "\n")


def load_dataset(path: str | Path) -> list[QAExample]:
    examples = [QAExample.from_dict(d) for d in read_jsonl(path)]
    seen: set[tuple[str, str]] = set()
    for ex in examples:
        key = (ex.dataset, ex.id)
        if key in seen:
            raise DataError(f"duplicate example id {ex.id!r} in dataset {ex.dataset!r}")
        seen.add(key)
    return examples


def load_corpus(path: str | Path) -> list[Document]:
    return [Document.from_dict(d) for d in read_jsonl(path)]


def load_features(path: str | Path) -> dict[str, tuple[float, ...]]:
    out: dict[str, tuple[float, ...]] = {}
    dim = None
    for d in read_jsonl(path):
        feat = HiddenFeature.from_dict(d)
        if dim is None:
            dim = len(feat.vector)
        elif len(feat.vector) != dim:
            raise DataError(
                f"{path}: feature {feat.example_id!r} has dimension {len(feat.vector)}, expected {dim}"
            )
        out[feat.example_id] = feat.vector
    return out


def validate_record(record: RunRecord) -> list[str]:
    """Check the LM/retrieval counter algebra for a record's strategy."""
    problems: list[str] = []
    extra = 1 if "force-scored" in record.flags else 0
    if record.decision not in (0, 1):
        problems.append("decision not binary")
    if record.strategy == "never" and record.retrieval_calls != 0:
        problems.append("never strategy made retrieval calls")
    if record.strategy == "always" and record.retrieval_calls != 1:
        problems.append("always strategy must make exactly one retrieval call")
    if record.strategy in ("adaptive", "ideal"):
        if record.retrieval_calls != record.decision:
            problems.append("retrieval_calls differs from decision")
        if record.lm_calls != 1 + record.decision + extra:
            problems.append("lm_calls differs from 1 + decision")
    if not 0.0 <= record.f1 <= 1.0:
        problems.append("f1 outside [0, 1]")
    return problems
