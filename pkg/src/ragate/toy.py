"""Bundled offline fixture: synthetic entities, a BM25 corpus and a mock LLM.

Every question asks for one attribute of one made-up entity. The entity's
gold document states the answer, distractor documents describe other
entities. A fixed fraction of questions is unknown to the mock, which then
answers with a wrong entity name and flat token distributions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .llm.mock import MockFact, MockLLMSpec
from .types import Document, QAExample, write_jsonl

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "qu", "th"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]
_CODAS = ["", "n", "r", "s", "l", "x", "nd"]
_RELATIONS = [
    ("capital", "What is the capital of {e}?", "The capital of {e} is {a}."),
    ("founder", "Who founded {e}?", "{e} was founded by {a}."),
    ("river", "Which river flows through {e}?", "The river {a} flows through {e}."),
    ("mountain", "What is the highest peak in {e}?", "The highest peak in {e} is {a}."),
]
_FILLER = [
    "It is known for its markets and old harbour.",
    "Travellers describe long winters and mild summers.",
    "Local records mention a festival held every spring.",
    "Its economy relies on farming, weaving and trade.",
]


def _name(rng: np.random.Generator, used: set[str]) -> str:
    while True:
        parts = [
            _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] + _CODAS[rng.integers(len(_CODAS))]
            for _ in range(int(rng.integers(2, 4)))
        ]
        name = "".join(parts).capitalize()
        if name not in used and len(name) > 3:
            used.add(name)
            return name


@dataclass
class ToyFixture:
    datasets: dict[str, list[QAExample]]
    corpus: list[Document]
    spec: MockLLMSpec
    features: dict[str, tuple[float, ...]]
    background: dict[str, tuple[float, ...]]
    unknown: set[str]


def make_toy(
    seed: int = 0,
    n_questions: int = 100,
    n_docs: int = 200,
    unknown_fraction: float = 0.3,
    datasets: tuple[str, ...] = ("toy",),
    feature_dim: int = 8,
) -> ToyFixture:
    """Build the fixture. Each dataset gets ``n_questions`` questions with
    exactly ``round(unknown_fraction * n_questions)`` unknown to the mock."""
    rng = np.random.default_rng(seed)
    total = n_questions * len(datasets)
    n_docs = max(n_docs, total)
    used: set[str] = set()
    entities = [_name(rng, used) for _ in range(n_docs)]
    answers = [_name(rng, used) for _ in range(n_docs)]
    decoys = [_name(rng, used) for _ in range(40)]
    relations = [_RELATIONS[i % len(_RELATIONS)] for i in range(n_docs)]

    corpus = []
    for i, (ent, ans, rel) in enumerate(zip(entities, answers, relations)):
        body = rel[2].format(e=ent, a=ans) + " " + _FILLER[i % len(_FILLER)]
        corpus.append(Document(f"d{i:04d}", ent, body))

    n_unknown = int(round(unknown_fraction * n_questions))
    out: dict[str, list[QAExample]] = {}
    knowledge: dict[str, MockFact] = {}
    unknown: set[str] = set()
    features: dict[str, tuple[float, ...]] = {}
    known_center = np.zeros(feature_dim)
    unknown_center = np.full(feature_dim, 1.5)
    for d, ds in enumerate(datasets):
        idx = range(d * n_questions, (d + 1) * n_questions)
        flags = np.zeros(n_questions, dtype=bool)
        flags[rng.permutation(n_questions)[:n_unknown]] = True
        rows = []
        for j, i in enumerate(idx):
            qid = f"{ds}-{j:03d}"
            question = relations[i][1].format(e=entities[i])
            ex = QAExample(qid, question, (answers[i],), ds)
            rows.append(ex)
            if flags[j]:
                wrong = rng.choice(len(decoys), size=3, replace=False)
                fact = MockFact(
                    question,
                    False,
                    decoys[wrong[0]],
                    answers[i],
                    ((decoys[wrong[1]], 0.8), (decoys[wrong[2]], 0.6)),
                )
                unknown.add(qid)
                center = unknown_center
            else:
                fact = MockFact(question, True, answers[i], answers[i])
                center = known_center
            knowledge[qid] = fact
            features[qid] = tuple(float(v) for v in center + rng.standard_normal(feature_dim))
        out[ds] = rows
    background = {
        f"bg-{i:04d}": tuple(float(v) for v in 0.75 + 2.0 * rng.standard_normal(feature_dim)) for i in range(200)
    }
    spec = MockLLMSpec(vocabulary=tuple(answers + decoys), knowledge=knowledge, seed=seed)
    return ToyFixture(out, corpus, spec, features, background, unknown)


def split(examples: list[QAExample], unknown: set[str]) -> tuple[list[QAExample], list[QAExample]]:
    """Alternate assignment within the known and unknown groups so both
    halves keep the dataset's unknown fraction."""
    train, test = [], []
    for group in ([e for e in examples if e.id not in unknown], [e for e in examples if e.id in unknown]):
        for i, ex in enumerate(group):
            (train if i % 2 == 0 else test).append(ex)
    key = {e.id: i for i, e in enumerate(examples)}
    return sorted(train, key=lambda e: key[e.id]), sorted(test, key=lambda e: key[e.id])


def write_toy(out_dir: str | Path, seed: int = 0, n_datasets: int = 1) -> Path:
    """Write the fixture files and an experiment config; return the config path."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    names = tuple("toy" if n_datasets == 1 else f"toy{i}" for i in range(n_datasets))
    fx = make_toy(seed, datasets=names)
    write_jsonl(root / "corpus.jsonl", (d.to_dict() for d in fx.corpus))
    fx.spec.save(root / "mock_spec.json")
    write_jsonl(root / "features.jsonl", ({"example_id": k, "vector": list(v)} for k, v in sorted(fx.features.items())))
    write_jsonl(root / "background.jsonl", ({"example_id": k, "vector": list(v)} for k, v in sorted(fx.background.items())))
    entries = []
    for ds, examples in fx.datasets.items():
        write_jsonl(root / f"{ds}.jsonl", (e.to_dict() for e in examples))
        train, test = split(examples, fx.unknown)
        write_jsonl(root / f"{ds}.train.jsonl", (e.to_dict() for e in train))
        write_jsonl(root / f"{ds}.test.jsonl", (e.to_dict() for e in test))
        entries.append({"name": ds, "train": f"{ds}.train.jsonl", "test": f"{ds}.test.jsonl"})
    config = {
        "datasets": entries,
        "retriever": {"corpus": "corpus.jsonl"},
        "llm": {"mock_spec": "mock_spec.json"},
        "features": "features.jsonl",
        "background_features": "background.jsonl",
        "estimators": ["max_entropy"],
        "deciders": ["threshold"],
        "selection_mode": "holdout",
        "sampling_n": 5,
        "k": 5,
        "seed": seed,
        "rademacher_draws": 20,
        "rademacher_kinds": ["constant", "threshold", "logreg"],
        "output_dir": "out",
    }
    path = root / "config.json"
    path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", "utf-8")
    return path

