"""Pairwise answer similarity shared by the consistency estimators and SAR."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import httpx
import numpy as np

from ..retrieval import tokenize
from ..types import SampleSet


def lexical_token_f1(a: str, b: str) -> float:
    """F1 between the token multisets of ``a`` and ``b`` (1 when both are empty)."""
    ta, tb = tokenize(a), tokenize(b)
    if not ta and not tb:
        return 1.0
    if not ta or not tb:
        return 0.0
    overlap = sum((Counter(ta) & Counter(tb)).values())
    if overlap == 0:
        return 0.0
    p, r = overlap / len(ta), overlap / len(tb)
    return 2 * p * r / (p + r)


@dataclass
class SimilarityFn:
    """Symmetric similarity in [0, 1] with ``sim(a, a) == 1``.

    ``kind="external_scorer"`` POSTs ``{"a", "b"}`` to ``<endpoint>/sim`` and
    reads ``{"score": float}``; results are symmetrised and clipped.
    """

    kind: str = "lexical_token_f1"
    endpoint: str | None = None
    transport: httpx.BaseTransport | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("lexical_token_f1", "external_scorer"):
            raise ValueError(f"unknown similarity kind {self.kind!r}")
        if self.kind == "external_scorer" and not self.endpoint:
            raise ValueError("external scorer needs an endpoint")
        self._client = (
            httpx.Client(base_url=self.endpoint.rstrip("/"), transport=self.transport)
            if self.kind == "external_scorer"
            else None
        )
        self._memo: dict[tuple[str, str], float] = {}

    def _remote(self, a: str, b: str) -> float:
        resp = self._client.post("/sim", json={"a": a, "b": b})
        resp.raise_for_status()
        return float(resp.json()["score"])

    def __call__(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        if self.kind == "lexical_token_f1":
            return lexical_token_f1(a, b)
        key = (a, b) if a <= b else (b, a)
        if key not in self._memo:
            s = 0.5 * (self._remote(a, b) + self._remote(b, a))
            self._memo[key] = min(1.0, max(0.0, s))
        return self._memo[key]


LEXICAL = SimilarityFn()


def similarity_matrix(samples: SampleSet | Sequence[str], sim: SimilarityFn = LEXICAL) -> np.ndarray:
    texts = samples.texts if isinstance(samples, SampleSet) else list(samples)
    n = len(texts)
    m = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            m[i, j] = m[j, i] = sim(texts[i], texts[j])
    return m
