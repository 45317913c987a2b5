"""BM25 retrieval: an embedded inverted index and a client for a remote search service."""

from __future__ import annotations

import json
import math
import re
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import httpx

from .types import DataError, Document

NON_ALNUM = re.compile(r"[^\w\s]|_", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, replace non-alphanumerics with spaces, split on whitespace."""
    return NON_ALNUM.sub(" ", text.lower()).split()


@dataclass(frozen=True)
class SearchHit:
    doc_id: str
    score: float
    rank: int


def rank_hits(scored: Iterable[tuple[str, float]], k: int) -> list[SearchHit]:
    ordered = sorted(scored, key=lambda kv: (-kv[1], kv[0]))[:k]
    return [SearchHit(doc_id, score, i) for i, (doc_id, score) in enumerate(ordered, 1)]


class Retriever(Protocol):
    def search(self, query: str, k: int) -> list[SearchHit]: ...

    def documents(self, hits: list[SearchHit]) -> list[Document]: ...


class Bm25Index:
    """Okapi BM25 over title + body, immutable after ``build``."""

    def __init__(
        self,
        postings: dict[str, list[tuple[str, int]]],
        doc_lengths: dict[str, int],
        docs: dict[str, Document],
        k1: float = 1.2,
        b: float = 0.75,
    ):
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.docs = docs
        self.k1 = k1
        self.b = b
        self.n_docs = len(doc_lengths)
        self.avgdl = sum(doc_lengths.values()) / self.n_docs

    @classmethod
    def build(cls, corpus: Iterable[Document], k1: float = 1.2, b: float = 0.75) -> Bm25Index:
        postings: dict[str, list[tuple[str, int]]] = {}
        lengths: dict[str, int] = {}
        docs: dict[str, Document] = {}
        for doc in corpus:
            if doc.doc_id in docs:
                raise DataError(f"duplicate doc_id {doc.doc_id!r}")
            tokens = tokenize(f"{doc.title} {doc.body}")
            docs[doc.doc_id] = doc
            lengths[doc.doc_id] = len(tokens)
            for term, tf in Counter(tokens).items():
                postings.setdefault(term, []).append((doc.doc_id, tf))
        if not docs:
            raise DataError("cannot index an empty corpus")
        return cls(postings, lengths, docs, k1, b)

    def idf(self, term: str) -> float:
        n_t = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.n_docs - n_t + 0.5) / (n_t + 0.5))

    def search(self, query: str, k: int = 5) -> list[SearchHit]:
        if k < 1:
            raise ValueError("k must be >= 1")
        scores: dict[str, float] = {}
        k1, b = self.k1, self.b
        for term in tokenize(query):
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for doc_id, tf in plist:
                norm = k1 * (1.0 - b + b * self.doc_lengths[doc_id] / self.avgdl)
                scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (k1 + 1.0) / (tf + norm)
        return rank_hits(scores.items(), k)

    def documents(self, hits: list[SearchHit]) -> list[Document]:
        return [self.docs[h.doc_id] for h in hits]

    def save(self, path: str | Path) -> None:
        payload = {
            "k1": self.k1,
            "b": self.b,
            "docs": [d.to_dict() for d in self.docs.values()],
        }
        Path(path).write_text(json.dumps(payload, ensure_ascii=False), "utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Bm25Index:
        payload = json.loads(Path(path).read_text("utf-8"))
        docs = [Document.from_dict(d) for d in payload["docs"]]
        return cls.build(docs, payload["k1"], payload["b"])


def build_index(corpus: Iterable[Document], k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    return Bm25Index.build(corpus, k1, b)


def search(index: Bm25Index, query: str, k: int = 5) -> list[SearchHit]:
    return index.search(query, k)


class RetrievalTransportError(RuntimeError):
    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class RetrievalProtocolError(RuntimeError):
    pass


class RemoteRetriever:
    """Client for ``GET /search?q=..&k=..`` returning ``{"hits": [{"doc_id", "score"}]}``.

    ``calls`` counts logical searches; retries inside one search do not add to it.
    Document bodies come from ``corpus`` when given, else from the hit payload.
    """

    def __init__(
        self,
        endpoint: str,
        corpus: Iterable[Document] | None = None,
        timeout: float = 10.0,
        max_attempts: int = 3,
        backoff: float = 0.2,
        transport: httpx.BaseTransport | None = None,
    ):
        self.client = httpx.Client(base_url=endpoint.rstrip("/"), timeout=timeout, transport=transport)
        self.docs = {d.doc_id: d for d in corpus} if corpus is not None else {}
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.calls = 0
        self._payload: dict[str, dict] = {}

    def search(self, query: str, k: int = 5) -> list[SearchHit]:
        if k < 1:
            raise ValueError("k must be >= 1")
        self.calls += 1
        last = ""
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self.client.get("/search", params={"q": query, "k": k})
            except httpx.TransportError as exc:
                last = f"transport failure: {exc}"
            else:
                if resp.status_code == 200:
                    return self._parse(resp, k)
                if resp.status_code < 500:
                    raise RetrievalProtocolError(f"search returned {resp.status_code}")
                last = f"search returned {resp.status_code}"
            if attempt < self.max_attempts:
                time.sleep(self.backoff * 2 ** (attempt - 1))
        raise RetrievalTransportError(last, self.max_attempts)

    def _parse(self, resp: httpx.Response, k: int) -> list[SearchHit]:
        try:
            hits = resp.json()["hits"]
            scored = [(str(h["doc_id"]), float(h["score"])) for h in hits]
        except (ValueError, KeyError, TypeError) as exc:
            raise RetrievalProtocolError(f"malformed search response: {exc}") from exc
        for h in hits:
            if "body" in h:
                self._payload[str(h["doc_id"])] = h
        return rank_hits(scored, k)

    def documents(self, hits: list[SearchHit]) -> list[Document]:
        out = []
        for h in hits:
            if h.doc_id in self.docs:
                out.append(self.docs[h.doc_id])
            elif h.doc_id in self._payload:
                p = self._payload[h.doc_id]
                out.append(Document(h.doc_id, p.get("title", ""), p["body"]))
        return out


def remote_search(retriever: RemoteRetriever, query: str, k: int) -> list[SearchHit]:
    return retriever.search(query, k)
