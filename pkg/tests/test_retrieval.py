import httpx
import numpy as np
import pytest

from ragate.retrieval import (
    Bm25Index,
    RemoteRetriever,
    RetrievalProtocolError,
    RetrievalTransportError,
    build_index,
    remote_search,
    search,
    tokenize,
)
from ragate.types import DataError, Document

from oracles import bm25_brute_force as brute_force

WORDS = ["apple", "river", "stone", "cloud", "maple", "amber", "delta", "north", "ember", "quill"]


def random_corpus(rng, n_docs):
    return [
        Document(f"doc{i:03d}", str(rng.choice(WORDS)), " ".join(rng.choice(WORDS, int(rng.integers(1, 15)))))
        for i in range(n_docs)
    ]


def test_matches_brute_force_on_random_corpora():
    rng = np.random.default_rng(11)
    for _ in range(50):
        docs = random_corpus(rng, int(rng.integers(1, 101)))
        index = build_index(docs)
        for _ in range(5):
            query = " ".join(rng.choice(WORDS + ["absent"], int(rng.integers(1, 4))))
            k = int(rng.integers(1, 12))
            got = [(h.doc_id, h.score) for h in search(index, query, k)]
            assert got == brute_force(docs, query, k)


def test_index_structure():
    docs = [Document("a", "", "x y"), Document("b", "", "x z w v"), Document("c", "", "q r s t u p")]
    index = Bm25Index.build(docs)
    assert index.avgdl == 4
    assert len(index.postings["x"]) == 2
    assert all(d in index.doc_lengths for plist in index.postings.values() for d, _ in plist)


def test_build_errors():
    with pytest.raises(DataError):
        Bm25Index.build([])
    with pytest.raises(DataError, match="dup"):
        Bm25Index.build([Document("dup", "", "a"), Document("dup", "", "b")])


def test_search_examples():
    docs = [Document("A", "", "unique words here"), Document("B", "", "other words here")]
    index = Bm25Index.build(docs)
    assert index.search("unique", 5)[0].doc_id == "A"
    single = Bm25Index.build([Document("only", "", "hello world")])
    assert len(single.search("hello", 5)) == 1
    assert index.search("!!! ???", 3) == []
    with pytest.raises(ValueError):
        index.search("words", 0)


def test_shorter_document_scores_higher():
    docs = [Document("short", "", "term a"), Document("long", "", "term a b c d e f g"), Document("z", "", "x")]
    hits = Bm25Index.build(docs, b=0.75).search("term", 2)
    assert [h.doc_id for h in hits] == ["short", "long"]
    assert hits[0].score > hits[1].score


def test_ties_broken_by_doc_id_and_ranks():
    docs = [Document("b", "", "same text"), Document("a", "", "same text")]
    hits = Bm25Index.build(docs).search("same", 2)
    assert [h.doc_id for h in hits] == ["a", "b"] and [h.rank for h in hits] == [1, 2]


def test_tokenizer():
    assert tokenize("Hello, World!  Ünïcode_x") == ["hello", "world", "ünïcode", "x"]


def test_adding_irrelevant_document_matches_brute_force():
    rng = np.random.default_rng(2)
    docs = random_corpus(rng, 30)
    extended = docs + [Document("zzz", "", "nothing relevant at all")]
    for query in ("apple river", "stone"):
        got = [(h.doc_id, h.score) for h in Bm25Index.build(extended).search(query, 10)]
        assert got == brute_force(extended, query, 10)


def test_save_load_round_trip(tmp_path):
    docs = random_corpus(np.random.default_rng(0), 20)
    index = Bm25Index.build(docs)
    index.save(tmp_path / "i.json")
    again = Bm25Index.load(tmp_path / "i.json")
    assert again.search("apple maple", 5) == index.search("apple maple", 5)


def _server(responses):
    state = {"n": 0}

    def handler(request):
        assert request.url.path == "/search"
        r = responses[min(state["n"], len(responses) - 1)]
        state["n"] += 1
        if isinstance(r, Exception):
            raise r
        return r

    return httpx.MockTransport(handler), state


def test_remote_passthrough_and_documents():
    hits = {"hits": [{"doc_id": "x", "score": 3.0}, {"doc_id": "y", "score": 2.0},
                     {"doc_id": "z", "score": 1.0, "title": "Z", "body": "zed"}]}
    transport, _ = _server([httpx.Response(200, json=hits)])
    r = RemoteRetriever("http://search.test", [Document("x", "X", "ex"), Document("y", "Y", "why")],
                        transport=transport)
    got = remote_search(r, "q", 3)
    assert [h.rank for h in got] == [1, 2, 3]
    assert [d.body for d in r.documents(got)] == ["ex", "why", "zed"]
    with pytest.raises(ValueError):
        r.search("q", 0)


def test_remote_retry_counts_one_call():
    transport, state = _server([httpx.ReadTimeout("slow"), httpx.Response(200, json={"hits": []})])
    r = RemoteRetriever("http://search.test", transport=transport, backoff=0.0)
    assert r.search("q", 3) == []
    assert r.calls == 1 and state["n"] == 2


def test_remote_errors():
    transport, _ = _server([httpx.Response(200, json={"nope": 1})])
    with pytest.raises(RetrievalProtocolError):
        RemoteRetriever("http://s.test", transport=transport).search("q", 2)
    transport, _ = _server([httpx.Response(503)])
    with pytest.raises(RetrievalTransportError):
        RemoteRetriever("http://s.test", transport=transport, backoff=0.0, max_attempts=2).search("q", 2)
