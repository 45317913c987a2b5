"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import dataclasses
import functools
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.special import logsumexp

from ragate import cli
from ragate.analysis import friedman, nemenyi, rademacher_estimate, sharpness
from ragate.analysis.complexity import logreg_hessian
from ragate.deciders import DecisionTable, fit_decider, fit_logreg, fit_threshold
from ragate.estimators import consistency as cons
from ragate.estimators import logit
from ragate.estimators.catalog import manifest_hash
from ragate.llm import LLMGateway, MockLLM
from ragate.llm.gateway import DecodeConfig
from ragate.llm.mock import MockFact, MockLLMSpec
from ragate.metrics import efficiency, exact_match, f1, in_accuracy, over_under_confidence, qa_metrics
from ragate.pipeline import Pipeline, PipelineConfig, build_decision_table
from ragate.prompts import qa_prompt
from ragate.retrieval import Bm25Index, build_index, search
from ragate.toy import make_toy, split, write_toy
from ragate.types import Document

from oracles import (
    average_ranks,
    bm25_brute_force,
    friedman_permutation_p,
    friedman_sum_form,
    union_find_components,
)

FIXTURES = Path(__file__).parent / "fixtures"
RESULTS: list[str] = []


def criterion(number, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                line = f"FAIL criterion {number:>2}: {title}"
                RESULTS.append(line)
                print(line)
                raise
            line = f"PASS criterion {number:>2}: {title}"
            RESULTS.append(line)
            print(line)

        return run

    return wrap


# 1 -----------------------------------------------------------------------------------


def random_mock_traces(count, seed):
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(40)]
    traces = []
    while len(traces) < count:
        vocab = tuple(rng.choice(words, size=int(rng.integers(3, 16)), replace=False))
        answer = " ".join(rng.choice(vocab, size=int(rng.integers(1, 5))))
        question = f"question {len(traces)}?"
        spec = MockLLMSpec(
            vocabulary=vocab,
            knowledge={"q": MockFact(question, bool(rng.integers(0, 2)), answer, answer)},
            sharpness=float(rng.uniform(0.5, 10)),
            unknown_sharpness=float(rng.uniform(0.0, 2)),
            noise=float(rng.uniform(0, 2)),
            seed=int(rng.integers(0, 1000)),
        )
        cfg = DecodeConfig(top_k_logprobs=64)
        traces.append(MockLLM(spec).generate(qa_prompt(question), cfg)[0])
    return traces


@criterion(1, "estimator oracle suite on 200 full-distribution mock traces")
def test_criterion_01_estimator_oracles():
    traces = random_mock_traces(200, seed=0)
    start = time.perf_counter()
    for tr in traces:
        assert all(s.tail_mass == 0.0 for s in tr.steps)
        lps = [np.array([lp for _, lp in s.alternatives]) for s in tr.steps]
        ent = [float(-(np.exp(lp) * lp).sum()) for lp in lps]
        ppl = math.exp(-np.mean([s.chosen_logprob for s in tr.steps]))
        # alpha = 2: D = log(V sum p^2); FR: Bhattacharyya coefficient against uniform
        renyi = -np.mean([math.log(len(lp)) + float(logsumexp(2 * lp)) for lp in lps])
        fr = 1 - np.mean([2 / math.pi * math.acos(min(1.0, math.exp(float(logsumexp(lp / 2)) - 0.5 * math.log(len(lp))))) for lp in lps])
        assert logit.entropy_aggregate(tr, "max") == pytest.approx(max(ent), abs=1e-9)
        assert logit.entropy_aggregate(tr, "mean") == pytest.approx(np.mean(ent), abs=1e-9)
        assert logit.perplexity(tr) == pytest.approx(ppl, abs=1e-9, rel=1e-12)
        assert logit.renyi_negentropy(tr) == pytest.approx(renyi, abs=1e-9)
        assert logit.fisher_rao(tr) == pytest.approx(fr, abs=1e-9)
    assert time.perf_counter() - start < 10.0


# 2 -----------------------------------------------------------------------------------


def random_binary_similarity(rng, n):
    """0/1 similarity from exact answer matching over random sampled answers."""
    answers = [str(a) for a in rng.integers(0, int(rng.integers(1, n + 1)), size=n)]
    return np.array([[1.0 if a == b else 0.0 for b in answers] for a in answers])


@criterion(2, "spectral identity: eigenvalue score equals component count; K3 case")
def test_criterion_02_spectral_identity():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = random_binary_similarity(rng, int(rng.integers(1, 9)))
        score = cons.eig_val_laplacian_score(cons.laplacian_spectrum(m))
        assert score == union_find_components(m > 0)
    assert cons.eig_val_laplacian_score(cons.laplacian_spectrum(np.ones((3, 3)))) == 1.0
    k3 = cons.laplacian_spectrum(np.ones((3, 3)) - np.eye(3))
    assert k3.eigenvalues.tolist() == pytest.approx([0.0, 1.5, 1.5], abs=1e-12)
    assert cons.eig_val_laplacian_score(k3) == 1.0


# 3 -----------------------------------------------------------------------------------


@criterion(3, "QA metric fixtures exact; In-Accuracy >= EM on 10,000 random pairs")
def test_criterion_03_metric_fixtures():
    cases = json.loads((FIXTURES / "qa_metrics.json").read_text())
    assert len(cases) == 12
    for c in cases:
        assert int(exact_match(c["pred"], c["golds"])) == c["em"], c
        assert int(in_accuracy(c["pred"], c["golds"])) == c["in_acc"], c
        assert f1(c["pred"], c["golds"]) == pytest.approx(c["f1"], abs=1e-12), c
    rng = np.random.default_rng(0)
    pieces = ["paris", "Paris", "the", "a", "an", "city", "of", "rome", "!", ",", " ", "new", "york", "x"]
    for _ in range(10_000):
        pred = "".join(rng.choice(pieces, size=int(rng.integers(0, 6))))
        gold = "".join(rng.choice(pieces, size=int(rng.integers(0, 4))))
        assert in_accuracy(pred, [gold]) >= exact_match(pred, [gold])


# 4 -----------------------------------------------------------------------------------


@criterion(4, "over/under-confidence equal direct enumeration on 1,000 vectors; Ideal gives (0, 0)")
def test_criterion_04_confidence_sums():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        d, y = rng.integers(0, 2, n).tolist(), rng.integers(0, 2, n).tolist()
        over_num = sum((1 - (di == yi)) * (1 - di) for di, yi in zip(d, y))
        over_den = sum(1 - di for di in d)
        under_num = sum((1 - (di == yi)) * di for di, yi in zip(d, y))
        under_den = sum(d)
        got = over_under_confidence(d, y)
        assert got.over == (over_num / over_den if over_den else 0.0)
        assert got.under == (under_num / under_den if under_den else 0.0)
        assert tuple(over_under_confidence(y, y)) == (0.0, 0.0)


# 5 -----------------------------------------------------------------------------------


@criterion(5, "pipeline accounting: RC = 0.30 and LMC = 1.30 exactly on the calibrated mock")
def test_criterion_05_pipeline_accounting():
    fx = make_toy(0, n_questions=100, unknown_fraction=0.3)
    exs = fx.datasets["toy"]
    assert len(exs) == 100 and len(fx.unknown) == 30

    def pipe(**kw):
        return Pipeline(LLMGateway(MockLLM(fx.spec)), Bm25Index.build(fx.corpus), PipelineConfig(**kw))

    model = fit_decider("threshold", build_decision_table(pipe(), exs, "max_entropy"))
    records = pipe(decider=model).run(exs, "adaptive")
    assert sum(r.retrieval_calls for r in records) == 30
    assert sum(r.lm_calls for r in records) == 130
    assert efficiency(records) == (1.3, 0.3)
    assert efficiency(records)[0] <= 2 and efficiency(records)[1] < 1


# 6 -----------------------------------------------------------------------------------


@criterion(6, "oracle dominance over Never/Always and adaptive <= Ideal on 20 seeds")
def test_criterion_06_oracle_dominance():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        fx = make_toy(seed, n_questions=60, n_docs=120, unknown_fraction=float(rng.uniform(0.1, 0.7)))
        spec = dataclasses.replace(
            fx.spec, noise=float(rng.uniform(0.3, 3.0)), unknown_sharpness=float(rng.uniform(0.5, 6.0))
        )
        exs = fx.datasets["toy"]
        train, _ = split(exs, fx.unknown)

        def pipe(**kw):
            return Pipeline(LLMGateway(MockLLM(spec)), Bm25Index.build(fx.corpus), PipelineConfig(**kw))

        method = ["max_entropy", "perplexity", "mean_entropy"][seed % 3]
        model = fit_decider("threshold", build_decision_table(pipe(estimators=[method]), train, method))
        model.manifest_hash = manifest_hash([method])
        rows = pipe().build_decision_rows(exs, [])
        labels = {r["example_id"]: r["y"] for r in rows}
        base = pipe()
        acc = {s: qa_metrics(base.run(exs, s, labels))["in_acc"] for s in ("never", "always", "ideal")}
        adaptive = qa_metrics(pipe(estimators=[method], decider=model).run(exs, "adaptive"))["in_acc"]
        assert acc["ideal"] >= max(acc["never"], acc["always"])
        assert adaptive <= acc["ideal"]


# 7 -----------------------------------------------------------------------------------


@criterion(7, "threshold invariance under exp() in midpoints mode on 50 tables")
def test_criterion_07_threshold_invariance():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 80))
        s = rng.normal(scale=2.0, size=n)
        if rng.random() < 0.3:
            s = np.round(s, 1)
        norag, rag = rng.random(n) < rng.random(), rng.random(n) < rng.random()
        test_s = rng.normal(scale=2.0, size=40)
        a = fit_threshold(DecisionTable.from_scores(s, norag, rag), "midpoints")
        b = fit_threshold(DecisionTable.from_scores(np.exp(s), norag, rag), "midpoints")
        assert (a.predict(s) == b.predict(np.exp(s))).all()
        assert (a.predict(test_s) == b.predict(np.exp(test_s))).all()


# 8 -----------------------------------------------------------------------------------


@criterion(8, "Friedman statistic and p-value cross-checks; Nemenyi self-pairs 1.00")
def test_criterion_08_statistics():
    rng = np.random.default_rng(0)
    for i in range(100):
        n, k = int(rng.integers(2, 9)), int(rng.integers(2, 7))
        m = rng.normal(size=(n, k)) if i % 2 else rng.integers(0, 3, size=(n, k)).astype(float)
        ranks = [average_ranks(row) for row in m]
        res = friedman(m, p_method="chi2")
        assert res.statistic == pytest.approx(friedman_sum_form(ranks), abs=1e-9)
    worst = 0.0
    for i in range(100):
        m = rng.normal(size=(4, 3)) if i % 2 else rng.integers(0, 3, size=(4, 3)).astype(float)
        res = friedman(m)
        ranks = [average_ranks(row) for row in m]
        oracle = friedman_permutation_p(ranks, res.statistic, 10_000, rng) if res.statistic > 0 else 1.0
        worst = max(worst, abs(res.p_value - oracle))
    assert worst <= 0.02, worst
    for k in range(2, 11):
        res = nemenyi(rng.uniform(1, k, size=k), n=5)
        assert all(res.brackets[i][i] == "1.00" for i in range(k))


# 9 -----------------------------------------------------------------------------------


@criterion(9, "sharpness vs dense solver, scalar case, Rademacher scaling and class ordering")
def test_criterion_09_complexity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(size=(int(rng.integers(30, 300)), 5))
        y = (x @ rng.normal(size=5) + rng.normal(size=len(x))) > 0
        table = DecisionTable([str(i) for i in range(len(y))], x, ~y, y)
        model = fit_logreg(table)
        lam = sharpness(model, table).estimate
        dense = float(np.linalg.eigvalsh(logreg_hessian(model, x)).max())
        assert abs(lam - dense) <= 1e-6 * dense
    ones = DecisionTable([str(i) for i in range(10)], np.ones((10, 1)), [True, False] * 5, [False, True] * 5)
    scalar = fit_logreg(ones, ridge=0.0, fit_intercept=False, standardize=False)
    assert sharpness(scalar, ones).estimate == 0.25

    small = rademacher_estimate(rng.normal(size=400), "logreg", draws=100, seed=1)
    large = rademacher_estimate(rng.normal(size=1600), "logreg", draws=100, seed=1)
    assert 2 * 0.8 <= small.estimate / large.estimate <= 2 * 1.2
    x = rng.normal(size=100)
    tree = rademacher_estimate(x, "tree", draws=100, seed=2)
    thr = rademacher_estimate(x, "threshold", draws=100, seed=2)
    assert tree.estimate >= thr.estimate - 2 * math.hypot(tree.stderr, thr.stderr)


# 10 ----------------------------------------------------------------------------------


@criterion(10, "BM25 index equals brute-force scoring on 50 corpora; length normalisation")
def test_criterion_10_bm25():
    rng = np.random.default_rng(0)
    words = ["apple", "river", "stone", "cloud", "maple", "amber", "delta", "north", "ember", "quill"]
    for _ in range(50):
        docs = [
            Document(f"d{i:03d}", str(rng.choice(words)), " ".join(rng.choice(words, int(rng.integers(1, 20)))))
            for i in range(int(rng.integers(1, 101)))
        ]
        index = build_index(docs)
        for _ in range(5):
            query = " ".join(rng.choice(words + ["absent"], int(rng.integers(1, 4))))
            k = int(rng.integers(1, 15))
            assert [(h.doc_id, h.score) for h in search(index, query, k)] == bm25_brute_force(docs, query, k)
    pair = [Document("short", "", "term filler"), Document("long", "", "term filler filler filler filler filler")]
    hits = Bm25Index.build(pair).search("term", 2)
    assert [h.doc_id for h in hits] == ["short", "long"] and hits[0].score > hits[1].score


# 11 ----------------------------------------------------------------------------------


@criterion(11, "offline toy run under 60 s with byte-identical reports run over run")
def test_criterion_11_end_to_end(tmp_path, monkeypatch):
    monkeypatch.delenv("RAGATE_CACHE_DIR", raising=False)
    trees = []
    for name in ("first", "second"):
        cfg = write_toy(tmp_path / name)
        spec = json.loads(cfg.read_text())
        assert spec["estimators"] == ["max_entropy"] and spec["deciders"] == ["threshold"]
        start = time.perf_counter()
        assert cli.main(["all", "--config", str(cfg)]) == 0
        assert time.perf_counter() - start < 60.0
        out = cfg.parent / "out"
        trees.append({str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    corpus = (tmp_path / "first" / "corpus.jsonl").read_text().splitlines()
    assert len(corpus) == 200
    assert any(k.startswith("report/") for k in trees[0])
    assert trees[0] == trees[1]
