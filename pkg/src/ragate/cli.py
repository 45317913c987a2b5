"""``ragate`` command line: file-staged experiments from one JSON config.

Stages read only earlier stages' files under ``output_dir``::

    generate -> score -> fit -> run -> eval -> ood / complexity -> report

Exit codes: 0 success, 2 configuration error, 3 missing upstream stage
output, 4 endpoint failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__, analysis, prompts
from .deciders import (
    DECIDER_KINDS,
    DecisionTable,
    DeciderModel,
    fit_decider,
    fit_logreg,
    logreg_proba,
    mlp_proba,
    select_best,
    simulated_in_accuracy,
)
from .estimators.catalog import ALL_METHOD_IDS, HYBRID, EstimatorParams
from .estimators.density import fit_density, fit_rde
from .estimators.hybrid import hybrid_train_stats
from .llm import GatewayError, GenerationCache, LLMGateway, MockLLM, MockLLMSpec, OpenAIBackend
from .llm.gateway import SAMPLING
from .metrics import METRIC_LABELS, MetricsReport, metric_correlation, qa_metrics, self_knowledge_metrics
from .pipeline import Pipeline, PipelineConfig, decision_table
from .retrieval import Bm25Index, RemoteRetriever, RetrievalProtocolError, RetrievalTransportError
from .toy import write_toy
from .types import DataError, QAExample, RunRecord, load_corpus, load_dataset, load_features, read_jsonl, write_jsonl

log = logging.getLogger("ragate")

STAGE_VERSION = 1
QA_COLUMNS = ["in_acc", "em", "f1", "lmc", "rc"]
SK_COLUMNS = ["accuracy", "roc_auc", "spearman", "overconfidence", "underconfidence"]
DENSITY = {"md", "rmd", "rde"}


class ConfigError(Exception):
    exit_code = 2


class UpstreamMissing(Exception):
    exit_code = 3


# -- configuration ------------------------------------------------------------


@dataclass
class DatasetEntry:
    name: str
    train: Path
    test: Path


@dataclass
class ExperimentConfig:
    root: Path
    datasets: list[DatasetEntry]
    retriever: dict[str, Any]
    llm: dict[str, Any]
    estimators: list[str]
    deciders: list[str] = field(default_factory=lambda: ["threshold"])
    selection_mode: str = "holdout"
    threshold_mode: str = "log_grid_200"
    sampling_n: int = 5
    k: int = 5
    seed: int = 0
    output_dir: Path = Path("out")
    features: Path | None = None
    background_features: Path | None = None
    hybrid_manifest: list[str] = field(default_factory=list)
    rademacher_draws: int = 20
    rademacher_kinds: list[str] = field(default_factory=lambda: ["constant", "threshold", "logreg"])
    max_workers: int = 8

    @property
    def base_methods(self) -> list[str]:
        """Every estimator that must be scored, Hybrid inputs included."""
        out = [m for m in self.estimators if m != HYBRID]
        if HYBRID in self.estimators:
            out += [m for m in self.hybrid_manifest if m not in out]
        return out

    @property
    def cache_dir(self) -> Path:
        env = os.environ.get("RAGATE_CACHE_DIR")
        return Path(env) if env else self.output_dir / "cache"


def _set_path(cfg: dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = cfg
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r}: {key!r} is not an object")
    node[keys[-1]] = value


def apply_overrides(cfg: dict[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_path(cfg, key.strip(), value)
    return cfg


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text("utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    raw = apply_overrides(raw, overrides)
    root = path.resolve().parent

    def existing(p: str | None, what: str) -> Path | None:
        if p is None:
            return None
        full = (root / p).resolve()
        if not full.exists():
            raise ConfigError(f"{what} {full} does not exist")
        return full

    try:
        datasets = [
            DatasetEntry(d["name"], existing(d["train"], "train split"), existing(d["test"], "test split"))
            for d in raw["datasets"]
        ]
        retriever = dict(raw["retriever"])
        llm = dict(raw.get("llm", {}))
        estimators = list(raw["estimators"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"config is missing required field {exc}") from None
    if not datasets:
        raise ConfigError("config lists no datasets")
    if len({d.name for d in datasets}) != len(datasets):
        raise ConfigError("dataset names must be unique")
    for key in ("corpus", "index"):
        if key in retriever:
            retriever[key] = existing(retriever[key], f"retriever {key}")
    if "corpus" not in retriever and "index" not in retriever:
        raise ConfigError("retriever needs a corpus or index path")
    if "mock_spec" in llm:
        llm["mock_spec"] = existing(llm["mock_spec"], "mock spec")
    unknown = [m for m in estimators if m not in ALL_METHOD_IDS]
    if unknown:
        raise ConfigError(f"unknown estimators {unknown}")
    deciders = list(raw.get("deciders", ["threshold"]))
    bad = [k for k in deciders if k not in DECIDER_KINDS]
    if bad:
        raise ConfigError(f"unknown decider kinds {bad}")
    hybrid_manifest = list(raw.get("hybrid_manifest", [m for m in estimators if m != HYBRID]))
    if HYBRID in estimators and not hybrid_manifest:
        raise ConfigError("hybrid needs a non-empty hybrid_manifest")
    cfg = ExperimentConfig(
        root=root,
        datasets=datasets,
        retriever=retriever,
        llm=llm,
        estimators=estimators,
        deciders=deciders,
        selection_mode=raw.get("selection_mode", "holdout"),
        threshold_mode=raw.get("threshold_mode", "log_grid_200"),
        sampling_n=int(raw.get("sampling_n", 5)),
        k=int(raw.get("k", 5)),
        seed=int(raw.get("seed", 0)),
        output_dir=(root / raw.get("output_dir", "out")).resolve(),
        features=existing(raw.get("features"), "features file"),
        background_features=existing(raw.get("background_features"), "background features file"),
        hybrid_manifest=hybrid_manifest,
        rademacher_draws=int(raw.get("rademacher_draws", 20)),
        rademacher_kinds=list(raw.get("rademacher_kinds", ["constant", "threshold", "logreg"])),
        max_workers=int(raw.get("max_workers", 8)),
    )
    if cfg.selection_mode not in ("holdout", "paper_faithful_test"):
        raise ConfigError(f"unknown selection_mode {cfg.selection_mode!r}")
    if DENSITY & set(cfg.base_methods) and cfg.features is None:
        raise ConfigError("density estimators need a features file")
    if "rmd" in cfg.base_methods and cfg.background_features is None:
        raise ConfigError("rmd needs a background_features file")
    return cfg


# -- shared plumbing ----------------------------------------------------------


class Context:
    """Lazily built gateway, retriever and per-dataset inputs for one config."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._gateway: LLMGateway | None = None
        self._retriever = None
        self._features: dict[str, tuple[float, ...]] | None = None

    @property
    def out(self) -> Path:
        return self.cfg.output_dir

    def gateway(self) -> LLMGateway:
        if self._gateway is None:
            llm = self.cfg.llm
            if "mock_spec" in llm:
                backend = MockLLM(MockLLMSpec.load(llm["mock_spec"]))
            else:
                backend = OpenAIBackend(llm.get("api_base"), None, llm.get("model"))
            self._gateway = LLMGateway(backend, GenerationCache(self.cfg.cache_dir), self.cfg.max_workers)
        return self._gateway

    def retriever(self):
        if self._retriever is None:
            r = self.cfg.retriever
            if "endpoint" in r:
                corpus = load_corpus(r["corpus"]) if "corpus" in r else None
                self._retriever = RemoteRetriever(r["endpoint"], corpus)
            elif "index" in r:
                self._retriever = Bm25Index.load(r["index"])
            else:
                self._retriever = Bm25Index.build(load_corpus(r["corpus"]))
        return self._retriever

    def features(self) -> dict[str, tuple[float, ...]]:
        if self._features is None:
            self._features = load_features(self.cfg.features) if self.cfg.features else {}
        return self._features

    def examples(self, entry: DatasetEntry, split: str) -> list[QAExample]:
        return load_dataset(entry.train if split == "train" else entry.test)

    def params(self, entry: DatasetEntry) -> EstimatorParams:
        """Estimator parameters, with density statistics fitted on the train split."""
        params = EstimatorParams()
        methods = set(self.cfg.base_methods)
        if not methods & DENSITY:
            return params
        feats = self.features()
        train_ids = [e.id for e in self.examples(entry, "train")]
        missing = [i for i in train_ids if i not in feats]
        if missing:
            raise DataError(f"no hidden features for train examples {missing[:3]}")
        x = np.array([feats[i] for i in train_ids], dtype=float)
        params.md_stats = fit_density(x)
        if "rde" in methods:
            params.rde_stats = fit_rde(x)
        if "rmd" in methods:
            bg = load_features(self.cfg.background_features)
            params.background_stats = fit_density(np.array([bg[k] for k in sorted(bg)], dtype=float))
        return params

    def pipeline(self, entry: DatasetEntry, estimators: list[str] | None = None, **kw: Any) -> Pipeline:
        pc = PipelineConfig(
            estimators=estimators or self.cfg.base_methods,
            k=self.cfg.k,
            sampling=dataclasses.replace(SAMPLING, n_samples=self.cfg.sampling_n),
            params=self.params(entry),
            hybrid_manifest=list(self.cfg.hybrid_manifest),
            features=self.features(),
            max_workers=self.cfg.max_workers,
            **kw,
        )
        return Pipeline(self.gateway(), self.retriever(), pc)

    def require(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise UpstreamMissing(f"{path} is missing; run `ragate {stage}` first")
        return path

    def write_text(self, path: Path, text: str) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, "utf-8")

    def write_json(self, path: Path, obj: Any) -> None:
        self.write_text(path, json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False) + "\n")

    def stamp(self, stage: str, **extra: Any) -> None:
        self.write_json(self.out / stage / "_stage.json", {"stage": stage, "version": STAGE_VERSION, **extra})


def _fmt(v: float | None) -> str:
    return "" if v is None or not math.isfinite(v) else f"{v:.6f}"


def _csv(rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


# -- stages -------------------------------------------------------------------


def cmd_toy(args: argparse.Namespace) -> int:
    path = write_toy(args.out, seed=args.seed, n_datasets=args.datasets)
    print(path)
    return 0


def cmd_index(args: argparse.Namespace, ctx: Context | None) -> int:
    if args.corpus:
        corpus, out = Path(args.corpus), Path(args.out or "index.json")
    elif ctx is not None and "corpus" in ctx.cfg.retriever:
        corpus, out = ctx.cfg.retriever["corpus"], Path(args.out or ctx.out / "index.json")
    else:
        raise ConfigError("index needs --corpus or a config with retriever.corpus")
    if not Path(corpus).exists():
        raise ConfigError(f"corpus {corpus} does not exist")
    index = Bm25Index.build(load_corpus(corpus))
    out.parent.mkdir(parents=True, exist_ok=True)
    index.save(out)
    print(f"indexed {index.n_docs} documents -> {out}")
    return 0


def generation_keys(entry: DatasetEntry, ex: QAExample) -> list[str]:
    return [f"{entry.name}/{ex.id}/{kind}" for kind in ("norag", "rag", "samples")]


def cmd_generate(ctx: Context) -> int:
    """Fill the generation cache; the manifest makes interrupted runs resumable."""
    manifest_path = ctx.out / "generate" / "manifest.json"
    done: set[str] = set()
    if manifest_path.exists():
        done = set(json.loads(manifest_path.read_text("utf-8"))["completed"])
    failures: list[str] = []
    for entry in ctx.cfg.datasets:
        pipe = ctx.pipeline(entry)
        for split in ("train", "test"):
            for ex in ctx.examples(entry, split):
                todo = [k for k in generation_keys(entry, ex) if k not in done]
                if not todo:
                    continue
                for key in todo:
                    kind = key.rsplit("/", 1)[1]
                    try:
                        if kind == "norag":
                            pipe.answer_no_rag(ex)
                        elif kind == "rag":
                            pipe.answer_with_rag(ex)
                        else:
                            prompt = prompts.qa_prompt(ex.question, None, pipe.cfg.template, pipe.cfg.fewshot)
                            pipe.gateway.sample_n(prompt, pipe.cfg.sampling)
                        done.add(key)
                    except (GatewayError, RetrievalTransportError, RetrievalProtocolError) as exc:
                        failures.append(f"{key}: {exc}")
                        log.error("generation failed for %s: %s", key, exc)
    ctx.write_json(manifest_path, {"completed": sorted(done), "version": STAGE_VERSION})
    stats = ctx.gateway().stats
    print(f"generate: {len(done)} keys complete, {stats.endpoint_calls} endpoint calls, {len(failures)} failures")
    if failures:
        print("rerun `ragate generate` to resume", file=sys.stderr)
        return 4
    return 0


def _check_generated(ctx: Context) -> None:
    path = ctx.require(ctx.out / "generate" / "manifest.json", "generate")
    done = set(json.loads(path.read_text("utf-8"))["completed"])
    for entry in ctx.cfg.datasets:
        for split in ("train", "test"):
            for ex in ctx.examples(entry, split):
                if any(k not in done for k in generation_keys(entry, ex)):
                    raise UpstreamMissing(f"generation incomplete for {entry.name}/{ex.id}; rerun `ragate generate`")


def scores_path(ctx: Context, name: str, split: str) -> Path:
    return ctx.out / "score" / f"{name}.{split}.jsonl"


def cmd_score(ctx: Context) -> int:
    _check_generated(ctx)
    n_err = 0
    for entry in ctx.cfg.datasets:
        pipe = ctx.pipeline(entry)
        for split in ("train", "test"):
            rows = pipe.build_decision_rows(ctx.examples(entry, split), ctx.cfg.base_methods)
            n_err += sum(1 for r in rows if r.get("error"))
            write_jsonl(scores_path(ctx, entry.name, split), rows)
    ctx.stamp("score", methods=ctx.cfg.base_methods)
    print(f"score: {len(ctx.cfg.datasets)} dataset(s), {n_err} row error(s)")
    return 0


def load_rows(ctx: Context, name: str, split: str) -> list[dict[str, Any]]:
    return list(read_jsonl(ctx.require(scores_path(ctx, name, split), "score")))


def tables_for(ctx: Context, name: str, method: str, stats: dict | None = None):
    """Train/test decision tables; Hybrid z-scores use the train split's statistics."""
    train_rows, test_rows = load_rows(ctx, name, "train"), load_rows(ctx, name, "test")
    if method == HYBRID and stats is None:
        ok = [r["scores"] for r in train_rows if not r.get("error")]
        stats = hybrid_train_stats(ok, ctx.cfg.hybrid_manifest)
    train = decision_table(train_rows, method, ctx.cfg.hybrid_manifest, stats)
    test = decision_table(test_rows, method, ctx.cfg.hybrid_manifest, stats)
    return train, test, stats


def fit_path(ctx: Context, name: str, method: str) -> Path:
    return ctx.out / "fit" / name / f"{method}.json"


def cmd_fit(ctx: Context) -> int:
    for entry in ctx.cfg.datasets:
        for method in ctx.cfg.estimators:
            train, test, stats = tables_for(ctx, entry.name, method)
            if len(train) == 0:
                raise DataError(f"{entry.name}/{method}: no usable training rows")
            kinds = ctx.cfg.deciders
            if "threshold" in kinds and len(kinds) == 1:
                model = fit_decider("threshold", train, ctx.cfg.seed, ctx.cfg.threshold_mode)
                model.mode = "single"
                selection = {"mode": "single", "selected": "threshold"}
            else:
                model, report = select_best(train, test, kinds, ctx.cfg.selection_mode, ctx.cfg.seed)
                selection = report.to_dict()
            per_kind = {}
            for kind in kinds:
                if kind == "threshold" and train.features.shape[1] != 1:
                    continue
                m = fit_decider(kind, train, ctx.cfg.seed, ctx.cfg.threshold_mode)
                per_kind[kind] = simulated_in_accuracy(m.predict(test.features), test)
            ctx.write_json(
                fit_path(ctx, entry.name, method),
                {
                    "model": model.to_dict(),
                    "selection": selection,
                    "classifier_in_accuracy": per_kind,
                    "hybrid_manifest": ctx.cfg.hybrid_manifest if method == HYBRID else [],
                    "hybrid_stats": {k: list(v) for k, v in (stats or {}).items()},
                },
            )
    ctx.stamp("fit", deciders=ctx.cfg.deciders)
    print(f"fit: {len(ctx.cfg.datasets) * len(ctx.cfg.estimators)} decider(s)")
    return 0


def load_fit(ctx: Context, name: str, method: str) -> tuple[DeciderModel, dict[str, Any]]:
    payload = json.loads(ctx.require(fit_path(ctx, name, method), "fit").read_text("utf-8"))
    return DeciderModel.from_dict(payload["model"]), payload


def run_path(ctx: Context, name: str, label: str) -> Path:
    return ctx.out / "run" / name / f"{label}.jsonl"


def cmd_run(ctx: Context) -> int:
    for entry in ctx.cfg.datasets:
        examples = ctx.examples(entry, "test")
        labels = {r["example_id"]: r["y"] for r in load_rows(ctx, entry.name, "test") if not r.get("error")}
        base = ctx.pipeline(entry)
        for strategy in ("never", "always", "ideal"):
            records = base.run(examples, strategy, labels)
            write_jsonl(run_path(ctx, entry.name, strategy), (r.to_dict() for r in records))
        for method in ctx.cfg.estimators:
            model, payload = load_fit(ctx, entry.name, method)
            pipe = ctx.pipeline(
                entry,
                estimators=[method],
                decider=model,
                hybrid_stats={k: tuple(v) for k, v in payload["hybrid_stats"].items()},
            )
            records = pipe.run(examples, "adaptive")
            write_jsonl(run_path(ctx, entry.name, f"adaptive-{method}"), (r.to_dict() for r in records))
    ctx.stamp("run")
    print("run: done")
    return 0


def _decision_scores(model: DeciderModel, table: DecisionTable) -> np.ndarray:
    """Continuous score behind a decider's decisions, for ROC-AUC and Spearman."""
    if table.features.shape[1] == 1:
        return table.scores
    if model.kind == "logreg":
        return logreg_proba(model, table.features)
    if model.kind == "mlp":
        return mlp_proba(model, table.features)
    return model.predict(table.features).astype(float)


def load_records(ctx: Context, name: str, label: str) -> list[RunRecord]:
    return [RunRecord.from_dict(d) for d in read_jsonl(ctx.require(run_path(ctx, name, label), "run"))]


def build_report(ctx: Context) -> MetricsReport:
    report = MetricsReport(ue_methods=set(ctx.cfg.estimators))
    for entry in ctx.cfg.datasets:
        rows = {r["example_id"]: r for r in load_rows(ctx, entry.name, "test") if not r.get("error")}
        for label in ("never", "always", "ideal"):
            recs = [r for r in load_records(ctx, entry.name, label) if r.error is None]
            metrics: dict[str, float | None] = dict(qa_metrics(recs))
            if label == "ideal":
                y = [rows[r.example_id]["y"] for r in recs if r.example_id in rows]
                metrics.update(self_knowledge_metrics(y, y, y))
            name = {"never": "Never RAG", "always": "Always RAG", "ideal": "Ideal"}[label]
            report.set(entry.name, name, metrics)
        for method in ctx.cfg.estimators:
            recs = [r for r in load_records(ctx, entry.name, f"adaptive-{method}") if r.error is None]
            metrics = dict(qa_metrics(recs)) if recs else {}
            model, payload = load_fit(ctx, entry.name, method)
            stats = {k: tuple(v) for k, v in payload["hybrid_stats"].items()} or None
            _, test, _ = tables_for(ctx, entry.name, method, stats)
            by_id = {r.example_id: r.decision for r in recs}
            keep = [i for i, eid in enumerate(test.example_ids) if eid in by_id]
            if keep:
                sub = test.subset(keep)
                decisions = [by_id[eid] for eid in sub.example_ids]
                metrics.update(self_knowledge_metrics(_decision_scores(model, sub), decisions, sub.y))
            report.set(entry.name, method, metrics)
    return report


def cmd_eval(ctx: Context) -> int:
    report = build_report(ctx)
    ctx.write_text(ctx.out / "eval" / "metrics.csv", report.to_csv())
    ctx.write_json(
        ctx.out / "eval" / "metrics.json",
        [{"dataset": d, "method": m, "metric": k, "value": v} for (d, m, k), v in sorted(report.values.items())],
    )
    ctx.stamp("eval")
    print(f"eval: {len(report.values)} values")
    return 0


def cmd_ood(ctx: Context) -> int:
    names = [d.name for d in ctx.cfg.datasets]
    rows = [["method", "train", "test", "metric", "in_domain", "transferred", "change_pct", "flags"]]
    changes: dict[str, dict[tuple[str, str], float | None]] = {}
    for method in ctx.cfg.estimators:
        values = {}
        for train_name in names:
            model, payload = load_fit(ctx, train_name, method)
            stats = {k: tuple(v) for k, v in payload["hybrid_stats"].items()} or None
            for test_name in names:
                test = decision_table(
                    load_rows(ctx, test_name, "test"), method, ctx.cfg.hybrid_manifest, stats
                )
                values[(train_name, test_name)] = simulated_in_accuracy(model.predict(test.features), test)
        cells = analysis.ood_matrix(method, values, "in_acc", names)
        for c in cells:
            rows.append([method, c.train, c.test, c.metric, _fmt(c.in_domain), _fmt(c.transferred),
                         _fmt(c.change_pct), ";".join(c.flags)])
        changes[method] = {(c.train, c.test): c.change_pct for c in cells if c.train != c.test}
    ctx.write_text(ctx.out / "ood" / "transfer.csv", _csv(rows))

    methods = list(ctx.cfg.estimators)
    pairs = sorted({p for m in methods for p in changes[m]})
    pairs = [p for p in pairs if all(changes[m].get(p) is not None for m in methods)]
    stats_out: dict[str, Any] = {"methods": methods, "pairs": [list(p) for p in pairs]}
    if len(methods) >= 2 and len(pairs) >= 2:
        matrix = np.array([[changes[m][p] for m in methods] for p in pairs])
        fr = analysis.friedman(matrix, higher_is_better=True)
        stats_out.update(
            statistic=fr.statistic, p_value=fr.p_value, chi2_p_value=fr.chi2_p_value,
            p_method=fr.p_method, mean_ranks=dict(zip(methods, fr.mean_ranks.tolist())),
        )
        if len(methods) <= 10:
            nm = analysis.nemenyi(fr.mean_ranks, len(pairs))
            grid = [[""] + methods] + [[m] + nm.brackets[i] for i, m in enumerate(methods)]
            ctx.write_text(ctx.out / "ood" / "nemenyi.csv", _csv(grid))
    else:
        stats_out["skipped"] = "need at least 2 methods and 2 off-diagonal transfer pairs"
    ctx.write_json(ctx.out / "ood" / "friedman.json", stats_out)
    ctx.stamp("ood")
    print(f"ood: {len(rows) - 1} transfer cells")
    return 0


def cmd_complexity(ctx: Context) -> int:
    rows = [["dataset", "method", "kind", "estimate", "stderr", "normalized", "log10", "n", "draws", "flags"]]
    for entry in ctx.cfg.datasets:
        for method in ctx.cfg.estimators:
            train, _, _ = tables_for(ctx, entry.name, method)
            for kind in ctx.cfg.rademacher_kinds:
                if kind == "threshold" and train.features.shape[1] != 1:
                    continue
                res = analysis.rademacher_estimate(
                    train.features, kind, ctx.cfg.rademacher_draws, ctx.cfg.seed, method
                )
                rows.append([entry.name, method, kind, _fmt(res.estimate), _fmt(res.stderr),
                             _fmt(res.normalized), "", res.n, res.draws, ";".join(res.flags)])
            model = fit_logreg(train)
            try:
                sh = analysis.sharpness(model, train, method)
                rows.append([entry.name, method, "sharpness", _fmt(sh.estimate), "", "", _fmt(sh.normalized),
                             sh.n, 1, ""])
            except ValueError as exc:
                rows.append([entry.name, method, "sharpness", "", "", "", "", len(train), 1, str(exc)])
    ctx.write_text(ctx.out / "complexity" / "complexity.csv", _csv(rows))
    ctx.stamp("complexity")
    print(f"complexity: {len(rows) - 1} rows")
    return 0


def _sensitivity_md(ctx: Context) -> str:
    results: dict[str, dict[str, dict[str, float]]] = {}
    for entry in ctx.cfg.datasets:
        for method in ctx.cfg.estimators:
            _, payload = load_fit(ctx, entry.name, method)
            per_kind = payload.get("classifier_in_accuracy", {})
            if len(per_kind) >= 2:
                results.setdefault(method, {})[entry.name] = per_kind
    if not results:
        return ""
    lines = ["### Classifier sensitivity", "", "| Method | Drop | Mean | Max | Difference |", "|---|---|---|---|---|"]
    for row in analysis.classifier_sensitivity(results):
        lines.append(f"| {row.method} | {row.drop:.3f} | {row.mean_rank:.2f} | {row.max_rank:.2f} | {row.difference:+.2f} |")
    return "\n".join(lines) + "\n"


def cmd_report(ctx: Context) -> int:
    metrics_csv = ctx.require(ctx.out / "eval" / "metrics.csv", "eval")
    report = build_report(ctx)
    rep = ctx.out / "report"
    table1 = report.to_markdown(QA_COLUMNS, "QA performance and efficiency")
    ue = MetricsReport({k: v for k, v in report.values.items() if k[1] in report.ue_methods or k[1] == "Ideal"},
                       report.ue_methods)
    table2 = ue.to_markdown(SK_COLUMNS, "Self-knowledge")
    parts = [f"# ragate report (v{__version__})", "", table1, table2]

    rank_lines = ["### Mean ranks", "", "| Method | " + " | ".join(METRIC_LABELS.get(k, k) for k in QA_COLUMNS[:3]) + " |",
                  "|---|" + "---|" * 3]
    means = {k: report.ranks(k)[1] for k in QA_COLUMNS[:3]}
    for m in report.methods:
        rank_lines.append(f"| {m} | " + " | ".join("-" if means[k].get(m) is None else f"{means[k][m]:.2f}"
                                                  for k in QA_COLUMNS[:3]) + " |")
    parts.append("\n".join(rank_lines) + "\n")

    if len(report.methods) >= 3:
        cols = QA_COLUMNS[:3] + SK_COLUMNS
        names, corr = metric_correlation({k: report.table(k) for k in cols})
        grid = [[""] + names] + [[a] + [_fmt(v) for v in row] for a, row in zip(names, corr)]
        ctx.write_text(rep / "metric_correlation.csv", _csv(grid))
    sens = _sensitivity_md(ctx)
    if sens:
        parts.append(sens)

    ctx.write_text(rep / "table1.md", table1)
    ctx.write_text(rep / "table2.md", table2)
    ctx.write_text(rep / "metrics.csv", metrics_csv.read_text("utf-8"))
    for stage, fname in (("ood", "transfer.csv"), ("ood", "nemenyi.csv"), ("complexity", "complexity.csv")):
        src = ctx.out / stage / fname
        if src.exists():
            ctx.write_text(rep / fname, src.read_text("utf-8"))
    friedman_path = ctx.out / "ood" / "friedman.json"
    if friedman_path.exists():
        fr = json.loads(friedman_path.read_text("utf-8"))
        if "statistic" in fr:
            parts.append(f"### OOD ranking\n\nFriedman statistic {fr['statistic']:.3f}, "
                         f"p = {fr['p_value']:.4f} ({fr['p_method']})\n")
    ctx.write_text(rep / "report.md", "\n".join(parts))
    print(f"report: {rep / 'report.md'}")
    return 0


def cmd_all(ctx: Context) -> int:
    for fn in (cmd_generate, cmd_score, cmd_fit, cmd_run, cmd_eval, cmd_ood, cmd_complexity, cmd_report):
        code = fn(ctx)
        if code:
            return code
    return 0


STAGES = {
    "generate": cmd_generate,
    "score": cmd_score,
    "fit": cmd_fit,
    "run": cmd_run,
    "eval": cmd_eval,
    "ood": cmd_ood,
    "complexity": cmd_complexity,
    "report": cmd_report,
    "all": cmd_all,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ragate", description=__doc__.split("\n", 1)[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    toy = sub.add_parser("toy", help="write the bundled toy fixture and its config")
    toy.add_argument("--out", required=True)
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--datasets", type=int, default=1)

    index = sub.add_parser("index", help="build a BM25 index file")
    index.add_argument("--config")
    index.add_argument("--override", action="append", default=[])
    index.add_argument("--corpus")
    index.add_argument("--out")

    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "run every stage")
        p.add_argument("--config", required=True)
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "toy":
            return cmd_toy(args)
        ctx = Context(load_config(args.config, args.override)) if getattr(args, "config", None) else None
        if args.command == "index":
            return cmd_index(args, ctx)
        return STAGES[args.command](ctx)
    except (ConfigError, DataError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except UpstreamMissing as exc:
        print(f"missing upstream output: {exc}", file=sys.stderr)
        return 3
    except (GatewayError, RetrievalTransportError, RetrievalProtocolError) as exc:
        print(f"endpoint failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
