"""QA, efficiency and self-knowledge metrics plus cross-dataset rank aggregation."""

from __future__ import annotations

import csv
import io
import math
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .types import RunRecord

ARTICLES = re.compile(r"\b(a|an|the)\b")
PUNCT = str.maketrans("", "", string.punctuation)

# metric id -> True when higher is better
METRICS: dict[str, bool] = {
    "in_acc": True,
    "em": True,
    "f1": True,
    "lmc": False,
    "rc": False,
    "accuracy": True,
    "roc_auc": True,
    "spearman": True,
    "overconfidence": False,
    "underconfidence": False,
}
METRIC_LABELS = {
    "in_acc": "InAcc",
    "em": "EM",
    "f1": "F1",
    "lmc": "LMC",
    "rc": "RC",
    "accuracy": "Acc",
    "roc_auc": "ROC-AUC",
    "spearman": "Spearman",
    "overconfidence": "Over",
    "underconfidence": "Under",
}


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    text = text.lower().translate(PUNCT)
    text = ARTICLES.sub(" ", text)
    return " ".join(text.split())


def in_accuracy(pred: str, golds: Iterable[str]) -> bool:
    p = normalize_answer(pred)
    # a gold that normalises to "" only matches an empty prediction, as in EM
    return any((g in p) if g else not p for g in map(normalize_answer, golds))


def exact_match(pred: str, golds: Iterable[str]) -> bool:
    p = normalize_answer(pred)
    return any(p == normalize_answer(g) for g in golds)


def _token_f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1(pred: str, golds: Iterable[str]) -> float:
    pred_tokens = normalize_answer(pred).split()
    return max((_token_f1(pred_tokens, normalize_answer(g).split()) for g in golds), default=0.0)


def efficiency(records: Sequence[RunRecord]) -> tuple[float, float]:
    """Mean LM calls and mean retrieval calls per question."""
    if not records:
        raise ValueError("efficiency of an empty record set is undefined")
    n = len(records)
    return sum(r.lm_calls for r in records) / n, sum(r.retrieval_calls for r in records) / n


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float | None:
    """Probability a positive outranks a negative; ties count one half.

    Returns ``None`` when only one class is present.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def spearman(x: Sequence[float], y: Sequence[float]) -> float | None:
    a = np.asarray(x, dtype=float)
    b = np.asarray(y, dtype=float)
    if len(a) < 2 or len(a) != len(b):
        return None
    ra = rankdata(a, method="average")
    rb = rankdata(b, method="average")
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float((ra**2).sum() * (rb**2).sum()))
    if denom == 0:
        return None
    return float((ra * rb).sum() / denom)


@dataclass(frozen=True)
class ConfidenceErrors:
    over: float
    under: float
    over_undefined: bool = False
    under_undefined: bool = False

    def __iter__(self):
        return iter((self.over, self.under))


def over_under_confidence(decisions: Sequence[int], labels: Sequence[int]) -> ConfidenceErrors:
    """Share of skip decisions that were wrong, and of retrieve decisions that were unneeded.

    An empty denominator yields 0 with the matching ``*_undefined`` flag set.
    """
    d = np.asarray(decisions, dtype=int)
    y = np.asarray(labels, dtype=int)
    if d.shape != y.shape:
        raise ValueError("decision and label vectors differ in length")
    wrong = (d != y).astype(int)
    skips = int((1 - d).sum())
    retrieves = int(d.sum())
    over = float((wrong * (1 - d)).sum() / skips) if skips else 0.0
    under = float((wrong * d).sum() / retrieves) if retrieves else 0.0
    return ConfidenceErrors(over, under, skips == 0, retrieves == 0)


def self_knowledge_accuracy(decisions: Sequence[int], labels: Sequence[int]) -> float:
    d = np.asarray(decisions, dtype=int)
    y = np.asarray(labels, dtype=int)
    return float((d == y).mean())


def qa_metrics(records: Sequence[RunRecord]) -> dict[str, float]:
    lmc, rc = efficiency(records)
    n = len(records)
    return {
        "in_acc": sum(r.correct_in_acc for r in records) / n,
        "em": sum(r.correct_em for r in records) / n,
        "f1": sum(r.f1 for r in records) / n,
        "lmc": lmc,
        "rc": rc,
    }


def self_knowledge_metrics(
    scores: Sequence[float], decisions: Sequence[int], labels: Sequence[int]
) -> dict[str, float | None]:
    errs = over_under_confidence(decisions, labels)
    return {
        "accuracy": self_knowledge_accuracy(decisions, labels),
        "roc_auc": roc_auc(scores, labels),
        "spearman": spearman(scores, labels),
        "overconfidence": errs.over,
        "underconfidence": errs.under,
    }


# -- ranks and reports ------------------------------------------------------

Table = dict[str, dict[str, float | None]]  # dataset -> method -> value


def rank_table(values: Table, higher_is_better: bool = True) -> tuple[Table, dict[str, float | None]]:
    """Rank methods per dataset (1 = best, ties share the average rank).

    Null values are left out of the ranking. Returns the per-dataset ranks and
    each method's mean rank across the datasets where it was ranked.
    """
    per_dataset: Table = {}
    collected: dict[str, list[float]] = {}
    methods = sorted({m for row in values.values() for m in row})
    for ds, row in values.items():
        present = [m for m in methods if row.get(m) is not None]
        ranks: dict[str, float | None] = {m: None for m in methods}
        if present:
            v = np.array([row[m] for m in present], dtype=float)
            r = rankdata(-v if higher_is_better else v, method="average")
            for m, rk in zip(present, r):
                ranks[m] = float(rk)
                collected.setdefault(m, []).append(float(rk))
        per_dataset[ds] = ranks
    mean = {m: (float(np.mean(collected[m])) if m in collected else None) for m in methods}
    return per_dataset, mean


def metric_correlation(
    values: dict[str, Table],
) -> tuple[list[str], list[list[float | None]]]:
    """Spearman correlation between metric columns after per-dataset min-max scaling.

    ``values`` maps metric -> dataset -> method -> value. Cells become ``None``
    when a column is degenerate.
    """
    metrics = list(values)
    datasets = sorted({ds for table in values.values() for ds in table})
    methods = sorted({m for table in values.values() for row in table.values() for m in row})
    if len(methods) < 3:
        raise ValueError("metric correlation needs at least 3 methods")
    cols: dict[str, list[float]] = {}
    for metric in metrics:
        col = []
        for ds in datasets:
            row = values[metric].get(ds, {})
            raw = np.array([np.nan if row.get(m) is None else row[m] for m in methods], dtype=float)
            finite = raw[np.isfinite(raw)]
            if finite.size and finite.max() > finite.min():
                col.extend(((raw - finite.min()) / (finite.max() - finite.min())).tolist())
            else:
                col.extend(np.where(np.isfinite(raw), 0.0, np.nan).tolist())
        cols[metric] = col
    out: list[list[float | None]] = []
    for a in metrics:
        row_out: list[float | None] = []
        for b in metrics:
            if a == b:
                row_out.append(1.0)
                continue
            x = np.array(cols[a])
            y = np.array(cols[b])
            keep = np.isfinite(x) & np.isfinite(y)
            row_out.append(spearman(x[keep], y[keep]))
        out.append(row_out)
    return metrics, out


@dataclass
class MetricsReport:
    """All metric values keyed by (dataset, method, metric); ``None`` = undefined."""

    values: dict[tuple[str, str, str], float | None] = field(default_factory=dict)
    ue_methods: set[str] = field(default_factory=set)

    def set(self, dataset: str, method: str, metrics: dict[str, float | None]) -> None:
        for k, v in metrics.items():
            self.values[(dataset, method, k)] = None if v is None or not math.isfinite(v) else float(v)

    @property
    def datasets(self) -> list[str]:
        return sorted({d for d, _, _ in self.values})

    @property
    def methods(self) -> list[str]:
        seen = dict.fromkeys(m for _, m, _ in self.values)
        return list(seen)

    def table(self, metric: str) -> Table:
        out: Table = {}
        for (ds, m, k), v in self.values.items():
            if k == metric:
                out.setdefault(ds, {})[m] = v
        return out

    def ranks(self, metric: str) -> tuple[Table, dict[str, float | None]]:
        return rank_table(self.table(metric), METRICS.get(metric, True))

    def best_ue(self, by: str = "in_acc") -> dict[str, str]:
        """Per dataset, the uncertainty method with the best ``by`` value."""
        best: dict[str, str] = {}
        sign = 1 if METRICS.get(by, True) else -1
        for ds, row in self.table(by).items():
            cands = [(sign * v, m) for m, v in row.items() if m in self.ue_methods and v is not None]
            if cands:
                best[ds] = max(cands, key=lambda c: (c[0], [-ord(ch) for ch in c[1]]))[1]
        return best

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "method", "metric", "value"])
        for (ds, m, k), v in sorted(self.values.items()):
            w.writerow([ds, m, k, "" if v is None else f"{v:.6f}"])
        return buf.getvalue()

    def to_markdown(self, metrics: Sequence[str], title: str = "") -> str:
        datasets = self.datasets
        header = ["Method"] + [f"{ds} {METRIC_LABELS.get(k, k)}" for ds in datasets for k in metrics]
        lines = []
        if title:
            lines += [f"### {title}", ""]
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        best = self.best_ue()
        rows = [(m, {ds: m for ds in datasets}) for m in self.methods]
        if best:
            rows.append(("Best UE", best))
        for label, pick in rows:
            cells = [label]
            for ds in datasets:
                for k in metrics:
                    v = self.values.get((ds, pick.get(ds, ""), k))
                    cells.append("-" if v is None else _fmt(k, v))
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def _fmt(metric: str, v: float) -> str:
    return f"{v:.1f}" if metric == "lmc" else f"{v:.3f}" if metric in ("in_acc", "em", "f1") else f"{v:.2f}"
