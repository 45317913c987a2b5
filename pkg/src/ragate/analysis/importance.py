"""Hybrid feature importance and classifier-sensitivity summaries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..deciders import DeciderModel
from ..metrics import rank_table

COLLINEAR = 0.99


@dataclass(frozen=True)
class FeatureImportance:
    ranking: list[tuple[str, float]]
    degenerate: bool
    collinear_pairs: list[tuple[str, str]]


def hybrid_feature_importance(
    model: DeciderModel, manifest: Sequence[str], features: np.ndarray | None = None
) -> FeatureImportance:
    """Rank hybrid inputs by |coefficient| (logistic) or Gini decrease (tree)."""
    if model.kind == "logreg":
        weights = np.abs(np.asarray(model.params["w"], dtype=float))
    elif model.kind == "tree":
        weights = np.asarray(model.params["gini_importance"], dtype=float)
    else:
        raise ValueError(f"feature importance is unsupported for {model.kind} deciders")
    if len(weights) != len(manifest):
        raise ValueError("manifest length differs from the model's input dimension")
    order = sorted(range(len(manifest)), key=lambda i: (-weights[i], i))
    ranking = [(manifest[i], float(weights[i])) for i in order]
    pairs: list[tuple[str, str]] = []
    if features is not None and len(features) > 2:
        x = np.asarray(features, dtype=float)
        sd = x.std(axis=0)
        live = [i for i in range(x.shape[1]) if sd[i] > 0]
        corr = np.corrcoef(x[:, live], rowvar=False) if len(live) > 1 else np.eye(len(live))
        for a in range(len(live)):
            for b in range(a + 1, len(live)):
                if abs(corr[a, b]) > COLLINEAR:
                    pairs.append((manifest[live[a]], manifest[live[b]]))
    return FeatureImportance(ranking, bool(np.all(weights == 0)), pairs)


def importance_rank_table(per_dataset: Mapping[str, FeatureImportance]) -> dict[str, dict[str, int]]:
    """dataset -> method -> 1-based importance rank."""
    return {ds: {m: i for i, (m, _) in enumerate(fi.ranking, 1)} for ds, fi in per_dataset.items()}


@dataclass(frozen=True)
class SensitivityRow:
    method: str
    drop: float
    mean_rank: float
    max_rank: float

    @property
    def difference(self) -> float:
        return self.max_rank - self.mean_rank


def classifier_sensitivity(
    results: Mapping[str, Mapping[str, Mapping[str, float]]],
) -> list[SensitivityRow]:
    """Drop from best to average classifier, and the rank shift it causes.

    ``results`` maps method -> dataset -> classifier -> In-Accuracy.
    """
    methods = sorted(results)
    datasets = sorted({ds for m in methods for ds in results[m]})
    by_mean: dict[str, dict[str, float | None]] = {ds: {} for ds in datasets}
    by_max: dict[str, dict[str, float | None]] = {ds: {} for ds in datasets}
    drops: dict[str, float] = {}
    for m in methods:
        per_ds = []
        for ds, clf in results[m].items():
            vals = np.array(list(clf.values()), dtype=float)
            if len(vals) < 2:
                raise ValueError(f"{m}/{ds}: sensitivity needs at least 2 classifiers")
            by_mean[ds][m] = float(vals.mean())
            by_max[ds][m] = float(vals.max())
            per_ds.append(vals.max() - vals.mean())
        drops[m] = float(np.mean(per_ds))
    _, mean_rank = rank_table(by_mean, True)
    _, max_rank = rank_table(by_max, True)
    return [SensitivityRow(m, drops[m], mean_rank[m], max_rank[m]) for m in methods]
