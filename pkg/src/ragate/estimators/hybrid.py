"""Hybrid feature vectors: every base score, z-scored with training statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .catalog import METHODS

STD_FLOOR = 1e-9


@dataclass(frozen=True)
class HybridFeatureRow:
    example_id: str
    methods: tuple[str, ...]
    vector: tuple[float, ...]
    imputed: tuple[bool, ...]


def hybrid_train_stats(
    rows: Sequence[Mapping[str, float | None]], manifest: Sequence[str]
) -> dict[str, tuple[float, float]]:
    """Per-method (mean, std) over the training rows where the score exists."""
    stats = {}
    for mid in manifest:
        vals = [r[mid] for r in rows if r.get(mid) is not None and math.isfinite(r[mid])]
        if not vals:
            stats[mid] = (0.0, 1.0)
            continue
        mean = math.fsum(vals) / len(vals)
        var = math.fsum((v - mean) ** 2 for v in vals) / len(vals)
        stats[mid] = (mean, math.sqrt(var))
    return stats


def assemble_hybrid(
    example_id: str,
    scores: Mapping[str, float | None],
    manifest: Sequence[str],
    train_stats: Mapping[str, tuple[float, float]],
) -> HybridFeatureRow:
    unknown = [m for m in manifest if m not in METHODS]
    if unknown:
        raise KeyError(f"unknown method ids in manifest: {unknown}")
    vec, flags = [], []
    for mid in manifest:
        v = scores.get(mid)
        if v is None or not math.isfinite(v):
            vec.append(0.0)
            flags.append(True)
            continue
        mean, std = train_stats[mid]
        vec.append((v - mean) / max(std, STD_FLOOR))
        flags.append(False)
    return HybridFeatureRow(example_id, tuple(manifest), tuple(vec), tuple(flags))
