"""Density estimators over hidden-state features: MD, relative MD and RDE."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ..types import DataError


@dataclass(frozen=True)
class DensityStats:
    mean: np.ndarray
    cov: np.ndarray
    shrinkage: float
    projection: np.ndarray | None = None
    center: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return len(self.center) if self.center is not None else len(self.mean)

    def transform(self, x: np.ndarray) -> np.ndarray:
        if self.projection is None:
            return x
        return (x - self.center) @ self.projection

    def to_dict(self) -> dict[str, Any]:
        return {
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "shrinkage": self.shrinkage,
            "projection": None if self.projection is None else self.projection.tolist(),
            "center": None if self.center is None else self.center.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> DensityStats:
        arr = lambda v: None if v is None else np.asarray(v, dtype=float)  # noqa: E731
        return cls(arr(d["mean"]), arr(d["cov"]), float(d["shrinkage"]), arr(d["projection"]), arr(d["center"]))


def fit_density(features: np.ndarray, shrinkage: float = 0.1) -> DensityStats:
    """Mean and shrunk covariance ``(1-s) * S + s * diag(S)``, forced positive-definite."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if x.shape[0] < 2:
        raise DataError("density fit needs at least 2 vectors")
    if not np.isfinite(x).all():
        raise DataError("non-finite feature values")
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError("shrinkage must be in [0, 1]")
    mu = x.mean(axis=0)
    s = np.atleast_2d(np.cov(x, rowvar=False))
    cov = (1.0 - shrinkage) * s + shrinkage * np.diag(np.diag(s))
    floor = 1e-9 * max(1.0, float(np.trace(cov)) / len(cov))
    low = float(np.linalg.eigvalsh(cov).min())
    if low < floor:
        cov = cov + (floor - low) * np.eye(len(cov))
    return DensityStats(mu, cov, shrinkage)


def _check_dim(stats: DensityStats, x: np.ndarray) -> None:
    if x.shape[-1] != stats.dim:
        raise DataError(f"dimension mismatch: feature has {x.shape[-1]}, stats expect {stats.dim}")


def mahalanobis(stats: DensityStats, x: np.ndarray) -> float:
    """Squared Mahalanobis distance ``(x-mu)^T Sigma^-1 (x-mu)``."""
    x = np.asarray(x, dtype=float)
    _check_dim(stats, x)
    diff = stats.transform(x) - stats.mean
    return float(diff @ cho_solve(cho_factor(stats.cov), diff))


def relative_mahalanobis(task: DensityStats, background: DensityStats, x: np.ndarray) -> float:
    if task.dim != background.dim:
        raise DataError(f"dimension mismatch: task stats {task.dim}, background stats {background.dim}")
    return mahalanobis(task, x) - mahalanobis(background, x)


def fit_rde(features: np.ndarray, q: int | None = None, shrinkage: float = 0.1) -> DensityStats:
    """Project onto the top-``q`` principal axes, then fit a shrunk Gaussian there."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    n, d = x.shape
    q = min(d, 100) if q is None else q
    if not 1 <= q <= min(d, n):
        raise ValueError(f"q must be in [1, {min(d, n)}], got {q}")
    center = x.mean(axis=0)
    _, _, vt = np.linalg.svd(x - center, full_matrices=False)
    basis = vt[:q].T
    reduced = fit_density((x - center) @ basis, shrinkage)
    return DensityStats(reduced.mean, reduced.cov, shrinkage, basis, center)


def rde(train: np.ndarray, x: np.ndarray, q: int | None = None, shrinkage: float = 0.1) -> float:
    return mahalanobis(fit_rde(train, q, shrinkage), x)
