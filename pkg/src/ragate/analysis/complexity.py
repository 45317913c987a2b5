"""Functional-complexity probes: fit-based Rademacher estimates and loss sharpness."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..deciders import DecisionTable, DeciderModel, fit_decider, _sigmoid

HYPOTHESIS_CLASSES = ("constant", "threshold", "logreg", "tree", "knn", "mlp")


@dataclass(frozen=True)
class ComplexityResult:
    method: str
    kind: str
    estimate: float
    stderr: float
    normalized: float | None
    n: int
    draws: int
    flags: tuple[str, ...] = ()


def _sign_table(x: np.ndarray, sigma: np.ndarray) -> DecisionTable:
    positive = sigma > 0
    return DecisionTable([str(i) for i in range(len(sigma))], x, ~positive, positive)


def best_fit_correlation(x: np.ndarray, sigma: np.ndarray, kind: str, seed: int = 0) -> float:
    """``(1/n) sum sigma_i h(x_i)`` for the class member fitted to the signs."""
    if kind == "constant":
        return abs(float(sigma.sum())) / len(sigma)
    table = _sign_table(x, sigma)
    if kind == "threshold":
        model = fit_decider("threshold", table, threshold_mode="midpoints")
    else:
        model = fit_decider(kind, table, seed)
    h = 2.0 * model.predict(x) - 1.0
    return float((sigma * h).mean())


def rademacher_estimate(
    features: np.ndarray,
    kind: str = "logreg",
    draws: int = 100,
    seed: int = 0,
    method: str = "",
) -> ComplexityResult:
    """Empirical fit-based Rademacher estimate.

    For each draw of random signs, the class member fitted to those signs
    stands in for the supremum, so the estimate is optimistic-low. The
    normalised value divides by the two-constant-function baseline on the
    same draws.
    """
    if kind not in HYPOTHESIS_CLASSES:
        raise ValueError(f"unknown hypothesis class {kind!r}")
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    n = len(x)
    rng = np.random.default_rng(seed)
    vals, base = [], []
    for _ in range(draws):
        sigma = rng.choice([-1.0, 1.0], size=n)
        vals.append(best_fit_correlation(x, sigma, kind, seed))
        base.append(abs(float(sigma.sum())) / n)
    vals = np.array(vals)
    est = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(draws)) if draws > 1 else float("nan")
    baseline = float(np.mean(base))
    flags = ("few-draws",) if draws < 10 else ()
    return ComplexityResult(method, kind, est, stderr, est / baseline if baseline > 0 else None, n, draws, flags)


def logreg_hessian(model: DeciderModel, x: np.ndarray) -> np.ndarray:
    """Hessian of mean log-loss + ridge/2 ||coef||^2 at the fitted coefficients."""
    p = model.params
    xs = (np.asarray(x, dtype=float) - np.asarray(p["mu"])) / np.asarray(p["sd"])
    coef = np.asarray(p["w"], dtype=float)
    if p["fit_intercept"]:
        xs = np.hstack([xs, np.ones((len(xs), 1))])
        coef = np.append(coef, p["b"])
    prob = _sigmoid(xs @ coef)
    s = prob * (1.0 - prob)
    return (xs * s[:, None]).T @ xs / len(xs) + p["ridge"] * np.eye(xs.shape[1])


def power_iteration(matrix: np.ndarray, tol: float = 1e-8, max_iter: int = 100_000, seed: int = 0) -> float:
    """Dominant eigenvalue of a symmetric PSD matrix.

    Stops when the Rayleigh quotient changes by less than ``tol`` relative and
    the residual ``||Av - lambda v||`` is below ``tol * lambda``.
    """
    a = np.asarray(matrix, dtype=float)
    v = np.ones(len(a)) + 1e-3 * np.random.default_rng(seed).standard_normal(len(a))
    v /= np.linalg.norm(v)
    lam = float(v @ a @ v)
    for _ in range(max_iter):
        w = a @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
        new = float(v @ a @ v)
        resid = float(np.linalg.norm(a @ v - new * v))
        if abs(new - lam) <= tol * abs(new) and resid <= tol * max(abs(new), 1e-300):
            return new
        lam = new
    return lam


def sharpness(model: DeciderModel, table: DecisionTable, method: str = "") -> ComplexityResult:
    """Largest Hessian eigenvalue of the logistic decider's loss at its optimum."""
    if model.kind != "logreg":
        raise ValueError("sharpness is defined for the logistic decider only")
    if model.params.get("grad_norm", math.inf) > 1e-8:
        raise ValueError("logistic model is not converged (gradient norm > 1e-8); refit before measuring sharpness")
    lam = power_iteration(logreg_hessian(model, table.features))
    return ComplexityResult(method, "sharpness", lam, 0.0, math.log10(lam) if lam > 0 else None, len(table), 1)
