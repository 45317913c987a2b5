"""Retrieve/skip classifiers over uncertainty scores.

Every decider predicts 1 = retrieve, 0 = answer without retrieval. Trainable
deciders learn the self-knowledge label ``y = 1 - correct_norag``; the
threshold decider directly maximises simulated In-Accuracy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .types import DataError

DECIDER_KINDS = ("threshold", "logreg", "tree", "knn", "mlp")
STD_FLOOR = 1e-9


@dataclass
class DecisionTable:
    example_ids: list[str]
    features: np.ndarray
    correct_norag: np.ndarray
    correct_rag: np.ndarray
    methods: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        if self.features.shape[0] != len(self.example_ids) and self.features.shape[1] == len(self.example_ids):
            self.features = self.features.T
        self.correct_norag = np.asarray(self.correct_norag, dtype=bool)
        self.correct_rag = np.asarray(self.correct_rag, dtype=bool)
        n = len(self.example_ids)
        if not (self.features.shape[0] == len(self.correct_norag) == len(self.correct_rag) == n):
            raise DataError("decision table columns differ in length")

    @classmethod
    def from_scores(cls, scores: Sequence[float], correct_norag, correct_rag, method: str = "score", ids=None):
        scores = np.asarray(scores, dtype=float).reshape(-1, 1)
        ids = list(ids) if ids is not None else [str(i) for i in range(len(scores))]
        return cls(ids, scores, correct_norag, correct_rag, (method,))

    def __len__(self) -> int:
        return len(self.example_ids)

    @property
    def y(self) -> np.ndarray:
        return (~self.correct_norag).astype(int)

    @property
    def scores(self) -> np.ndarray:
        if self.features.shape[1] != 1:
            raise ValueError("table holds feature vectors, not scalar scores")
        return self.features[:, 0]

    def subset(self, idx: Sequence[int] | np.ndarray) -> DecisionTable:
        idx = np.asarray(idx, dtype=int)
        return DecisionTable(
            [self.example_ids[i] for i in idx],
            self.features[idx],
            self.correct_norag[idx],
            self.correct_rag[idx],
            self.methods,
        )

    def to_rows(self) -> list[dict[str, Any]]:
        return [
            {
                "example_id": eid,
                "features": self.features[i].tolist(),
                "y": int(self.y[i]),
                "correct_norag": bool(self.correct_norag[i]),
                "correct_rag": bool(self.correct_rag[i]),
            }
            for i, eid in enumerate(self.example_ids)
        ]


def simulated_in_accuracy(decisions: np.ndarray, table: DecisionTable) -> float:
    d = np.asarray(decisions).astype(bool)
    return float(np.where(d, table.correct_rag, table.correct_norag).mean())


def _enc(x: float) -> float | str:
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def _dec(x: float | str) -> float:
    return float(x)


@dataclass
class DeciderModel:
    kind: str
    params: dict[str, Any]
    manifest_hash: str = ""
    mode: str = ""
    flags: tuple[str, ...] = ()
    _cache: dict[str, Any] = field(default_factory=dict, repr=False, compare=False)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Decisions for a batch; a 1-D input is a column of scalar scores when ``dim == 1``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if self.params.get("dim", 1) == 1 else x.reshape(1, -1)
        return _PREDICT[self.kind](self, x).astype(int)

    def predict_one(self, x: Sequence[float] | float) -> int:
        return int(self.predict(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "params": self.params,
            "manifest_hash": self.manifest_hash,
            "mode": self.mode,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> DeciderModel:
        return cls(d["kind"], d["params"], d.get("manifest_hash", ""), d.get("mode", ""), tuple(d.get("flags", ())))

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1), "utf-8")

    @classmethod
    def load(cls, path: str | Path) -> DeciderModel:
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))


# -- standardisation ----------------------------------------------------------


def _standardizer(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return x.mean(axis=0), np.maximum(x.std(axis=0), STD_FLOOR)


def _check_finite(x: np.ndarray) -> None:
    if not np.isfinite(x).all():
        raise DataError("non-finite feature values")


# -- threshold ---------------------------------------------------------------


def threshold_candidates(scores: np.ndarray, mode: str) -> np.ndarray:
    """Candidate thresholds for ``retrieve iff score > theta``.

    ``-inf`` (always retrieve) is always included and the largest candidate
    equals the maximum score (never retrieve).
    """
    u = np.unique(scores)
    if mode == "midpoints":
        # each adjacent pair is represented by its lower score: same training
        # partition as the midpoint, and invariant to monotone rescaling
        body = u
    elif mode == "log_grid_200":
        lo, hi = float(u[0]), float(u[-1])
        eps = 1e-6 * max(1.0, hi - lo)
        body = np.geomspace(eps, hi - lo + eps, 200) + lo - eps
        body[-1] = hi
    else:
        raise ValueError(f"unknown threshold mode {mode!r}")
    return np.concatenate([[-np.inf], body])


def fit_threshold(table: DecisionTable, mode: str = "log_grid_200") -> DeciderModel:
    s = table.scores
    _check_finite(s)
    if len(np.unique(s)) == 1:
        action = int(table.correct_rag.mean() > table.correct_norag.mean())
        theta = -np.inf if action else np.inf
        return DeciderModel(
            "threshold",
            {"theta": _enc(theta), "direction": "greater", "mode": mode, "dim": 1},
            flags=("constant-scores",),
        )
    cands = threshold_candidates(s, mode)
    decide = s[None, :] > cands[:, None]
    acc = np.where(decide, table.correct_rag[None, :], table.correct_norag[None, :]).mean(axis=1)
    rate = decide.mean(axis=1)
    # best In-Accuracy, then fewest retrievals, then smallest theta
    order = np.lexsort((cands, rate, -acc))
    theta = float(cands[order[0]])
    params = {"theta": _enc(theta), "direction": "greater", "mode": mode, "dim": 1}
    if mode == "midpoints" and math.isfinite(theta):
        above = s[s > theta]
        params["midpoint"] = (theta + float(above.min())) / 2 if above.size else theta
    return DeciderModel("threshold", params)


def _predict_threshold(model: DeciderModel, x: np.ndarray) -> np.ndarray:
    theta = _dec(model.params["theta"])
    s = x[:, 0]
    return s > theta if model.params.get("direction", "greater") == "greater" else s < theta


# -- logistic regression -------------------------------------------------------


def _logloss(z: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


@dataclass
class LogregFit:
    coef: np.ndarray
    loss_history: list[float]
    grad_norm: float


def logreg_newton(
    xd: np.ndarray, y: np.ndarray, ridge: float, tol: float = 1e-8, max_iter: int = 200
) -> LogregFit:
    """Minimise mean log-loss + ridge/2 * ||coef||^2 by damped Newton steps.

    ``xd`` is the design matrix (include a ones column for an intercept).
    Backtracking keeps the objective non-increasing.
    """
    n, p = xd.shape
    coef = np.zeros(p)

    def objective(c: np.ndarray) -> float:
        return _logloss(xd @ c, y) + 0.5 * ridge * float(c @ c)

    history = [objective(coef)]
    gnorm = math.inf
    for _ in range(max_iter):
        prob = _sigmoid(xd @ coef)
        grad = xd.T @ (prob - y) / n + ridge * coef
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            break
        hess = (xd * (prob * (1 - prob))[:, None]).T @ xd / n + ridge * np.eye(p)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t, current = 1.0, history[-1]
        while t > 1e-12:
            trial = coef - t * step
            value = objective(trial)
            if value <= current - 1e-4 * t * float(grad @ step):
                break
            t *= 0.5
        if t <= 1e-12:
            break
        coef = trial
        history.append(value)
    return LogregFit(coef, history, gnorm)


def fit_logreg(
    table: DecisionTable,
    ridge: float | None = None,
    fit_intercept: bool = True,
    standardize: bool = True,
) -> DeciderModel:
    x = table.features
    _check_finite(x)
    y = table.y.astype(float)
    n, d = x.shape
    mu, sd = _standardizer(x) if standardize else (np.zeros(d), np.ones(d))
    xs = (x - mu) / sd
    xd = np.hstack([xs, np.ones((n, 1))]) if fit_intercept else xs
    lam = 1.0 / n if ridge is None else ridge
    fit = logreg_newton(xd, y, lam)
    coef = fit.coef
    params = {
        "w": coef[:d].tolist(),
        "b": float(coef[d]) if fit_intercept else 0.0,
        "fit_intercept": fit_intercept,
        "ridge": lam,
        "mu": mu.tolist(),
        "sd": sd.tolist(),
        "dim": d,
        "grad_norm": fit.grad_norm,
        "loss_history": fit.loss_history,
    }
    flags = () if fit.grad_norm <= 1e-8 else ("unconverged",)
    return DeciderModel("logreg", params, flags=flags)


def logreg_proba(model: DeciderModel, x: np.ndarray) -> np.ndarray:
    p = model.params
    xs = (x - np.asarray(p["mu"])) / np.asarray(p["sd"])
    return _sigmoid(xs @ np.asarray(p["w"]) + p["b"])


def _predict_logreg(model: DeciderModel, x: np.ndarray) -> np.ndarray:
    return logreg_proba(model, x) >= 0.5


# -- decision tree ---------------------------------------------------------------


def _gini(y: np.ndarray) -> float:
    if y.size == 0:
        return 0.0
    p = y.mean()
    return 2.0 * p * (1.0 - p)


def _leaf(y: np.ndarray) -> dict[str, Any]:
    ones = int(y.sum())
    zeros = int(y.size - ones)
    return {"leaf": True, "value": int(ones >= zeros), "counts": [zeros, ones]}


def _grow(x: np.ndarray, y: np.ndarray, depth: int, max_depth: int, n_total: int, gains: np.ndarray) -> dict:
    node = _leaf(y)
    if depth >= max_depth or y.min() == y.max():
        return node
    parent = _gini(y)
    best = None
    for j in range(x.shape[1]):
        col = x[:, j]
        u = np.unique(col)
        for t in (u[:-1] + u[1:]) / 2:
            left = col <= t
            nl = int(left.sum())
            gain = parent - (nl * _gini(y[left]) + (y.size - nl) * _gini(y[~left])) / y.size
            if best is None or gain > best[0] + 1e-12:
                best = (gain, j, float(t))
    if best is None:
        return node
    gain, j, t = best
    gains[j] += gain * y.size / n_total
    left = x[:, j] <= t
    return {
        "leaf": False,
        "feature": j,
        "threshold": t,
        "left": _grow(x[left], y[left], depth + 1, max_depth, n_total, gains),
        "right": _grow(x[~left], y[~left], depth + 1, max_depth, n_total, gains),
    }


def fit_tree(table: DecisionTable, max_depth: int = 3) -> DeciderModel:
    x = table.features
    _check_finite(x)
    y = table.y
    gains = np.zeros(x.shape[1])
    root = _grow(x, y, 0, max_depth, len(y), gains)
    return DeciderModel(
        "tree", {"root": root, "max_depth": max_depth, "dim": x.shape[1], "gini_importance": gains.tolist()}
    )


def tree_depth(node: dict) -> int:
    if node["leaf"]:
        return 0
    return 1 + max(tree_depth(node["left"]), tree_depth(node["right"]))


def _predict_tree(model: DeciderModel, x: np.ndarray) -> np.ndarray:
    out = np.empty(len(x), dtype=int)
    for i, row in enumerate(x):
        node = model.params["root"]
        while not node["leaf"]:
            node = node["left"] if row[node["feature"]] <= node["threshold"] else node["right"]
        out[i] = node["value"]
    return out


# -- k nearest neighbours -------------------------------------------------------


def fit_knn(table: DecisionTable, k: int = 15) -> DeciderModel:
    if len(table) == 0:
        raise DataError("cannot fit KNN on an empty table")
    x = table.features
    _check_finite(x)
    mu, sd = _standardizer(x)
    return DeciderModel(
        "knn",
        {
            "k": min(k, len(table)),
            "mu": mu.tolist(),
            "sd": sd.tolist(),
            "x": ((x - mu) / sd).tolist(),
            "y": table.y.tolist(),
            "dim": x.shape[1],
        },
    )


def _predict_knn(model: DeciderModel, x: np.ndarray) -> np.ndarray:
    p = model.params
    if "train" not in model._cache:
        model._cache["train"] = (np.asarray(p["x"], dtype=float), np.asarray(p["y"], dtype=int))
    xt, yt = model._cache["train"]
    xs = (x - np.asarray(p["mu"])) / np.asarray(p["sd"])
    dist = ((xs[:, None, :] - xt[None, :, :]) ** 2).sum(axis=2)
    k = p["k"]
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    votes = yt[nearest].sum(axis=1)
    # ties go to retrieval, the safer action
    return 2 * votes >= k


def predict_knn(model: DeciderModel, x) -> int:
    return model.predict_one(x)


# -- multi-layer perceptron ------------------------------------------------------


def fit_mlp(
    table: DecisionTable,
    seed: int = 0,
    hidden: tuple[int, int] = (64, 64),
    lr: float = 1e-2,
    epochs: int = 500,
) -> DeciderModel:
    """d -> 64 -> 64 -> 1 ReLU network trained by full-batch gradient descent on log-loss."""
    x = table.features
    _check_finite(x)
    y = table.y.astype(float)
    mu, sd = _standardizer(x)
    xs = (x - mu) / sd
    rng = np.random.default_rng(seed)
    sizes = [x.shape[1], *hidden, 1]
    ws = [rng.normal(0.0, math.sqrt(2.0 / a), size=(a, b)) for a, b in zip(sizes, sizes[1:])]
    bs = [np.zeros(b) for b in sizes[1:]]
    n = len(y)
    for _ in range(epochs):
        acts = [xs]
        for w, b in zip(ws[:-1], bs[:-1]):
            acts.append(np.maximum(acts[-1] @ w + b, 0.0))
        z = (acts[-1] @ ws[-1] + bs[-1])[:, 0]
        delta = ((_sigmoid(z) - y) / n)[:, None]
        for layer in range(len(ws) - 1, -1, -1):
            gw = acts[layer].T @ delta
            gb = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ ws[layer].T) * (acts[layer] > 0)
            ws[layer] -= lr * gw
            bs[layer] -= lr * gb
    return DeciderModel(
        "mlp",
        {
            "weights": [w.tolist() for w in ws],
            "biases": [b.tolist() for b in bs],
            "mu": mu.tolist(),
            "sd": sd.tolist(),
            "seed": seed,
            "dim": x.shape[1],
        },
    )


def mlp_proba(model: DeciderModel, x: np.ndarray) -> np.ndarray:
    p = model.params
    h = (x - np.asarray(p["mu"])) / np.asarray(p["sd"])
    ws = [np.asarray(w) for w in p["weights"]]
    bs = [np.asarray(b) for b in p["biases"]]
    for w, b in zip(ws[:-1], bs[:-1]):
        h = np.maximum(h @ w + b, 0.0)
    return _sigmoid((h @ ws[-1] + bs[-1])[:, 0])


def _predict_mlp(model: DeciderModel, x: np.ndarray) -> np.ndarray:
    return mlp_proba(model, x) >= 0.5


_PREDICT = {
    "threshold": _predict_threshold,
    "logreg": _predict_logreg,
    "tree": _predict_tree,
    "knn": _predict_knn,
    "mlp": _predict_mlp,
}


def fit_decider(kind: str, table: DecisionTable, seed: int = 0, threshold_mode: str = "log_grid_200") -> DeciderModel:
    if kind == "threshold":
        model = fit_threshold(table, threshold_mode)
    elif kind == "logreg":
        model = fit_logreg(table)
    elif kind == "tree":
        model = fit_tree(table)
    elif kind == "knn":
        model = fit_knn(table)
    elif kind == "mlp":
        model = fit_mlp(table, seed)
    else:
        raise ValueError(f"unknown decider kind {kind!r}")
    from .estimators.catalog import manifest_hash

    model.manifest_hash = manifest_hash(list(table.methods))
    return model


@dataclass
class SelectionReport:
    mode: str
    in_accuracy: dict[str, float]
    selected: str
    note: str = ""

    @property
    def max(self) -> float:
        return max(self.in_accuracy.values())

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.in_accuracy.values())))

    @property
    def drop(self) -> float:
        return self.max - self.mean

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "in_accuracy": self.in_accuracy,
            "selected": self.selected,
            "max": self.max,
            "mean": self.mean,
            "drop": self.drop,
            "note": self.note,
        }


def select_best(
    train: DecisionTable,
    test: DecisionTable | None = None,
    kinds: Sequence[str] = DECIDER_KINDS,
    mode: str = "holdout",
    seed: int = 0,
    holdout_fraction: float = 0.2,
) -> tuple[DeciderModel, SelectionReport]:
    """Fit every decider kind and keep the one with the best simulated In-Accuracy.

    ``paper_faithful_test`` scores candidates on ``test`` (this leaks the test
    split into model choice); ``holdout`` scores them on a seeded 20% slice
    of ``train`` and refits the winner on all of ``train``.
    """
    kinds = [k for k in kinds if k != "threshold" or train.features.shape[1] == 1]
    if mode == "paper_faithful_test":
        if test is None:
            raise ValueError("paper_faithful_test mode needs the test table")
        fitted = {k: fit_decider(k, train, seed) for k in kinds}
        scores = {k: simulated_in_accuracy(m.predict(test.features), test) for k, m in fitted.items()}
        best = max(kinds, key=lambda k: scores[k])
        model = fitted[best]
        note = "model chosen on the test split (replicates the published protocol; leaks test data)"
    elif mode == "holdout":
        perm = np.random.default_rng(seed).permutation(len(train))
        n_hold = max(1, int(round(holdout_fraction * len(train))))
        hold, fit_part = train.subset(perm[:n_hold]), train.subset(perm[n_hold:])
        if len(fit_part) == 0:
            fit_part = hold
        fitted = {k: fit_decider(k, fit_part, seed) for k in kinds}
        scores = {k: simulated_in_accuracy(m.predict(hold.features), hold) for k, m in fitted.items()}
        best = max(kinds, key=lambda k: scores[k])
        model = fit_decider(best, train, seed)
        note = f"model chosen on a {holdout_fraction:.0%} holdout of train"
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    model.mode = mode
    return model, SelectionReport(mode, scores, best, note)
