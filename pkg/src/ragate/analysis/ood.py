"""Out-of-distribution transfer matrices and rank-based significance tests."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import chi2, rankdata

# Two-tailed Nemenyi critical values q_alpha (studentized range / sqrt 2, infinite df), k = 2..10.
NEMENYI_CRITICAL = {
    0.01: (2.576, 2.913, 3.113, 3.255, 3.364, 3.452, 3.526, 3.590, 3.646),
    0.05: (1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164),
    0.10: (1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920),
}
EXACT_STATE_LIMIT = 200_000
EXACT_WORK_LIMIT = 5_000_000


@dataclass(frozen=True)
class TransferCell:
    method: str
    train: str
    test: str
    metric: str
    in_domain: float
    transferred: float
    change_pct: float | None
    flags: tuple[str, ...] = ()


def ood_matrix(
    method: str,
    values: Mapping[tuple[str, str], float],
    metric: str = "in_acc",
    datasets: Sequence[str] | None = None,
) -> list[TransferCell]:
    """Relative change (%) of ``values[(train, test)]`` against ``values[(test, test)]``."""
    datasets = list(datasets) if datasets is not None else sorted({t for pair in values for t in pair})
    cells = []
    for train, test in itertools.product(datasets, datasets):
        base = values[(test, test)]
        moved = values[(train, test)]
        if train == test:
            change, flags = 0.0, ()
        elif base == 0:
            change, flags = None, ("zero-in-domain",)
        else:
            change, flags = 100.0 * (moved - base) / base, ()
        cells.append(TransferCell(method, train, test, metric, base, moved, change, flags))
    return cells


@dataclass(frozen=True)
class FriedmanResult:
    statistic: float
    p_value: float
    chi2_p_value: float
    mean_ranks: np.ndarray
    n: int
    k: int
    p_method: str


def _row_ranks(matrix: np.ndarray, higher_is_better: bool) -> np.ndarray:
    data = -matrix if higher_is_better else matrix
    return np.vstack([rankdata(row, method="average") for row in data])


def _statistic_from_rank_sums(rank_sums: np.ndarray, n: int, k: int, tie_sum: float) -> np.ndarray:
    """Tie-corrected Friedman chi-square from per-method rank sums (last axis = methods)."""
    mean_ranks = rank_sums / n
    stat = 12.0 * n / (k * (k + 1)) * ((mean_ranks - (k + 1) / 2.0) ** 2).sum(axis=-1)
    correction = 1.0 - tie_sum / (n * k * (k * k - 1))
    if correction <= 0:
        return np.zeros_like(stat)
    return stat / correction


def _exact_p(ranks: np.ndarray, observed: float, tie_sum: float) -> float | None:
    """Exact permutation p-value by convolving each row's distinct rank orderings.

    Returns ``None`` when the state space or the enumeration work is too large.
    """
    n, k = ranks.shape
    # rank sums move in half steps, and the last column is fixed by the others
    bound = (2 * n * (k - 1) + 1) ** (k - 1)
    if min(bound, EXACT_STATE_LIMIT) * math.factorial(k) > EXACT_WORK_LIMIT:
        return None
    states: dict[tuple[float, ...], int] = {tuple([0.0] * k): 1}
    total = 1
    for row in ranks:
        perms = set(itertools.permutations(row.tolist()))
        total *= len(perms)
        nxt: dict[tuple[float, ...], int] = {}
        for state, count in states.items():
            for perm in perms:
                key = tuple(s + p for s, p in zip(state, perm))
                nxt[key] = nxt.get(key, 0) + count
        states = nxt
        if len(states) > EXACT_STATE_LIMIT:
            return None
    sums = np.array(list(states.keys()))
    counts = np.array(list(states.values()), dtype=float)
    stats = _statistic_from_rank_sums(sums, n, k, tie_sum)
    return float(counts[stats >= observed - 1e-9].sum() / total)


def friedman(matrix: np.ndarray, higher_is_better: bool = True, p_method: str = "auto") -> FriedmanResult:
    """Friedman test on an ``n_datasets x k_methods`` matrix.

    ``p_method``: ``"chi2"`` uses the chi-square tail with k-1 degrees of
    freedom; ``"exact"`` the permutation distribution of within-row ranks;
    ``"auto"`` is exact when that distribution is small enough to enumerate.
    """
    m = np.asarray(matrix, dtype=float)
    n, k = m.shape
    if n < 2 or k < 2:
        raise ValueError("Friedman test needs at least 2 datasets and 2 methods")
    ranks = _row_ranks(m, higher_is_better)
    tie_sum = 0.0
    for row in ranks:
        _, counts = np.unique(row, return_counts=True)
        tie_sum += float((counts**3 - counts).sum())
    stat = float(_statistic_from_rank_sums(ranks.sum(axis=0), n, k, tie_sum))
    chi_p = float(chi2.sf(stat, k - 1)) if stat > 0 else 1.0
    p, used = chi_p, "chi2"
    if p_method in ("auto", "exact") and stat > 0:
        exact = _exact_p(ranks, stat, tie_sum)
        if exact is not None:
            p, used = exact, "exact"
        elif p_method == "exact":
            raise ValueError("matrix too large for the exact Friedman distribution")
    return FriedmanResult(stat, p, chi_p, ranks.mean(axis=0), n, k, used)


@dataclass(frozen=True)
class NemenyiResult:
    q: np.ndarray
    brackets: list[list[str]]
    critical_distance: dict[float, float]


def nemenyi(mean_ranks: Sequence[float], n: int) -> NemenyiResult:
    """Pairwise Nemenyi test; p-values reported as brackets from the critical table."""
    r = np.asarray(mean_ranks, dtype=float)
    k = len(r)
    if not 2 <= k <= 10:
        raise ValueError(f"Nemenyi critical table covers 2..10 methods, got {k}")
    se = math.sqrt(k * (k + 1) / (6.0 * n))
    q = np.abs(r[:, None] - r[None, :]) / se
    crit = {a: NEMENYI_CRITICAL[a][k - 2] for a in sorted(NEMENYI_CRITICAL)}
    brackets = []
    for i in range(k):
        row = []
        for j in range(k):
            if i == j or q[i, j] == 0:
                row.append("1.00")
                continue
            for alpha, cv in crit.items():
                if q[i, j] >= cv:
                    row.append(f"<{alpha:g}")
                    break
            else:
                row.append(f">={max(crit):g}")
        brackets.append(row)
    return NemenyiResult(q, brackets, {a: cv * se for a, cv in crit.items()})


def nemenyi_exact_p(q: float, k: int) -> float:
    """Studentized-range tail probability for a Nemenyi q (for reference reporting)."""
    from scipy.stats import studentized_range

    if q == 0:
        return 1.0
    return float(studentized_range.sf(q * math.sqrt(2.0), k, np.inf))
