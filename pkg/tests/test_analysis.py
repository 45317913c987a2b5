import math

import numpy as np
import pytest
from scipy.stats import friedmanchisquare, studentized_range

from ragate.analysis import (
    NEMENYI_CRITICAL,
    classifier_sensitivity,
    friedman,
    hybrid_feature_importance,
    importance_rank_table,
    logreg_hessian,
    nemenyi,
    nemenyi_exact_p,
    ood_matrix,
    power_iteration,
    rademacher_estimate,
    sharpness,
)
from ragate.deciders import DecisionTable, DeciderModel, fit_logreg, fit_tree


def table_from(x, y):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(y, dtype=bool)
    return DecisionTable([str(i) for i in range(len(y))], x, ~y, y)


# -- transfer matrices ------------------------------------------------------------


def test_ood_matrix_examples():
    values = {("a", "a"): 0.5, ("b", "b"): 0.6, ("a", "b"): 0.6, ("b", "a"): 0.48}
    cells = {(c.train, c.test): c for c in ood_matrix("m", values)}
    assert cells[("a", "a")].change_pct == 0.0 and cells[("b", "b")].change_pct == 0.0
    assert cells[("b", "a")].change_pct == pytest.approx(-4.0)
    zero = ood_matrix("m", {("a", "a"): 0.0, ("b", "b"): 0.5, ("a", "b"): 0.4, ("b", "a"): 0.1})
    flagged = [c for c in zero if c.flags]
    assert len(flagged) == 1 and flagged[0].change_pct is None


def test_ood_matrix_counts_cells():
    names = [f"d{i}" for i in range(6)]
    values = {(a, b): 0.5 for a in names for b in names}
    cells = ood_matrix("m", values, datasets=names)
    assert len(cells) == 36
    assert sum(c.train != c.test for c in cells) == 30
    assert all(c.change_pct == 0 for c in cells if c.train == c.test)


# -- Friedman and Nemenyi -----------------------------------------------------------


def test_friedman_identical_columns():
    res = friedman(np.ones((5, 3)))
    assert res.statistic == 0 and res.p_value == 1.0
    with pytest.raises(ValueError):
        friedman(np.ones((1, 3)))


def test_friedman_matches_scipy_and_is_permutation_invariant():
    rng = np.random.default_rng(0)
    for _ in range(30):
        m = rng.integers(0, 4, size=(6, 4)).astype(float)
        if (m == m[:, :1]).all():
            continue
        ours = friedman(m, p_method="chi2")
        ref = friedmanchisquare(*m.T)
        assert ours.statistic == pytest.approx(ref.statistic, abs=1e-9)
        assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-9)
        perm = rng.permutation(4)
        again = friedman(m[:, perm], p_method="chi2")
        assert again.statistic == pytest.approx(ours.statistic, abs=1e-12)
        assert again.p_value == pytest.approx(ours.p_value, abs=1e-12)
        small = m[:4, :3]
        if not (small == small[:, :1]).all():
            assert friedman(small[:, [2, 0, 1]]).p_value == pytest.approx(friedman(small).p_value, abs=1e-12)


def test_friedman_exact_small_case_by_enumeration():
    # 2 x 2 without ties: the rank-sum gap is 0 or +-2; p(stat >= observed) enumerates 4 layouts
    res = friedman(np.array([[2.0, 1.0], [3.0, 1.0]]), p_method="exact")
    assert res.p_method == "exact" and res.statistic == pytest.approx(2.0)
    assert res.p_value == pytest.approx(0.5)


def test_friedman_large_tables_fall_back_quickly():
    res = friedman(np.random.default_rng(1).normal(size=(30, 5)))
    assert res.p_method == "chi2" and res.p_value == res.chi2_p_value
    with pytest.raises(ValueError):
        friedman(np.random.default_rng(1).normal(size=(30, 5)), p_method="exact")


def test_nemenyi_examples():
    res = nemenyi([1.0, 2.0, 3.0], n=4)
    assert [res.brackets[i][i] for i in range(3)] == ["1.00"] * 3
    assert all(res.brackets[i][j] == res.brackets[j][i] for i in range(3) for j in range(3))
    assert nemenyi([2.0, 2.0], 5).brackets[0][1] == "1.00"
    cd01 = nemenyi([1.0, 3.0, 2.0], 30).critical_distance[0.01]
    gap = nemenyi([1.0, 1.0 + cd01 * 1.01, 2.0], 30)
    assert gap.brackets[0][1] == "<0.01"
    with pytest.raises(ValueError):
        nemenyi(list(range(11)), 5)


def test_nemenyi_table_matches_studentized_range():
    for alpha, row in NEMENYI_CRITICAL.items():
        for k, cv in enumerate(row, start=2):
            exact = studentized_range.ppf(1 - alpha, k, np.inf) / math.sqrt(2)
            assert cv == pytest.approx(exact, abs=2e-3)
            assert nemenyi_exact_p(cv, k) == pytest.approx(alpha, abs=1e-3)
    assert nemenyi_exact_p(0.0, 3) == 1.0


# -- complexity ---------------------------------------------------------------------


def test_constant_class_rademacher():
    n = 400
    res = rademacher_estimate(np.zeros(n), "constant", draws=200, seed=1)
    assert res.estimate == pytest.approx(math.sqrt(2 / (math.pi * n)), rel=0.15)
    assert res.normalized == pytest.approx(1.0)
    assert rademacher_estimate(np.zeros(10), "constant", draws=5).flags == ("few-draws",)
    with pytest.raises(ValueError):
        rademacher_estimate(np.zeros(4), "svm")


def test_tree_shatters_small_point_sets():
    res = rademacher_estimate(np.arange(4.0), "tree", draws=50, seed=0)
    assert res.estimate == pytest.approx(1.0)


def test_rademacher_nonnegative_for_linear_class():
    rng = np.random.default_rng(2)
    res = rademacher_estimate(rng.normal(size=100), "logreg", draws=30, seed=0)
    assert res.estimate >= 0 and res.stderr > 0 and res.n == 100


def test_sharpness_scalar_case():
    # x = 1 for all points, balanced labels: p = 0.5 at the optimum, H = p(1-p) x^2
    t = table_from(np.ones(10), [0, 1] * 5)
    model = fit_logreg(t, ridge=0.0, fit_intercept=False, standardize=False)
    assert sharpness(model, t).estimate == 0.25


def test_sharpness_matches_dense_solver_and_ridge_shift():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(200, 5))
    y = (x @ rng.normal(size=5) + rng.normal(size=200)) > 0
    t = table_from(x, y)
    model = fit_logreg(t)
    h = logreg_hessian(model, x)
    lam = sharpness(model, t).estimate
    assert lam == pytest.approx(np.linalg.eigvalsh(h).max(), rel=1e-6)
    assert lam >= model.params["ridge"]
    shifted = power_iteration(h + 0.1 * np.eye(len(h)))
    assert shifted == pytest.approx(lam + 0.1, rel=1e-8)


def test_sharpness_rejects_unconverged_and_other_kinds():
    t = table_from(np.arange(6.0), [0, 0, 0, 1, 1, 1])
    model = fit_logreg(t)
    stale = DeciderModel("logreg", dict(model.params, grad_norm=1e-3))
    with pytest.raises(ValueError, match="refit"):
        sharpness(stale, t)
    with pytest.raises(ValueError):
        sharpness(fit_tree(t), t)


# -- importance and sensitivity ---------------------------------------------------------


def test_feature_importance_examples():
    rng = np.random.default_rng(4)
    y = rng.integers(0, 2, 200)
    x = np.column_stack([rng.normal(size=200), y + 0.01 * rng.normal(size=200), rng.normal(size=200)])
    fi = hybrid_feature_importance(fit_logreg(table_from(x, y)), ["a", "label", "c"], x)
    assert fi.ranking[0][0] == "label" and not fi.degenerate and not fi.collinear_pairs
    dup = np.column_stack([x, x[:, 1]])
    fi2 = hybrid_feature_importance(fit_logreg(table_from(dup, y)), ["a", "label", "c", "copy"], dup)
    assert ("label", "copy") in fi2.collinear_pairs
    zero = DeciderModel("logreg", {"w": [0.0, 0.0]})
    assert hybrid_feature_importance(zero, ["a", "b"]).degenerate
    assert importance_rank_table({"d": fi})["d"]["label"] == 1
    with pytest.raises(ValueError):
        hybrid_feature_importance(DeciderModel("knn", {}), ["a"])
    tree = fit_tree(table_from(x, y))
    assert hybrid_feature_importance(tree, ["a", "label", "c"]).ranking[0][0] == "label"


def test_classifier_sensitivity():
    rows = classifier_sensitivity({
        "m1": {"d": {"lr": 0.5, "knn": 0.4, "mlp": 0.3}},
        "m2": {"d": {"lr": 0.45, "knn": 0.45, "mlp": 0.45}},
    })
    by = {r.method: r for r in rows}
    assert by["m1"].drop == pytest.approx(0.1) and by["m2"].drop == 0.0
    assert by["m1"].max_rank == 1.0 and by["m1"].mean_rank == 2.0 and by["m1"].difference == -1.0
    with pytest.raises(ValueError):
        classifier_sensitivity({"m": {"d": {"lr": 0.5}}})
