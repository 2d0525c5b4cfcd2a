import io

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from lolodcv.cross_validation import (
    build_folds,
    cv_curve,
    folds_from_levels,
    parallel_map,
    select_lambda,
    select_lambda_literal,
    write_curve,
)
from lolodcv.errors import DataError
from lolodcv.features import Dataset, VariableSpec, validate_schema
from lolodcv.lasso_path import build_grid, lambda_max


def level_dataset(sizes):
    labels = [f"L{i}" for i in range(len(sizes))]
    schema = validate_schema([
        VariableSpec("Level", "nominal", "level-key", labels),
        VariableSpec("y", "discrete", "response"),
    ])
    lv = np.array([labels[i] for i, s in enumerate(sizes) for _ in range(s)], dtype=object)
    return Dataset(schema, {"Level": lv, "y": np.ones(len(lv))})


def grouped_problem(seed, n_levels=8, per=15, p=6, signal=0.0):
    rng = np.random.default_rng(seed)
    n = n_levels * per
    X = rng.standard_normal((n, p))
    X = (X - X.mean(axis=0)) / X.std(axis=0, ddof=1)
    y = rng.poisson(np.exp(1.0 + signal * X[:, 0])).astype(float)
    assignment = np.repeat(np.arange(n_levels), per)
    return X, y, assignment


def plan_for(assignment):
    from lolodcv.cross_validation import FoldPlan

    return FoldPlan(np.asarray(assignment), int(assignment.max()) + 1)


class TestFolds:
    def test_nine_villages_loo(self, survey_data):
        plan = build_folds(survey_data.dataset, "Village", 9, seed=1)
        assert plan.n_folds == 9
        assert plan.fold_levels == tuple((f"V{i}",) for i in range(1, 10))
        for k in range(9):
            _, test = plan.split(k)
            assert set(survey_data.dataset.columns["Village"][test]) == {f"V{k + 1}"}

    def test_two_folds_unequal_levels(self):
        ds = level_dataset([5, 5, 1, 1])
        plan = build_folds(ds, "Level", 2, seed=0)
        assert np.all(plan.sizes > 0)
        for lv in ("L0", "L1", "L2", "L3"):
            assert len(set(plan.assignment[ds.columns["Level"] == lv])) == 1

    def test_same_seed_same_plan(self, survey_data):
        a = build_folds(survey_data.dataset, "House", 5, seed=4)
        b = build_folds(survey_data.dataset, "House", 5, seed=4)
        assert np.array_equal(a.assignment, b.assignment)

    def test_random_rows_without_key(self, survey_data):
        plan = build_folds(survey_data.dataset, None, 10, seed=2)
        assert plan.sizes.sum() == survey_data.dataset.n
        assert plan.sizes.max() - plan.sizes.min() <= 1

    def test_needs_two_folds(self, survey_data):
        with pytest.raises(DataError):
            build_folds(survey_data.dataset, "Village", 1)

    def test_too_many_folds(self):
        with pytest.raises(DataError):
            build_folds(level_dataset([2, 2]), "Level", 3)

    def test_numeric_key_rejected(self, survey_data):
        with pytest.raises(DataError):
            build_folds(survey_data.dataset, "Rainfall", 3)

    @given(st.lists(st.integers(1, 12), min_size=2, max_size=15), st.integers(0, 2**31 - 1), st.data())
    def test_coverage_and_no_split(self, sizes, seed, data):
        n_folds = data.draw(st.integers(2, len(sizes)))
        levels = [f"L{i}" for i, s in enumerate(sizes) for _ in range(s)]
        assignment, members = folds_from_levels(levels, n_folds, seed)
        assert np.bincount(assignment, minlength=n_folds).sum() == len(levels)
        assert np.all(np.bincount(assignment, minlength=n_folds) > 0)
        for lv in set(levels):
            assert len({a for a, l in zip(assignment, levels) if l == lv}) == 1
        assert sorted(l for m in members for l in m) == sorted(set(levels))


class TestSelectLambda:
    def test_worked_example(self):
        assert select_lambda([1, 0.1, 0.01], [10, 4, 6], [1, 1, 1]) == (0.1, 0.1)

    def test_increasing_curve(self):
        assert select_lambda([1, 0.1, 0.01], [1, 2, 3], [0.1, 0.1, 0.1]) == (1.0, 1.0)

    def test_tie_prefers_larger_penalty(self):
        lmin, _ = select_lambda([1, 0.5, 0.25, 0.1], [5, 3, 3, 4], [0, 0, 0, 0])
        assert lmin == 0.5

    def test_one_se_rule(self):
        lmin, l1se = select_lambda([1, 0.5, 0.25, 0.1], [5.0, 3.4, 3.0, 3.2], [0.5, 0.5, 0.5, 0.5])
        assert (lmin, l1se) == (0.25, 0.5)

    def test_literal_rule_can_go_below_lambda_min(self):
        values, mean, se = [1, 0.5, 0.25], [3.0, 2.0, 2.05], [1.0, 0.5, 0.0]
        lmin, _ = select_lambda(values, mean, se)
        assert select_lambda_literal(values, mean, se) < lmin

    def test_ignores_non_finite(self):
        assert select_lambda([1, 0.1, 0.01], [np.inf, 2, np.nan], [0, 0.1, 0]) == (0.1, 0.1)

    @given(st.integers(0, 2**31 - 1))
    def test_one_se_not_below_min(self, seed):
        rng = np.random.default_rng(seed)
        values = build_grid(1.0, 30, 0.01).values
        mean = rng.uniform(0, 10, 30)
        se = rng.uniform(0, 2, 30)
        lmin, l1se = select_lambda(values, mean, se)
        assert l1se >= lmin

    @given(st.integers(0, 2**31 - 1), st.floats(-1e3, 1e3))
    def test_shift_invariant(self, seed, c):
        rng = np.random.default_rng(seed)
        values = build_grid(1.0, 20, 0.01).values
        mean = np.round(rng.uniform(0, 10, 20), 2)
        se = np.round(rng.uniform(0.5, 2, 20), 2)
        # exact binary shift so ties and the one-SE band are preserved
        c = float(np.round(c))
        assert select_lambda(values, mean + c, se) == select_lambda(values, mean, se)


class TestCvCurve:
    def test_null_data_selects_near_lambda_max(self):
        hits = 0
        for seed in range(20):
            X, y, a = grouped_problem(seed)
            grid = build_grid(lambda_max(X, y), 30, 0.01)
            curve = cv_curve(X, y, plan_for(a), grid, full_path=False)
            hits += curve.index_min <= 1
        assert hits > 10

    def test_strong_predictor_moves_below_lambda_max(self):
        X, y, a = grouped_problem(0, signal=0.6)
        grid = build_grid(lambda_max(X, y), 30, 0.01)
        curve = cv_curve(X, y, plan_for(a), grid)
        assert curve.lambda_min < grid.lambda_max
        assert curve.path.active_set(curve.index_min)[0] == "x0"

    def test_standard_error(self):
        X, y, a = grouped_problem(3, signal=0.3)
        grid = build_grid(lambda_max(X, y), 10, 0.05)
        curve = cv_curve(X, y, plan_for(a), grid)
        k = curve.fold_scores.shape[0]
        assert_allclose(curve.score_se, curve.fold_scores.std(axis=0, ddof=1) / np.sqrt(k))
        assert_allclose(curve.mean_score, curve.fold_scores.mean(axis=0))

    def test_order_invariance(self):
        X, y, a = grouped_problem(5, signal=0.4)
        grid = build_grid(lambda_max(X, y), 15, 0.01)
        base = cv_curve(X, y, plan_for(a), grid, full_path=False)
        perm = np.random.default_rng(1).permutation(len(y))
        other = cv_curve(X[perm], y[perm], plan_for(a[perm]), grid, full_path=False)
        assert_allclose(other.mean_score, base.mean_score, rtol=1e-9)
        assert (other.lambda_min, other.lambda_1se) == (base.lambda_min, base.lambda_1se)

    def test_jobs_do_not_change_result(self):
        X, y, a = grouped_problem(6, signal=0.4)
        grid = build_grid(lambda_max(X, y), 15, 0.01)
        one = cv_curve(X, y, plan_for(a), grid, jobs=1, full_path=False)
        four = cv_curve(X, y, plan_for(a), grid, jobs=4, full_path=False)
        assert np.array_equal(one.fold_scores, four.fold_scores)

    def test_zero_training_fold_skipped(self):
        X, y, a = grouped_problem(7, n_levels=3, per=10, signal=0.2)
        y[a != 0] = 0.0
        grid = build_grid(lambda_max(X, y), 5, 0.1)
        curve = cv_curve(X, y, plan_for(a), grid, full_path=False)
        assert curve.folds_used == (1, 2)

    def test_write_curve(self, tmp_path):
        X, y, a = grouped_problem(8, signal=0.3)
        grid = build_grid(lambda_max(X, y), 6, 0.1)
        curve = cv_curve(X, y, plan_for(a), grid)
        buf = io.StringIO()
        write_curve(curve, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "lambda,mean_score,score_se,n_active"
        assert len(lines) == 1 + 6 + 1
        assert lines[-1].startswith("#selected")


def test_parallel_map_keeps_order():
    assert parallel_map(lambda x: x * x, range(10), jobs=4) == [x * x for x in range(10)]
