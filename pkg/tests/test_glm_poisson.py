import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from lolodcv.errors import DataError, NumericalError
from lolodcv.features import build_design
from lolodcv.glm_poisson import (
    Coefficients,
    deviance,
    fit_irls,
    independent_columns,
    log_likelihood,
    predict_mu,
    saturated_log_likelihood,
    score,
    unit_deviance,
)

from conftest import poisson_problem


class TestLogLikelihood:
    def test_null_coefficients_two_zero_counts(self):
        coef = Coefficients(0.0, np.zeros(0))
        assert log_likelihood(coef, np.zeros((2, 0)), [0, 0]) == pytest.approx(-2.0, abs=1e-15)

    def test_single_observation(self):
        coef = Coefficients(np.log(2.0), np.zeros(0))
        expected = 2 * np.log(2.0) - 2.0 - np.log(2.0)  # y*eta - mu - log(y!)
        assert log_likelihood(coef, np.zeros((1, 0)), [2]) == pytest.approx(expected, abs=1e-14)

    def test_gradient_zero_at_optimum(self, rng):
        X, y, _ = poisson_problem(rng, 60, 3)
        fit = fit_irls(X, y)
        g0, g = score(fit.coefficients, X, y)
        assert abs(g0) < 1e-8
        assert np.max(np.abs(g)) < 1e-8

    def test_overflow_reports_row(self):
        coef = Coefficients(0.0, np.array([1.0]))
        X = np.array([[0.0], [1e4]])
        with pytest.raises(NumericalError, match="row 1"):
            log_likelihood(coef, X, [0, 0])

    @pytest.mark.parametrize("seed", range(20))
    def test_score_matches_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        X, y, beta = poisson_problem(rng, 40, 4)
        theta = np.concatenate([[0.3], beta + 0.2 * rng.standard_normal(4)])

        def ll(t):
            return log_likelihood(Coefficients(t[0], t[1:]), X, y)

        h = 1e-5
        num = np.array([(ll(theta + h * e) - ll(theta - h * e)) / (2 * h) for e in np.eye(5)])
        g0, g = score(Coefficients(theta[0], theta[1:]), X, y)
        ana = np.concatenate([[g0], g])
        assert_allclose(ana, num, rtol=1e-4, atol=1e-6)


class TestDeviance:
    def test_saturated_is_zero(self):
        y = np.array([1.0, 4.0, 7.0])
        assert deviance(y, y) == 0.0

    def test_hand_value(self):
        # 2*(0 - 0 + 1.5) + 2*(3 ln 2 - 1.5)
        assert deviance([0, 3], [1.5, 1.5]) == pytest.approx(4.158883083359672, abs=1e-12)

    def test_matches_loglik_difference(self, rng):
        for _ in range(10):
            y = rng.poisson(3.0, 25).astype(float)
            mu = rng.uniform(0.2, 6.0, 25)
            eta = np.log(mu)
            ll_model = float(np.sum(y * eta - mu) - np.sum([np.log(np.arange(1, k + 1)).sum() for k in y.astype(int)]))
            assert deviance(y, mu) == pytest.approx(2 * (saturated_log_likelihood(y) - ll_model), abs=1e-10)

    def test_rejects_nonpositive_mu(self):
        with pytest.raises(DataError):
            deviance([1, 2], [1.0, 0.0])

    @given(st.lists(st.integers(0, 50), min_size=1, max_size=30), st.floats(0.05, 40.0))
    def test_nonnegative(self, ys, m):
        y = np.array(ys, dtype=float)
        assert deviance(y, np.full(y.size, m)) >= -1e-12

    @given(st.lists(st.integers(1, 50), min_size=1, max_size=20), st.floats(0.5, 2.0))
    def test_zero_only_at_y(self, ys, factor):
        y = np.array(ys, dtype=float)
        d = deviance(y, y * factor)
        if factor == 1.0:
            assert d == 0.0
        else:
            assert d > 0.0

    def test_unit_deviance_sums_to_total(self, rng):
        y = rng.poisson(2.0, 30).astype(float)
        mu = rng.uniform(0.5, 3.0, 30)
        assert unit_deviance(y, mu).sum() == pytest.approx(deviance(y, mu), rel=1e-14)


class TestFitIrls:
    def test_intercept_only_is_log_mean(self):
        fit = fit_irls(np.zeros((3, 0)), [1, 2, 3])
        assert fit.coefficients.intercept == pytest.approx(np.log(2.0), abs=1e-8)

    def test_two_group_closed_form(self):
        x = np.array([0, 0, 0, 1, 1, 1], dtype=float)[:, None]
        y = np.array([0, 1, 2, 2, 3, 4], dtype=float)  # group means 1 and 3
        fit = fit_irls(x, y)
        assert fit.coefficients.intercept == pytest.approx(0.0, abs=1e-8)
        assert fit.coefficients.beta[0] == pytest.approx(np.log(3.0), abs=1e-8)

    def test_beats_generating_coefficients(self, rng):
        X, y, beta = poisson_problem(rng, 30, 3)
        fit = fit_irls(X, y)
        assert fit.log_likelihood >= log_likelihood(Coefficients(0.5, beta), X, y)

    def test_score_equation(self, rng):
        for _ in range(5):
            X, y, _ = poisson_problem(rng, 50, 4)
            fit = fit_irls(X, y)
            assert fit.converged
            g0, g = score(fit.coefficients, X, y)
            assert max(abs(g0), np.max(np.abs(g))) < 1e-6

    def test_all_zero_response(self):
        fit = fit_irls(np.zeros((4, 0)), [0, 0, 0, 0], max_iter=200)
        assert np.exp(fit.coefficients.intercept) < 1e-6

    def test_nested_models_never_worse(self, rng):
        for _ in range(10):
            X, y, _ = poisson_problem(rng, 40, 4)
            devs = [fit_irls(X, y, np.arange(k)).deviance for k in range(5)]
            assert all(b <= a + 1e-8 for a, b in zip(devs, devs[1:]))

    def test_drops_trailing_dependent_column(self, rng):
        X, y, _ = poisson_problem(rng, 40, 2)
        X = np.column_stack([X, X[:, 0] + X[:, 1]])
        fit = fit_irls(X, y)
        assert fit.dropped == (2,)
        assert fit.coefficients.beta[2] == 0.0
        ref = fit_irls(X[:, :2], y)
        assert_allclose(fit.coefficients.beta[:2], ref.coefficients.beta, atol=1e-10)

    def test_column_subset(self, rng):
        X, y, _ = poisson_problem(rng, 50, 4)
        fit = fit_irls(X, y, [1, 3])
        assert fit.coefficients.support.tolist() == [1, 3]
        ref = fit_irls(X[:, [1, 3]], y)
        assert_allclose(fit.coefficients.beta[[1, 3]], ref.coefficients.beta, atol=1e-10)

    def test_rejects_negative_counts(self):
        with pytest.raises(DataError, match="nonnegative"):
            fit_irls(np.zeros((2, 0)), [1, -1])


class TestIndependentColumns:
    def test_constant_column_dependent_on_intercept(self):
        X = np.column_stack([np.ones(5), np.arange(5.0)])
        keep, drop = independent_columns(X)
        assert keep == [1] and drop == [0]


class TestPrediction:
    def test_zero_coefficients_give_one(self):
        assert_allclose(predict_mu(Coefficients.null(2), np.ones((3, 2))), 1.0)

    def test_log_three_intercept(self):
        assert_allclose(predict_mu(Coefficients.null(2, np.log(3.0)), np.ones((3, 2))), 3.0, rtol=1e-15)

    def test_frame_round_trip(self, small_dataset, rng):
        design = build_design(small_dataset, "original")
        coef = Coefficients(0.2, rng.standard_normal(design.p) * 0.1)
        orig = coef.to_frame("original", design)
        assert orig.frame == "original"
        assert_allclose(predict_mu(orig, design), predict_mu(coef, design), rtol=1e-10)
        back = orig.to_frame("standardized", design)
        assert_allclose(back.beta, coef.beta, rtol=1e-12)
        assert back.intercept == pytest.approx(coef.intercept, abs=1e-12)
