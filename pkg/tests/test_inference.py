import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from alasso._normal import normal_cdf, normal_quantile, two_sided_critical
from alasso.dataset import TimeSeriesDataset
from alasso.errors import SingularDesignError
from alasso.estimators import FitResult, PenaltySpec, adaptive_lasso_fit, ols_fit
from alasso.inference import (
    BiasCorrection,
    LimitDistSpec,
    MomentEstimates,
    bias_correction,
    coefficient_test,
    confidence_interval,
    estimate_moments,
    limit_quantiles,
)


def make_dataset(y, z, names=None):
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[0] == 1 and len(y) > 1:
        z = z.T
    names = names or tuple(f"c{j}" for j in range(z.shape[1]))
    return TimeSeriesDataset(y=np.asarray(y, dtype=float), design=z, names=names, origin="test")


class TestNormalQuantile:
    def test_known_value(self):
        assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-9)
        assert two_sided_critical(0.05) == pytest.approx(1.959963984540054, abs=1e-9)

    def test_against_bisection_oracle(self):
        # invert the erfc-based CDF by bisection, independent of the
        # rational approximation
        def oracle(p):
            lo, hi = -10.0, 10.0
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if normal_cdf(mid) < p:
                    lo = mid
                else:
                    hi = mid
            return 0.5 * (lo + hi)

        for p in (1e-6, 0.01, 0.02425, 0.3, 0.5, 0.9, 0.975, 0.995, 1 - 1e-6):
            assert normal_quantile(p) == pytest.approx(oracle(p), abs=1e-9)

    def test_symmetry(self):
        for p in (0.6, 0.9, 0.99):
            assert normal_quantile(p) == pytest.approx(-normal_quantile(1 - p), abs=1e-12)

    def test_domain(self):
        for bad in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(ValueError):
                normal_quantile(bad)


class TestEstimateMoments:
    def test_constant_column_alternating_residuals(self):
        n = 10
        data = make_dataset(np.zeros(n), np.ones((n, 1)))
        residuals = np.tile([1.0, -1.0], n // 2)
        m = estimate_moments(data, residuals)
        assert m.gram[0, 0] == pytest.approx(1.0)
        assert m.score_cov[0, 0] == pytest.approx(1.0)
        assert m.sandwich[0, 0] == pytest.approx(1.0)

    def test_large_n_homoskedastic_matches_classical(self):
        rng = np.random.default_rng(20)
        n, sigma = 100_000, 1.7
        z = rng.standard_normal((n, 3))
        residuals = sigma * rng.standard_normal(n)
        data = make_dataset(rng.standard_normal(n), z)
        m = estimate_moments(data, residuals)
        classical = sigma**2 * np.linalg.inv(m.gram)
        assert_allclose(m.sandwich, classical, rtol=0.05, atol=0.02)

    def test_three_by_three_against_dense_oracle(self):
        rng = np.random.default_rng(21)
        n = 40
        z = rng.standard_normal((n, 3))
        residuals = rng.standard_normal(n)
        data = make_dataset(rng.standard_normal(n), z)
        m = estimate_moments(data, residuals)
        gram = np.zeros((3, 3))
        meat = np.zeros((3, 3))
        for t in range(n):
            gram += np.outer(z[t], z[t]) / n
            meat += residuals[t] ** 2 * np.outer(z[t], z[t]) / n
        oracle = np.linalg.inv(gram) @ meat @ np.linalg.inv(gram)
        assert_allclose(m.gram, gram, atol=1e-12)
        assert_allclose(m.score_cov, meat, atol=1e-12)
        assert_allclose(m.sandwich, oracle, atol=1e-12)

    def test_restrict_to_all_reproduces_full(self):
        rng = np.random.default_rng(22)
        z = rng.standard_normal((50, 3))
        data = make_dataset(rng.standard_normal(50), z)
        residuals = rng.standard_normal(50)
        full = estimate_moments(data, residuals)
        again = estimate_moments(data, residuals, indices=(0, 1, 2))
        assert_allclose(again.gram, full.gram)
        assert_allclose(again.sandwich, full.sandwich)

    def test_symmetry_and_psd(self):
        rng = np.random.default_rng(23)
        z = rng.standard_normal((80, 4))
        data = make_dataset(rng.standard_normal(80), z)
        m = estimate_moments(data, rng.standard_normal(80))
        assert_allclose(m.gram, m.gram.T)
        assert_allclose(m.score_cov, m.score_cov.T)
        assert_allclose(m.sandwich, m.sandwich.T)
        assert np.all(np.linalg.eigvalsh(m.gram) > 0)
        assert np.all(np.linalg.eigvalsh(m.score_cov) >= -1e-12)

    def test_near_singular_rejected(self):
        rng = np.random.default_rng(24)
        base = rng.standard_normal(50)
        z = np.column_stack([base, base * (1 + 1e-15)])
        data = make_dataset(rng.standard_normal(50), z)
        with pytest.raises(SingularDesignError):
            estimate_moments(data, rng.standard_normal(50))

    def test_homoskedastic_option(self):
        rng = np.random.default_rng(25)
        z = rng.standard_normal((60, 2))
        data = make_dataset(rng.standard_normal(60), z)
        residuals = rng.standard_normal(60)
        m = estimate_moments(data, residuals, robust=False)
        sigma2 = float(residuals @ residuals) / 60
        assert_allclose(m.score_cov, sigma2 * m.gram, atol=1e-12)


def penalized_fit(rng, n=120, p=4, lam=2.0):
    z = rng.standard_normal((n, p))
    coef = np.array([0.8, 0.4, 0.0, 0.0][:p])
    y = z @ coef + rng.standard_normal(n)
    data = make_dataset(y, z)
    pilot = ols_fit(data)
    pen = PenaltySpec.from_pilot(pilot.coef, lam)
    return data, pilot, adaptive_lasso_fit(data, pen, init=pilot.coef), pen


class TestBiasCorrection:
    def test_zero_penalty_yields_zero_shift(self):
        rng = np.random.default_rng(30)
        data, pilot, fit, _ = penalized_fit(rng, lam=0.0)
        shift = bias_correction(fit, data)
        assert_array_equal(shift.shift, np.zeros(len(fit.active_set)))

    def test_scalar_closed_form(self):
        # one active orthonormal column ((1/n) sum z^2 = 1)
        rng = np.random.default_rng(31)
        n = 64
        z = np.ones((n, 1))
        y = 0.7 + 0.05 * rng.standard_normal(n)
        data = make_dataset(y, z)
        w, lam = 3.0, 2.5
        pen = PenaltySpec(lam=lam, weights=np.array([w]))
        fit = adaptive_lasso_fit(data, pen)
        assert fit.active_set == (0,)
        shift = bias_correction(fit, data, pen)
        sign = math.copysign(1.0, fit.coef[0])
        assert shift.shift[0] == pytest.approx(lam * w * sign / (2 * math.sqrt(n)), rel=1e-12)

    def test_linear_in_penalty_level(self):
        rng = np.random.default_rng(32)
        data, pilot, fit, pen = penalized_fit(rng, lam=1.5)
        one = bias_correction(fit, data, pen)
        double = bias_correction(
            fit, data, PenaltySpec(lam=2 * pen.lam, weights=pen.weights)
        )
        assert_allclose(double.shift, 2.0 * one.shift, rtol=1e-12)

    def test_recomputable_against_dense_oracle(self):
        rng = np.random.default_rng(33)
        data, pilot, fit, pen = penalized_fit(rng, lam=2.0)
        shift = bias_correction(fit, data, pen)
        cols = list(fit.active_set)
        z = data.design[:, cols]
        gram = z.T @ z / data.n
        rhs = pen.lam / (2 * math.sqrt(data.n)) * pen.weights[cols] * np.sign(fit.coef[cols])
        oracle = np.linalg.inv(gram) @ rhs
        assert np.max(np.abs(shift.shift - oracle)) < 1e-10

    def test_empty_active_set(self):
        rng = np.random.default_rng(34)
        data, pilot, fit, pen = penalized_fit(rng, lam=1e9)
        assert fit.active_set == ()
        shift = bias_correction(fit, data, pen)
        assert shift.shift.size == 0

    def test_requires_penalized_fit(self):
        rng = np.random.default_rng(35)
        data, pilot, fit, _ = penalized_fit(rng)
        with pytest.raises(ValueError):
            bias_correction(pilot, data)

    def test_singular_active_gram(self):
        base = np.array([1.0, -1.0, 2.0, 0.5])
        z = np.column_stack([base, base])
        y = np.array([1.0, 2.0, 3.0, 4.0])
        data = TimeSeriesDataset(y=y, design=z, names=("a", "b"), origin="test")
        fit = FitResult(
            coef=np.array([1.0, 1.0]), active_set=(0, 1),
            residuals=y - z @ np.array([1.0, 1.0]), rss=1.0,
            method="adaptive_lasso",
            penalty=PenaltySpec(lam=1.0, weights=np.ones(2)),
        )
        with pytest.raises(SingularDesignError):
            bias_correction(fit, data, fit.penalty)


def manual_moments(sandwich, n, indices=(0,)):
    sandwich = np.atleast_2d(np.asarray(sandwich, dtype=float))
    return MomentEstimates(
        gram=np.eye(len(indices)),
        score_cov=sandwich,
        sandwich=sandwich,
        indices=tuple(indices),
        n=n,
    )


def manual_fit(coef, active):
    coef = np.asarray(coef, dtype=float)
    return FitResult(
        coef=coef, active_set=tuple(active), residuals=np.zeros(4), rss=1.0,
        method="adaptive_lasso", penalty=PenaltySpec(lam=1.0, weights=np.ones(len(coef))),
    )


class TestConfidenceInterval:
    def test_half_width_arithmetic(self):
        fit = manual_fit([0.5], [0])
        report = confidence_interval(fit, manual_moments([[1.0]], n=100), alpha=0.05)
        row = report.rows[0]
        half = (row.ci_upper - row.ci_lower) / 2
        assert half == pytest.approx(1.959964 / 10, abs=1e-6)
        assert row.center == pytest.approx(0.5)

    def test_bias_shift_arithmetic(self):
        fit = manual_fit([0.5], [0])
        bias = BiasCorrection(shift=np.array([0.5]), active_set=(0,), lam=1.0,
                              weights=np.ones(1), signs=np.ones(1))
        report = confidence_interval(fit, manual_moments([[1.0]], n=25), bias=bias)
        assert report.rows[0].center == pytest.approx(0.6)
        assert report.bias_corrected

    def test_width_invariant(self):
        fit = manual_fit([0.5], [0])
        report = confidence_interval(fit, manual_moments([[2.5]], n=50), alpha=0.10)
        row = report.rows[0]
        assert row.ci_upper - row.ci_lower == pytest.approx(
            2 * two_sided_critical(0.10) * row.std_error
        )

    def test_moments_must_cover_active_set(self):
        fit = manual_fit([0.5, 0.7], [0, 1])
        with pytest.raises(ValueError, match="cover"):
            confidence_interval(fit, manual_moments([[1.0]], n=50, indices=(0,)))

    def test_full_moments_accepted(self):
        fit = manual_fit([0.5, 0.0, 0.7], [0, 2])
        moments = manual_moments(np.diag([1.0, 2.0, 4.0]), n=100, indices=(0, 1, 2))
        report = confidence_interval(fit, moments)
        assert [row.index for row in report.rows] == [0, 2]
        assert report.rows[1].std_error == pytest.approx(math.sqrt(4.0 / 100))

    def test_zero_penalty_matches_classical_sandwich(self):
        rng = np.random.default_rng(36)
        data, pilot, fit, pen = penalized_fit(rng, lam=0.0)
        moments = estimate_moments(data, fit.residuals, indices=fit.active_set)
        report = confidence_interval(fit, moments, bias=bias_correction(fit, data, pen))
        classical = estimate_moments(data, pilot.residuals)
        z = two_sided_critical(0.05)
        for row in report.rows:
            se = math.sqrt(classical.variance_of(row.index) / data.n)
            assert row.ci_lower == pytest.approx(pilot.coef[row.index] - z * se, abs=1e-8)
            assert row.ci_upper == pytest.approx(pilot.coef[row.index] + z * se, abs=1e-8)

    def test_alpha_domain(self):
        fit = manual_fit([0.5], [0])
        with pytest.raises(ValueError):
            confidence_interval(fit, manual_moments([[1.0]], n=10), alpha=1.5)


class TestCoefficientTest:
    def test_exact_zero_never_rejects(self):
        fit = manual_fit([0.0, 0.3], [1])
        row = coefficient_test(fit, manual_moments(np.eye(2), 100, (0, 1)), 0.0, 0)
        assert row.test_stat == 0.0
        assert not row.reject

    def test_arithmetic_example(self):
        fit = manual_fit([0.3], [0])
        row = coefficient_test(fit, manual_moments([[1.0]], 100), 0.0, 0, alpha=0.05)
        assert row.test_stat == pytest.approx(3.0)
        assert row.critical_value == pytest.approx(1.959964, abs=1e-5)
        assert row.reject

    def test_dof_correction_raises_critical_value(self):
        fit = manual_fit([0.3], [0])
        plain = coefficient_test(fit, manual_moments([[1.0]], 100), 0.0, 0)
        corrected = coefficient_test(fit, manual_moments([[1.0]], 100), 0.0, 0, dof=10)
        assert corrected.critical_value == pytest.approx(
            plain.critical_value * math.sqrt(100 / 90)
        )

    def test_decision_invariant_under_joint_rescaling(self):
        # scaling y and all columns by c and the penalty by c^2 leaves both
        # the statistic and the critical value unchanged
        rng = np.random.default_rng(37)
        for _ in range(5):
            data, pilot, fit, pen = penalized_fit(rng, lam=1.2)
            moments = estimate_moments(data, pilot.residuals)
            c = 2.0
            scaled = TimeSeriesDataset(
                y=c * data.y, design=c * data.design, names=data.names, origin="scaled"
            )
            pilot_s = ols_fit(scaled)
            pen_s = PenaltySpec.from_pilot(pilot_s.coef, c**2 * pen.lam)
            fit_s = adaptive_lasso_fit(scaled, pen_s, init=pilot_s.coef)
            moments_s = estimate_moments(scaled, pilot_s.residuals)
            for j in range(data.p):
                row = coefficient_test(fit, moments, 0.0, j)
                row_s = coefficient_test(fit_s, moments_s, 0.0, j)
                assert row.reject == row_s.reject
                assert row_s.test_stat == pytest.approx(row.test_stat, rel=1e-9)
                assert row_s.critical_value == pytest.approx(row.critical_value, rel=1e-9)


class TestLimitQuantiles:
    def test_scalar_unpenalized_matches_normal(self):
        spec = LimitDistSpec(gram=1.0, noise_cov=1.0, penalties=[0.0],
                             draws=200_000, seed=5)
        q = limit_quantiles(spec, alpha=0.05)
        assert q[0] == pytest.approx(1.96, abs=0.02)

    def test_scalar_heavy_penalty_is_zero(self):
        spec = LimitDistSpec(gram=1.0, noise_cov=1.0, penalties=[4.0],
                             draws=100_000, seed=5)
        assert limit_quantiles(spec, alpha=0.05)[0] < 0.01

    def test_scalar_closed_form_curve(self):
        for lam0 in (0.0, 1.0, 2.0, 3.0):
            spec = LimitDistSpec(gram=1.0, noise_cov=1.0, penalties=[lam0],
                                 draws=100_000, seed=6)
            q = limit_quantiles(spec, alpha=0.05)[0]
            assert q == pytest.approx(max(1.959964 - lam0 / 2, 0.0), abs=0.03)

    def test_unpenalized_matches_gaussian_sampling_oracle(self):
        rng = np.random.default_rng(38)
        a = rng.standard_normal((3, 3))
        gram = a @ a.T + 3 * np.eye(3)
        b = rng.standard_normal((3, 3))
        noise = b @ b.T + np.eye(3)
        draws = 120_000
        spec = LimitDistSpec(gram=gram, noise_cov=noise, penalties=np.zeros(3),
                             draws=draws, seed=7)
        ours = limit_quantiles(spec, alpha=0.05)
        w = rng.standard_normal((draws, 3)) @ np.linalg.cholesky(noise).T
        direct = np.quantile(np.abs(np.linalg.solve(gram, w.T).T), 0.95, axis=0)
        assert_allclose(ours, direct, rtol=0.05)

    def test_common_random_numbers_monotone(self):
        grid = np.arange(0.0, 4.01, 0.25)
        qs = [
            limit_quantiles(
                LimitDistSpec(gram=1.0, noise_cov=1.0, penalties=[lam0],
                              draws=20_000, seed=11),
                alpha=0.05,
            )[0]
            for lam0 in grid
        ]
        assert all(b <= a + 1e-12 for a, b in zip(qs, qs[1:]))

    def test_minimum_draws_enforced(self):
        with pytest.raises(ValueError, match="1000"):
            LimitDistSpec(gram=1.0, noise_cov=1.0, penalties=[0.0], draws=10, seed=0)

    def test_noise_factorization_failure(self):
        spec = LimitDistSpec(
            gram=np.eye(2), noise_cov=np.array([[1.0, 2.0], [2.0, 1.0]]),
            penalties=np.zeros(2), draws=2000, seed=0,
        )
        with pytest.raises(SingularDesignError, match="factorization"):
            limit_quantiles(spec)

    def test_gram_must_be_positive_definite(self):
        with pytest.raises(ValueError, match="positive definite"):
            LimitDistSpec(gram=np.zeros((2, 2)), noise_cov=np.eye(2),
                          penalties=np.zeros(2), draws=2000, seed=0)
