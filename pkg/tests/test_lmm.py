import math
from datetime import date

import numpy as np
import pytest

from mobseq.errors import DataValidationError, NumericalError
from mobseq.events import UserProfile
from mobseq.lmm import (
    DEFAULT_FORMULA,
    ModelSpec,
    build_design,
    fit_reml,
    marginal_means,
    parse_formula,
    reml_criterion,
    wald_contrast,
)
from mobseq.trajectory import SwitchRateRecord
from oracles import balanced_oneway_reml

TIMESPANS = ("small", "morning", "midday", "afternoon", "evening")


def records_for(users, rates_by_timespan=None, rng=None):
    records = []
    for u in users:
        for t in TIMESPANS:
            rate = 0.3 if rates_by_timespan is None else rates_by_timespan[t]
            if rng is not None:
                rate += rng.normal(0, 0.05)
            records.append(SwitchRateRecord(u, date(2016, 7, 1), t, float(rate), 10))
    return records


def profiles_for(users, gender="female"):
    return {u: UserProfile(u, gender, "21-30", "high", "students") for u in users}


class TestParseFormula:
    def test_default_formula(self):
        spec = parse_formula(DEFAULT_FORMULA)
        assert spec.outcome == "rate"
        assert spec.main_effects == ("timespan", "gender", "age_group", "education", "occupation")
        assert spec.interactions == (
            ("timespan", "gender"),
            ("timespan", "age_group"),
            ("timespan", "education"),
        )

    def test_plain_terms(self):
        spec = parse_formula("rate ~ timespan + gender + (1|user)")
        assert spec.main_effects == ("timespan", "gender")
        assert spec.interactions == ()

    def test_requires_random_intercept(self):
        with pytest.raises(DataValidationError):
            parse_formula("rate ~ timespan")

    def test_unknown_factor(self):
        with pytest.raises(DataValidationError):
            parse_formula("rate ~ shoe_size + (1|user)")


class TestBuildDesign:
    def test_timespan_only_gives_intercept_plus_four(self):
        users = [f"u{i}" for i in range(4)]
        y, X, groups, info = build_design(
            records_for(users), {}, ModelSpec(main_effects=("timespan",))
        )
        assert X.shape == (20, 5)
        assert info.columns[0] == "(Intercept)"
        assert len(info.columns) == 5

    def test_missing_profile_named(self):
        users = ["u0", "u1"]
        spec = parse_formula("rate ~ timespan + gender + (1|user)")
        profiles = profiles_for(["u0"])
        with pytest.raises(DataValidationError, match="u1"):
            build_design(records_for(users), profiles, spec)

    def test_interaction_adds_columns(self):
        users = [f"u{i}" for i in range(6)]
        profiles = {
            u: UserProfile(u, "male" if i % 2 else "female", "21-30", "high", "students")
            for i, u in enumerate(users)
        }
        base = build_design(records_for(users), profiles, parse_formula("rate ~ timespan + gender + (1|user)"))
        inter = build_design(records_for(users), profiles, parse_formula("rate ~ timespan*gender + (1|user)"))
        assert inter[1].shape[1] == base[1].shape[1] + 4

    def test_empty_cells_dropped_and_reported(self):
        users = [f"u{i}" for i in range(4)]
        profiles = profiles_for(users)  # everyone female / 21-30 / high / students
        spec = parse_formula("rate ~ timespan*gender + (1|user)")
        y, X, groups, info = build_design(records_for(users), profiles, spec)
        # gender=male main effect and all its interactions are empty
        assert "gender=male" in info.dropped_columns
        assert X.shape[1] == 5
        assert np.linalg.matrix_rank(X) == X.shape[1]


class TestFitReml:
    def test_perfect_fit_recovers_beta_exactly(self):
        users = [f"u{i}" for i in range(10)]
        truth = {"small": 0.2, "morning": 0.5, "midday": 0.6, "afternoon": 0.5, "evening": 0.3}
        y, X, groups, info = build_design(
            records_for(users, truth), {}, ModelSpec(main_effects=("timespan",))
        )
        fit = fit_reml(y, X, groups, info)
        assert fit.boundary
        assert fit.sigma2_u == pytest.approx(0.0, abs=1e-12)
        assert fit.sigma2_e == pytest.approx(0.0, abs=1e-12)
        assert fit.coef("(Intercept)") == pytest.approx(0.2, abs=1e-10)
        assert fit.coef("timespan=midday") == pytest.approx(0.4, abs=1e-10)

    def test_balanced_oneway_matches_closed_form(self):
        rng = np.random.default_rng(100)
        for m, q, s_u, s_e in [(30, 5, 0.02, 0.01), (50, 4, 0.1, 0.3), (20, 8, 0.0, 0.05)]:
            u = rng.normal(0, math.sqrt(s_u), m)
            eps = rng.normal(0, math.sqrt(s_e), (m, q))
            y2d = 0.4 + u[:, None] + eps
            y = y2d.ravel()
            X = np.ones((m * q, 1))
            groups = np.repeat(np.arange(m), q)
            fit = fit_reml(y, X, groups)
            want_u, want_e = balanced_oneway_reml(y2d)
            assert fit.sigma2_e == pytest.approx(want_e, rel=1e-6)
            if want_u > 1e-12:
                assert fit.sigma2_u == pytest.approx(want_u, rel=1e-6)
            else:
                assert fit.sigma2_u <= 1e-8

    def test_single_observation_per_group_returns_ols(self):
        rng = np.random.default_rng(5)
        n = 40
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = X @ np.array([0.3, 0.1]) + rng.normal(0, 0.2, n)
        groups = np.arange(n)  # one observation per user
        fit = fit_reml(y, X, groups)
        beta_ols = np.linalg.lstsq(X, y, rcond=None)[0]
        assert fit.boundary
        assert fit.lam == 0.0
        assert np.allclose(fit.beta, beta_ols, atol=1e-8)

    def test_interior_gradient_vanishes(self):
        rng = np.random.default_rng(42)
        m, q = 60, 5
        u = rng.normal(0, math.sqrt(0.02), m)
        y = (0.4 + u[:, None] + rng.normal(0, math.sqrt(0.01), (m, q))).ravel()
        X = np.ones((m * q, 1))
        groups = np.repeat(np.arange(m), q)
        fit = fit_reml(y, X, groups)
        assert not fit.boundary
        h = max(fit.lam, 1.0) * 1e-4
        grad = (
            reml_criterion(y, X, groups, fit.lam + h)
            - reml_criterion(y, X, groups, fit.lam - h)
        ) / (2 * h)
        assert abs(grad) < 1e-5

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(7)
        m, q = 25, 4
        u = rng.normal(0, 0.15, m)
        y = (0.3 + u[:, None] + rng.normal(0, 0.1, (m, q))).ravel()
        X = np.column_stack([np.ones(m * q), rng.normal(size=m * q)])
        groups = np.repeat(np.arange(m), q)
        fit = fit_reml(y, X, groups)
        perm = rng.permutation(m * q)
        fit_p = fit_reml(y[perm], X[perm], groups[perm])
        assert np.allclose(fit.beta, fit_p.beta, atol=1e-10)
        assert fit.sigma2_u == pytest.approx(fit_p.sigma2_u, abs=1e-10)
        assert fit.sigma2_e == pytest.approx(fit_p.sigma2_e, abs=1e-10)

    def test_cov_symmetric_and_variances_nonnegative(self):
        rng = np.random.default_rng(8)
        m, q = 30, 3
        y = (rng.normal(0, 0.1, (m, q)) + rng.normal(0, 0.2, m)[:, None]).ravel() + 0.5
        X = np.column_stack([np.ones(m * q), rng.normal(size=m * q)])
        groups = np.repeat(np.arange(m), q)
        fit = fit_reml(y, X, groups)
        assert fit.sigma2_u >= 0 and fit.sigma2_e >= 0
        assert np.allclose(fit.cov_beta, fit.cov_beta.T, atol=1e-12)

    def test_simulation_recovery_one_seed(self):
        rng = np.random.default_rng(0)
        users = [f"u{i:03d}" for i in range(200)]
        beta = {"small": 0.10, "morning": 0.30, "midday": 0.35, "afternoon": 0.28, "evening": 0.18}
        records = []
        for u in users:
            offset = rng.normal(0, math.sqrt(0.02))
            for t in TIMESPANS:
                records.append(
                    SwitchRateRecord(
                        u, date(2016, 7, 1), t,
                        beta[t] + offset + rng.normal(0, math.sqrt(0.01)), 10,
                    )
                )
        y, X, groups, info = build_design(records, {}, ModelSpec(main_effects=("timespan",)))
        fit = fit_reml(y, X, groups, info)
        assert fit.coef("(Intercept)") == pytest.approx(0.10, abs=0.04)
        assert fit.coef("timespan=midday") == pytest.approx(0.25, abs=0.04)
        assert fit.sigma2_u == pytest.approx(0.02, rel=0.5)
        assert fit.sigma2_e == pytest.approx(0.01, rel=0.25)

    def test_rank_deficiency_raises(self):
        X = np.column_stack([np.ones(20), np.ones(20)])
        y = np.zeros(20)
        groups = np.repeat(np.arange(5), 4)
        with pytest.raises(NumericalError):
            fit_reml(y, X, groups)


class TestMarginalMeans:
    def _fit(self):
        rng = np.random.default_rng(11)
        users = [f"u{i}" for i in range(30)]
        profiles = {
            u: UserProfile(u, "male" if i % 2 else "female", "21-30", "high", "students")
            for i, u in enumerate(users)
        }
        records = []
        for u in users:
            for t in TIMESPANS:
                base = 0.3 + (0.1 if profiles[u].gender == "male" else 0.0)
                records.append(
                    SwitchRateRecord(u, date(2016, 7, 1), t, base + rng.normal(0, 0.02), 10)
                )
        spec = parse_formula("rate ~ timespan + gender + (1|user)")
        y, X, groups, info = build_design(records, profiles, spec)
        return fit_reml(y, X, groups, info), info

    def test_reference_combination_is_intercept(self):
        fit, info = self._fit()
        (mm,) = marginal_means(
            fit, info, [{"timespan": "small", "gender": "female"}]
        )
        assert mm["estimate"] == pytest.approx(fit.coef("(Intercept)"), abs=1e-12)

    def test_averaged_combination_matches_direct_contrast(self):
        fit, info = self._fit()
        (mm,) = marginal_means(fit, info, [{"timespan": "midday"}])
        # Direct recomputation: intercept + midday + observed male share * gender beta.
        male_share = np.mean([1.0 if r["gender"] == "male" else 0.0 for r in info.factor_rows])
        want = (
            fit.coef("(Intercept)")
            + fit.coef("timespan=midday")
            + male_share * fit.coef("gender=male")
        )
        assert mm["estimate"] == pytest.approx(want, abs=1e-12)
        assert mm["se"] > 0

    def test_no_interaction_gender_gap_constant(self):
        fit, info = self._fit()
        gaps = []
        for t in TIMESPANS:
            male, female = marginal_means(
                fit, info, [{"timespan": t, "gender": "male"}, {"timespan": t, "gender": "female"}]
            )
            gaps.append(male["estimate"] - female["estimate"])
        assert max(gaps) - min(gaps) < 1e-12

    def test_unknown_level_rejected(self):
        fit, info = self._fit()
        with pytest.raises(DataValidationError):
            marginal_means(fit, info, [{"timespan": "brunch"}])


class TestWaldContrast:
    def _simple_fit(self):
        rng = np.random.default_rng(3)
        m, q = 40, 4
        y = (0.5 + rng.normal(0, 0.1, m)[:, None] + rng.normal(0, 0.1, (m, q))).ravel()
        X = np.column_stack([np.ones(m * q), np.tile(rng.normal(size=q), m)])
        groups = np.repeat(np.arange(m), q)
        return fit_reml(y, X, groups)

    def test_zero_coefficient_gives_p_one(self):
        fit = self._simple_fit()
        fit.beta[1] = 0.0
        z, p = wald_contrast(fit, np.array([0.0, 1.0]))
        assert z == 0.0 and p == pytest.approx(1.0)

    def test_1_96_se_gives_p_near_05(self):
        fit = self._simple_fit()
        se = math.sqrt(fit.cov_beta[1, 1])
        fit.beta[1] = 1.96 * se
        _, p = wald_contrast(fit, np.array([0.0, 1.0]))
        assert p == pytest.approx(0.05, abs=0.001)

    def test_matches_direct_formula(self):
        fit = self._simple_fit()
        c = np.array([1.0, -2.0])
        z, p = wald_contrast(fit, c, null=0.1)
        want_z = (c @ fit.beta - 0.1) / math.sqrt(c @ fit.cov_beta @ c)
        assert z == pytest.approx(want_z, abs=1e-12)
        assert p == pytest.approx(math.erfc(abs(want_z) / math.sqrt(2)), abs=1e-15)

    def test_zero_variance_contrast_rejected(self):
        fit = self._simple_fit()
        with pytest.raises(NumericalError):
            wald_contrast(fit, np.zeros(2))
