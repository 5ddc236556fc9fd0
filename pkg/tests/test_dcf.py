import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from dcfkit import (
    DataError,
    FitError,
    GuardError,
    ModelSpec,
    ar_delta_test,
    bh_adjust,
    classify_case,
    effect_size_probability,
    estimate_traits,
    fit,
    fit_dcf,
    lrt_pvalue,
    run_dcf_analysis,
)
from dcfkit.dcf import ArDeltaResult, DcfFit, DcfResult

from conftest import rasch_sim


def simulate_course(rng, n_per_group, beta1=0.0, delta=None):
    theta = rng.standard_normal(2 * n_per_group)
    g = np.array([-1.0] * n_per_group + [1.0] * n_per_group)
    delta = rng.standard_normal() if delta is None else delta
    x = (rng.random(2 * n_per_group) < expit(theta - delta + beta1 * g)).astype(float)
    return np.column_stack([x, theta, g]), delta


class TestFitDcf:
    def test_null_effect_is_small_on_average(self):
        rng = np.random.Generator(np.random.PCG64(31))
        estimates = []
        for _ in range(200):
            rows, delta = simulate_course(rng, 1000)
            estimates.append(fit_dcf(rows, delta).beta1)
        assert abs(np.mean(estimates)) <= 0.02  # ~5 SE of the Monte Carlo mean
        assert np.mean(np.abs(estimates)) <= 0.05

    def test_recovers_injected_effect(self):
        rng = np.random.Generator(np.random.PCG64(32))
        estimates = []
        for _ in range(200):
            rows, delta = simulate_course(rng, 500, beta1=0.3)
            estimates.append(fit_dcf(rows, delta).beta1)
        assert np.mean(estimates) == pytest.approx(0.3, abs=0.05)

    def test_mirrored_groups_give_zero(self):
        theta = np.array([-0.4, 0.1, 0.8, -0.4, 0.1, 0.8])
        x = np.array([0.0, 1.0, 1.0, 0.0, 1.0, 1.0])
        g = np.array([-1.0, -1.0, -1.0, 1.0, 1.0, 1.0])
        result = fit_dcf(np.column_stack([x, theta, g]), 0.0, min_group_size=3)
        assert result.beta1 == pytest.approx(0.0, abs=1e-8)

    def test_group_size_enforced(self):
        rows, delta = simulate_course(np.random.Generator(np.random.PCG64(3)), 5)
        with pytest.raises(DataError, match="min size"):
            fit_dcf(rows, delta, min_group_size=10)

    def test_nesting_invariants(self):
        rng = np.random.Generator(np.random.PCG64(33))
        rows, delta = simulate_course(rng, 50)
        result = fit_dcf(rows, delta)
        assert result.loglik_full >= result.loglik_null - 1e-9
        assert result.loglik_full >= result.loglik_intercept - 1e-9
        assert result.loglik_intercept >= result.loglik_null - 1e-9

    def test_separation_flagged(self):
        # perfectly separated groups
        theta = np.zeros(40)
        g = np.array([-1.0] * 20 + [1.0] * 20)
        x = (g > 0).astype(float)
        result = fit_dcf(np.column_stack([x, theta, g]), 0.0)
        assert result.ridge_flagged


class TestLrt:
    def test_identical_models_give_p_one(self):
        fit_result = DcfFit("c", 0.0, 0.0, -10.0, -10.0, -10.0, 20, 20, True)
        stat, p = lrt_pvalue(fit_result)
        assert stat == 0.0
        assert p == 1.0

    def test_chi2_quantile(self):
        fit_result = DcfFit("c", 0.1, 0.1, -7.005, -10.0, -9.0, 20, 20, True)
        stat, p = lrt_pvalue(fit_result, df=2)
        assert stat == pytest.approx(5.99, abs=1e-9)
        assert p == pytest.approx(0.05, abs=1e-3)

    def test_df1_uses_intercept_reference(self):
        fit_result = DcfFit("c", 0.1, 0.1, -7.0, -10.0, -9.0, 20, 20, True)
        stat, _ = lrt_pvalue(fit_result, df=1)
        assert stat == pytest.approx(4.0)

    def test_nonconvergence_rejected(self):
        bad = DcfFit("c", 0.0, 0.0, -1.0, -1.0, -1.0, 20, 20, False)
        with pytest.raises(FitError):
            lrt_pvalue(bad)

    def test_nesting_violation_detected(self):
        broken = DcfFit("c", 0.0, 0.0, -11.0, -10.0, -10.0, 20, 20, True)
        with pytest.raises(FitError, match="nesting"):
            lrt_pvalue(broken)

    def test_null_pvalues_uniform(self):
        rng = np.random.Generator(np.random.PCG64(34))
        pvalues = []
        for _ in range(1000):
            rows, delta = simulate_course(rng, 300)
            stat, p = lrt_pvalue(fit_dcf(rows, delta), df=2)
            pvalues.append(p)
        assert stats.kstest(pvalues, "uniform").pvalue > 0.01


class TestBh:
    def test_single_small_p(self):
        threshold, flags = bh_adjust([0.03], 0.05)
        assert flags.tolist() == [True]
        assert threshold == 0.03

    def test_hand_stepup(self):
        threshold, flags = bh_adjust([0.01, 0.02, 0.04, 0.9], 0.05)
        assert threshold == 0.02
        assert flags.tolist() == [True, True, False, False]

    def test_nothing_rejectable(self):
        threshold, flags = bh_adjust([1.0, 1.0, 1.0], 0.05)
        assert threshold == 0.0
        assert not flags.any()

    def test_q_zero_rejects_nothing(self):
        threshold, flags = bh_adjust([0.0, 0.001], 0.0)
        assert threshold == 0.0
        assert not flags.any()

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            bh_adjust([], 0.05)


class TestEffectSize:
    def test_quarter_logit_magnitude(self):
        fit_result = DcfFit("c", 0.0, 0.25, 0, 0, 0, 10, 10, True)
        value = effect_size_probability(fit_result, 0.0, 0.0)
        assert abs(value) == pytest.approx(expit(0.25) - expit(-0.25), abs=1e-12)
        assert value == pytest.approx(-0.1244, abs=5e-5)

    def test_sign_opposes_beta1(self):
        easier_g1 = DcfFit("c", 0.0, -0.3, 0, 0, 0, 10, 10, True)
        assert effect_size_probability(easier_g1, 0.0, 0.0) > 0

    def test_zero_effect(self):
        fit_result = DcfFit("c", 0.7, 0.0, 0, 0, 0, 10, 10, True)
        assert effect_size_probability(fit_result, 0.3, -0.2) == 0.0


class TestArDelta:
    def test_identical_proportions(self):
        rows = [(1, -1)] * 10 + [(0, -1)] * 10 + [(1, 1)] * 10 + [(0, 1)] * 10
        result = ar_delta_test(rows, "c")
        assert result.ar_delta == 0.0
        assert result.p_value == pytest.approx(1.0)

    def test_large_gap_fisher_oracle(self):
        rows = [(1, -1)] * 18 + [(0, -1)] * 2 + [(1, 1)] * 2 + [(0, 1)] * 18
        result = ar_delta_test(rows, "c")
        assert result.ar_delta == pytest.approx(0.8)
        oracle = stats.fisher_exact([[18, 2], [2, 18]])[1]
        assert result.p_value == pytest.approx(oracle, rel=1e-9)
        assert result.p_value < 0.001

    def test_label_swap_antisymmetry(self):
        rows = [(1, -1)] * 12 + [(0, -1)] * 8 + [(1, 1)] * 5 + [(0, 1)] * 15
        swapped = [(x, -g) for x, g in rows]
        a = ar_delta_test(rows, "c")
        b = ar_delta_test(swapped, "c")
        assert a.ar_delta == pytest.approx(-b.ar_delta)
        assert a.p_value == pytest.approx(b.p_value, rel=1e-12)

    def test_empty_group(self):
        with pytest.raises(DataError, match="empty group"):
            ar_delta_test([(1, -1), (0, -1)], "c")


class TestClassifyCase:
    def _dcf(self, significant):
        base = DcfFit("c", 0.0, 0.1, -1.0, -1.5, -1.2, 20, 20, True)
        return DcfResult(base, 1.0, 0.3, significant, -0.05, 0.0, "I")

    def _ar(self, significant):
        return ArDeltaResult("c", 0.6, 0.5, 0.1, 0.2, significant)

    def test_null_case(self):
        assert classify_case(self._dcf(False), self._ar(False), False) == "I"

    def test_trait_gap_only(self):
        assert classify_case(self._dcf(False), self._ar(False), True) == "II"

    def test_course_specific_difficulty(self):
        assert classify_case(self._dcf(True), self._ar(True), False) == "III"

    def test_combined_effects(self):
        assert classify_case(self._dcf(True), self._ar(True), True) == "IV"

    def test_course_id_mismatch(self):
        other = ArDeltaResult("other", 0.6, 0.5, 0.1, 0.2, False)
        with pytest.raises(DataError):
            classify_case(self._dcf(False), other, False)


class TestRunDcfAnalysis:
    def _pipeline(self, beta1, seed, n_students=600, n_courses=12):
        matrix, theta, delta, groups = rasch_sim(
            n_students, n_courses, seed=seed, beta1=beta1, injected=0
        )
        model = fit(matrix, ModelSpec())
        traits = estimate_traits(model, matrix)
        return matrix, groups, model, traits

    def test_null_grouping_rarely_significant(self):
        matrix, groups, model, traits = self._pipeline(beta1=1e-9, seed=301)
        report = run_dcf_analysis(matrix, groups, model, traits, q=0.05)
        significant = [r for r in report.dcf_results if r.significant_fdr]
        assert len(significant) <= 1

    def test_injected_course_detected_with_sign(self):
        matrix, groups, model, traits = self._pipeline(beta1=0.8, seed=302, n_students=1000)
        report = run_dcf_analysis(matrix, groups, model, traits, q=0.05)
        injected = next(r for r in report.dcf_results if r.course_id == matrix.courses[0])
        assert injected.significant_fdr
        assert injected.fit.beta1 > 0
        assert injected.effect_size_prob < 0  # positive beta1 favors G2

    def test_results_sorted_and_complete(self):
        matrix, groups, model, traits = self._pipeline(beta1=1e-9, seed=303)
        report = run_dcf_analysis(matrix, groups, model, traits)
        ids = [r.course_id for r in report.dcf_results]
        assert ids == sorted(ids)
        assert len(report.dcf_results) + len(report.skipped) == matrix.n_courses

    def test_non_rasch_model_refused(self):
        matrix, groups, model, traits = self._pipeline(beta1=1e-9, seed=304)
        model2 = fit(matrix, ModelSpec("2PL", 1))
        traits2 = estimate_traits(model2, matrix)
        with pytest.raises(GuardError):
            run_dcf_analysis(matrix, groups, model2, traits2)

    def test_inadmissible_selection_refused_unless_overridden(self):
        matrix, groups, model, traits = self._pipeline(beta1=1e-9, seed=305)
        with pytest.raises(GuardError):
            run_dcf_analysis(matrix, groups, model, traits, rasch_admissible=False)
        report = run_dcf_analysis(
            matrix, groups, model, traits, rasch_admissible=False, override_rasch_guard=True
        )
        assert report.guard_overridden

    def test_small_group_skipped_with_reason(self):
        matrix, theta, delta, groups = rasch_sim(300, 8, seed=306, beta1=1e-9, n_neg=5)
        model = fit(matrix, ModelSpec())
        traits = estimate_traits(model, matrix)
        report = run_dcf_analysis(matrix, groups, model, traits, min_group_size=10)
        assert len(report.skipped) == matrix.n_courses
        assert all("min size" in s.reason for s in report.skipped)
        assert len(report.ar_results) == matrix.n_courses  # AR still computed
