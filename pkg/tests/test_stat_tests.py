import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import ndtri

from src.data_models import TestMethod
from src.errors import SpecError
from src.stat_tests import (
    GLOBAL_THRESHOLD,
    KS_THRESHOLD,
    combined_global_test,
    combined_ks_test,
    decide,
    fisher_variance_test,
    global_tests,
    ks_statistic,
    ks_test_normal,
    ks_tests,
    shapiro_wilk,
    wilcoxon_signed_rank,
)


def test_thresholds():
    assert GLOBAL_THRESHOLD == pytest.approx(0.05 / 6)
    assert KS_THRESHOLD == pytest.approx(0.025)


def test_wilcoxon_exact_small_sample():
    result = wilcoxon_signed_rank([1.0, 2.0, 3.0])
    assert result.method is TestMethod.WILCOXON
    assert result.p_value == pytest.approx(0.25)
    assert result.n == 3


def test_wilcoxon_symmetric_ties_do_not_reject():
    result = wilcoxon_signed_rank([-1.0, 1.0, -2.0, 2.0])
    assert result.p_value == pytest.approx(1.0)


def test_wilcoxon_normal_approximation_above_exact_range():
    sample = [(-1.0) ** i * (i + 1) for i in range(30)]
    result = wilcoxon_signed_rank(sample)
    assert result.statistic == 225.0
    spread = math.sqrt(30 * 31 * 61 / 24)
    assert result.p_value == pytest.approx(2.0 * stats.norm.sf(7.0 / spread), rel=1e-9)


def test_wilcoxon_drops_zeros():
    result = wilcoxon_signed_rank([0.0, 1.0, 2.0, 3.0])
    assert result.n == 3
    assert wilcoxon_signed_rank([0.0, 0.0]).p_value == 1.0


def test_wilcoxon_detects_shifted_location():
    sample = np.random.default_rng(0).normal(loc=1.0, size=200)
    assert wilcoxon_signed_rank(sample).p_value < 1e-6


def test_fisher_variance_two_sided():
    result = fisher_variance_test([0.0, math.sqrt(2.0)])
    assert result.statistic == pytest.approx(1.0)
    assert result.p_value == pytest.approx(2.0 * stats.chi2.sf(1.0, 1), rel=1e-9)
    assert result.p_value == pytest.approx(0.6345, abs=1e-4)


def test_fisher_variance_rejects_inflated_spread():
    sample = np.random.default_rng(1).normal(scale=2.0, size=300)
    assert fisher_variance_test(sample).p_value < 1e-6


def test_fisher_variance_needs_two_values():
    with pytest.raises(SpecError):
        fisher_variance_test([1.0])


def test_shapiro_on_normal_scores():
    n = 100
    scores = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    result = shapiro_wilk(scores)
    assert result.statistic == pytest.approx(1.0, abs=1e-3)
    assert result.p_value > 0.9


@pytest.mark.parametrize("sample", [[1.0, 2.0], [3.0, 3.0, 3.0]])
def test_shapiro_rejects_degenerate_samples(sample):
    with pytest.raises(SpecError):
        shapiro_wilk(sample)


def test_ks_on_equi_quantile_grid():
    n = 20
    grid = ndtri((np.arange(1, n + 1) - 0.5) / n)
    assert ks_statistic(grid) == pytest.approx(0.025)
    assert ks_test_normal(grid).p_value > 0.99


def test_ks_single_value():
    assert ks_test_normal([0.0]).statistic == pytest.approx(0.5)


def test_ks_matches_scipy_above_exact_range():
    sample = np.random.default_rng(2).normal(size=400)
    expected = stats.kstest(sample, "norm", method="asymp")
    result = ks_test_normal(sample)
    assert result.statistic == pytest.approx(expected.statistic)
    assert result.p_value == pytest.approx(expected.pvalue, rel=1e-3)


def test_non_finite_values_are_rejected():
    with pytest.raises(SpecError):
        ks_test_normal([0.1, math.nan])


def test_decide_uses_smallest_component():
    decision = decide("global", {"a": 0.2, "b": 0.004, "c": 0.9}, GLOBAL_THRESHOLD)
    assert decision.reject
    assert decision.driving_component == "b"
    assert not decide("ks", {"a": 0.03, "b": 0.5}, KS_THRESHOLD).reject


def test_decide_needs_components():
    with pytest.raises(SpecError):
        decide("global", {}, GLOBAL_THRESHOLD)


def test_combined_tests_component_names():
    rng = np.random.default_rng(3)
    npde, npd = rng.normal(size=150), rng.normal(size=60)
    assert sorted(global_tests(npde, npd)) == sorted(
        f"{test}_{part}" for test in ("wilcoxon", "fisher_variance", "shapiro_wilk") for part in ("longitudinal", "tte")
    )
    assert sorted(ks_tests(npde, npd)) == ["ks_longitudinal", "ks_tte"]
    assert len(combined_global_test(npde, npd).components) == 6
    assert combined_ks_test(npde, npd).threshold == KS_THRESHOLD


def test_combined_tests_flag_misspecified_tte_part():
    rng = np.random.default_rng(4)
    decision = combined_global_test(rng.normal(size=200), rng.normal(loc=0.8, size=200))
    assert decision.reject
    assert decision.driving_component.endswith("_tte")


def test_combined_tests_need_both_parts():
    with pytest.raises(SpecError):
        combined_ks_test([], [0.1, 0.2])


@pytest.mark.slow
def test_combined_global_test_size_under_the_null():
    rng = np.random.default_rng(5)
    rejections = sum(combined_global_test(rng.normal(size=100), rng.normal(size=100)).reject for _ in range(2000))
    assert rejections / 2000 <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / 2000)


@pytest.mark.slow
@pytest.mark.parametrize("test", [wilcoxon_signed_rank, fisher_variance_test, shapiro_wilk, ks_test_normal])
def test_null_p_values_are_uniform(test):
    rng = np.random.default_rng(2024)
    p_values = np.array([test(rng.normal(size=50)).p_value for _ in range(10_000)])
    assert stats.kstest(p_values, "uniform").statistic < 0.02
