from __future__ import annotations

import logging
from typing import Dict, Mapping

import numpy as np
from scipy import stats
from scipy.special import ndtr

from .data_models import CombinedDecision, TestMethod, TestResult
from .errors import SpecError

LOGGER = logging.getLogger(__name__)

ALPHA = 0.05
GLOBAL_THRESHOLD = ALPHA / 6
KS_THRESHOLD = ALPHA / 2
WILCOXON_EXACT_MAX_N = 25
KS_EXACT_MAX_N = 100
SHAPIRO_MIN_N = 3
SHAPIRO_MAX_N = 5000


def _sample(x, minimum: int, method: TestMethod) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size < minimum:
        raise SpecError(f"{method.value} needs at least {minimum} values, got {x.size}", field="n")
    if not np.all(np.isfinite(x)):
        raise SpecError(f"{method.value} received non-finite values", field="x")
    return x


def _probability(value: float) -> float:
    return float(min(max(value, 0.0), 1.0))


def wilcoxon_signed_rank(x) -> TestResult:
    """Two-sided signed-rank test of location 0; zeros dropped, ties mid-ranked."""

    x = _sample(x, 1, TestMethod.WILCOXON)
    nonzero = x[x != 0]
    if nonzero.size == 0:
        LOGGER.warning("Wilcoxon sample is all zeros; reporting p = 1")
        return TestResult(TestMethod.WILCOXON, 0.0, 1.0, int(x.size))
    tied = np.unique(np.abs(nonzero)).size < nonzero.size
    method = "exact" if nonzero.size <= WILCOXON_EXACT_MAX_N and not tied else "asymptotic"
    result = stats.wilcoxon(nonzero, zero_method="wilcox", correction=True, alternative="two-sided", method=method)
    return TestResult(TestMethod.WILCOXON, float(result.statistic), _probability(result.pvalue), int(nonzero.size))


def fisher_variance_test(x, sigma0: float = 1.0) -> TestResult:
    """Chi-square test of variance sigma0 ** 2: (n - 1) s^2 / sigma0^2 on n - 1 degrees of freedom."""

    x = _sample(x, 2, TestMethod.FISHER_VARIANCE)
    if sigma0 <= 0:
        raise SpecError("sigma0 must be positive", field="sigma0")
    n = x.size
    variance = float(np.var(x, ddof=1))
    if variance == 0:
        LOGGER.warning("Variance test sample has zero variance")
    statistic = (n - 1) * variance / sigma0**2
    lower = stats.chi2.cdf(statistic, n - 1)
    upper = stats.chi2.sf(statistic, n - 1)
    return TestResult(TestMethod.FISHER_VARIANCE, float(statistic), _probability(2.0 * min(lower, upper)), int(n))


def shapiro_wilk(x) -> TestResult:
    x = _sample(x, SHAPIRO_MIN_N, TestMethod.SHAPIRO_WILK)
    if x.size > SHAPIRO_MAX_N:
        raise SpecError(f"shapiro_wilk accepts at most {SHAPIRO_MAX_N} values, got {x.size}", field="n")
    if np.ptp(x) == 0:
        raise SpecError("shapiro_wilk is undefined for a constant sample", field="x")
    result = stats.shapiro(x)
    return TestResult(TestMethod.SHAPIRO_WILK, float(min(result.statistic, 1.0)), _probability(result.pvalue), int(x.size))


def ks_statistic(x) -> float:
    x = np.sort(np.asarray(x, dtype=float).ravel())
    n = x.size
    cdf = ndtr(x)
    ranks = np.arange(1, n + 1)
    return float(max(np.max(ranks / n - cdf), np.max(cdf - (ranks - 1) / n)))


def ks_test_normal(x) -> TestResult:
    """One-sample KS against N(0, 1): exact distribution up to n = 100, Kolmogorov limit above."""

    x = _sample(x, 1, TestMethod.KS_NORMAL)
    n = x.size
    statistic = ks_statistic(x)
    if n <= KS_EXACT_MAX_N:
        p_value = stats.kstwo.sf(statistic, n)
    else:
        p_value = stats.kstwobign.sf(statistic * np.sqrt(n))
    return TestResult(TestMethod.KS_NORMAL, statistic, _probability(p_value), int(n))


def decide(name: str, p_values: Mapping[str, float], threshold: float) -> CombinedDecision:
    """Bonferroni decision: reject when the smallest component p-value is below the threshold."""

    if not p_values:
        raise SpecError("a combined decision needs at least one p-value", field="p_values")
    driving = min(p_values, key=lambda key: p_values[key])
    return CombinedDecision(
        name=name,
        components={key: float(value) for key, value in p_values.items()},
        threshold=threshold,
        reject=bool(p_values[driving] < threshold),
        driving_component=driving,
    )


def _check_parts(npde_long, npd_tte):
    npde_long = np.asarray(npde_long, dtype=float)
    npd_tte = np.asarray(npd_tte, dtype=float)
    if npde_long.size == 0:
        raise SpecError("no longitudinal npde to test", field="npde")
    if npd_tte.size == 0:
        raise SpecError("no TTE npd to test", field="npd_tte")
    return npde_long, npd_tte


def global_tests(npde_long, npd_tte) -> Dict[str, TestResult]:
    npde_long, npd_tte = _check_parts(npde_long, npd_tte)
    results: Dict[str, TestResult] = {}
    for part, values in (("longitudinal", npde_long), ("tte", npd_tte)):
        results[f"wilcoxon_{part}"] = wilcoxon_signed_rank(values)
        results[f"fisher_variance_{part}"] = fisher_variance_test(values)
        results[f"shapiro_wilk_{part}"] = shapiro_wilk(values)
    return results


def ks_tests(npde_long, npd_tte) -> Dict[str, TestResult]:
    npde_long, npd_tte = _check_parts(npde_long, npd_tte)
    return {"ks_longitudinal": ks_test_normal(npde_long), "ks_tte": ks_test_normal(npd_tte)}


def combine(name: str, results: Mapping[str, TestResult], threshold: float) -> CombinedDecision:
    return decide(name, {key: result.p_value for key, result in results.items()}, threshold)


def combined_global_test(npde_long, npd_tte) -> CombinedDecision:
    return combine("global", global_tests(npde_long, npd_tte), GLOBAL_THRESHOLD)


def combined_ks_test(npde_long, npd_tte) -> CombinedDecision:
    return combine("ks", ks_tests(npde_long, npd_tte), KS_THRESHOLD)
