"""Scenario harness: type I error and power of the combined tests over replicate studies.

Every scenario of a family shares the master seed, so truth datasets are reused across
tested models and nest across sample sizes (common random numbers).
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Dict, Iterable, List, Sequence, Tuple

import pandas as pd
from scipy import stats
from tqdm import tqdm

from .data_models import AssociationKind, JointModelSpec, Scenario, ScenarioResult, SeedSpec, StudyDesign, StudyOutcome
from .errors import JmnpdeError, NumericalError, SpecError
from .model_core import base_model_spec
from .residuals import compute_residuals
from .simulator import default_design, simulate_dataset, simulate_replicates
from .stat_tests import ALPHA, combined_global_test, combined_ks_test

LOGGER = logging.getLogger(__name__)

FAMILIES = ("shape_k", "epsilon", "omega_epsilon", "association")
SAMPLE_SIZES = (50, 100, 200)
DEFAULT_STUDIES = 200
DEFAULT_K = 2000
DEFAULT_SEED = 20240601
TESTS = ("global", "ks")
CONFIDENCE = 0.95

SHAPE_TRUTHS = (1.0, 1.5)
SHAPE_TESTED = (0.8, 1.0, 1.2, 1.5, 2.0)
EPSILON_TRUTH = 0.3
EPSILON_TESTED = (0.15, 0.3, 0.45, 0.8)
OMEGA_EPSILON_TRUTH = 1.5
OMEGA_EPSILON_TESTED = (0.6, 1.0, 1.5)
ASSOCIATION_TRUTHS = (AssociationKind.CURRENT_PSA, AssociationKind.SLOPE_LOG_PSA)

SCENARIO_COLUMNS = ["truth", "tested", "N", "test", "rejections", "studies", "rate", "ci_low", "ci_high", "type1_pass"]


def _family_pairs(family: str) -> List[Tuple[JointModelSpec, JointModelSpec]]:
    if family == "shape_k":
        return [
            (base_model_spec(k=truth, name=f"k={truth:g}"), base_model_spec(k=tested, name=f"k={tested:g}"))
            for truth in SHAPE_TRUTHS
            for tested in SHAPE_TESTED
        ]
    if family == "epsilon":
        truth = base_model_spec(epsilon=EPSILON_TRUTH, name=f"epsilon={EPSILON_TRUTH:g}")
        return [(truth, base_model_spec(epsilon=tested, name=f"epsilon={tested:g}")) for tested in EPSILON_TESTED]
    if family == "omega_epsilon":

        def with_omega(omega: float) -> JointModelSpec:
            spec = base_model_spec(name=f"omega_epsilon={omega:g}")
            return spec.with_parameter("epsilon", omega=omega)

        return [(with_omega(OMEGA_EPSILON_TRUTH), with_omega(tested)) for tested in OMEGA_EPSILON_TESTED]
    if family == "association":
        return [
            (base_model_spec(association=truth), base_model_spec(association=tested))
            for truth in ASSOCIATION_TRUTHS
            for tested in AssociationKind
        ]
    raise SpecError(f"unknown scenario family {family!r}; expected one of {', '.join(FAMILIES)}", field="family")


def scenario_grid(
    family: str,
    sample_sizes: Sequence[int] = SAMPLE_SIZES,
    n_replicate_studies: int = DEFAULT_STUDIES,
    k: int = DEFAULT_K,
    master_seed: int = DEFAULT_SEED,
) -> List[Scenario]:
    """Truth x tested pairs of one misspecification family, crossed with the sample sizes."""

    return [
        Scenario(
            truth=truth,
            tested=tested,
            n_subjects=int(n),
            n_replicate_studies=n_replicate_studies,
            k=k,
            master_seed=master_seed,
            family=family,
            truth_label=truth.name,
            tested_label=tested.name,
        )
        for truth, tested in _family_pairs(family)
        for n in sample_sizes
    ]


def scenario_design(scenario: Scenario) -> StudyDesign:
    if scenario.planned_times is None:
        return default_design(scenario.n_subjects, study_end=scenario.truth.study_end)
    return StudyDesign(scenario.n_subjects, tuple(scenario.planned_times), scenario.truth.study_end)


def run_study(scenario: Scenario, study_index: int) -> StudyOutcome:
    """One replicate study: data under truth, K replicates under tested, both combined tests."""

    design = scenario_design(scenario)
    try:
        data = simulate_dataset(scenario.truth, design, scenario.master_seed, study=study_index)
        replicates = simulate_replicates(data, scenario.tested, scenario.k, scenario.master_seed, design, study=study_index)
        residuals = compute_residuals(data, replicates, design, SeedSpec(scenario.master_seed, study_index))
        npde, npd_tte = residuals.npde_values(), residuals.npd_tte_values()
        global_decision = combined_global_test(npde, npd_tte)
        ks_decision = combined_ks_test(npde, npd_tte)
    except JmnpdeError as exc:
        context = {"master_seed": scenario.master_seed, "study": study_index, "truth": scenario.truth_label, "tested": scenario.tested_label}
        raise NumericalError(f"study {study_index} (master seed {scenario.master_seed}) failed: {exc}", context=context) from exc
    return StudyOutcome(
        study_index=study_index,
        global_reject=global_decision.reject,
        ks_reject=ks_decision.reject,
        global_min_p=global_decision.components[global_decision.driving_component],
        ks_min_p=ks_decision.components[ks_decision.driving_component],
    )


def binomial_interval(rejections: int, studies: int, level: float = CONFIDENCE) -> Tuple[float, float]:
    """Clopper-Pearson interval for a rejection rate."""

    if studies < 1 or not 0 <= rejections <= studies:
        raise SpecError(f"invalid rejection count {rejections} of {studies}", field="rejections")
    interval = stats.binomtest(rejections, studies).proportion_ci(confidence_level=level, method="exact")
    return float(interval.low), float(interval.high)


def type_one_interval(studies: int, alpha: float = ALPHA, level: float = CONFIDENCE) -> Tuple[float, float]:
    """Range of rejection rates compatible with a nominal alpha over this many studies."""

    tail = (1.0 - level) / 2.0
    low = stats.binom.ppf(tail, studies, alpha) / studies
    high = stats.binom.ppf(1.0 - tail, studies, alpha) / studies
    return float(low), float(high)


def summarise_outcomes(scenario: Scenario, outcomes: List[StudyOutcome]) -> ScenarioResult:
    studies = len(outcomes)
    rejections = {
        "global": sum(outcome.global_reject for outcome in outcomes),
        "ks": sum(outcome.ks_reject for outcome in outcomes),
    }
    rates = {test: rejections[test] / studies for test in TESTS}
    intervals = {test: binomial_interval(rejections[test], studies) for test in TESTS}
    type_one_pass = None
    if scenario.is_type_one:
        low, high = type_one_interval(studies)
        type_one_pass = {test: bool(low <= rates[test] <= high) for test in TESTS}
    return ScenarioResult(
        scenario=scenario,
        outcomes=outcomes,
        rates=rates,
        rejections=rejections,
        intervals=intervals,
        type_one_pass=type_one_pass,
    )


def run_scenario(scenario: Scenario, workers: int = 1, progress: bool = True) -> ScenarioResult:
    if scenario.n_replicate_studies < 1:
        raise SpecError("n_replicate_studies must be at least 1", field="n_replicate_studies")
    indices = range(scenario.n_replicate_studies)
    description = f"{scenario.truth_label} vs {scenario.tested_label} N={scenario.n_subjects}"
    LOGGER.info("Running %d studies for %s (K=%d)", scenario.n_replicate_studies, description, scenario.k)
    task = partial(run_study, scenario)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            # map yields in submission order whatever the completion order
            outcomes = list(tqdm(executor.map(task, indices), total=len(indices), desc=description, disable=not progress))
    else:
        outcomes = [task(index) for index in tqdm(indices, desc=description, disable=not progress)]
    result = summarise_outcomes(scenario, outcomes)
    LOGGER.info("%s: global rate %.3f, KS rate %.3f", description, result.rates["global"], result.rates["ks"])
    return result


def run_scenarios(scenarios: Iterable[Scenario], workers: int = 1, progress: bool = True) -> List[ScenarioResult]:
    return [run_scenario(scenario, workers=workers, progress=progress) for scenario in scenarios]


def scenario_results_to_dataframe(results: Iterable[ScenarioResult]) -> pd.DataFrame:
    data: List[Dict[str, object]] = []
    for result in results:
        studies = len(result.outcomes)
        for test in TESTS:
            low, high = result.intervals[test]
            data.append(
                {
                    "truth": result.scenario.truth_label,
                    "tested": result.scenario.tested_label,
                    "N": result.scenario.n_subjects,
                    "test": test,
                    "rejections": result.rejections[test],
                    "studies": studies,
                    "rate": result.rates[test],
                    "ci_low": low,
                    "ci_high": high,
                    "type1_pass": None if result.type_one_pass is None else result.type_one_pass[test],
                }
            )
    return pd.DataFrame(data, columns=SCENARIO_COLUMNS)
