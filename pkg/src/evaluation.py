from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, Sequence

from .data_models import (
    EvaluationReport,
    EvaluationResult,
    JointModelSpec,
    ResidualTable,
    SeedSpec,
    StudyDesign,
    SubjectData,
)
from .dataset_io import infer_design, write_residuals
from .diagnostics import (
    DEFAULT_BINS,
    band_points_outside,
    bands_to_dataframe,
    detrended_pd_wormplot,
    km_vpc,
    km_vpc_to_dataframe,
    npd_percentile_bands,
    npd_qq_points,
    qq_to_dataframe,
    worm_points_outside,
    wormplot_to_dataframe,
)
from .plots import render_svg
from .residuals import CLAMPED, IMPUTED, LOW_SUPPORT, compute_residuals
from .simulator import simulate_replicates
from .stat_tests import GLOBAL_THRESHOLD, KS_THRESHOLD, combine, global_tests, ks_tests

LOGGER = logging.getLogger(__name__)

DEFAULT_K = 2000
DEFAULT_SEED = 20240601
MIN_VPC_REPLICATES = 100


def _count_flag(table: ResidualTable, flag: str) -> int:
    return sum(flag in res.flags for res in table.longitudinal) + sum(flag in res.flags for res in table.tte)


def evaluate_model(
    observed: Sequence[SubjectData],
    tested_spec: JointModelSpec,
    design: StudyDesign | None = None,
    k: int = DEFAULT_K,
    seed: int = DEFAULT_SEED,
    study: int = 0,
    n_bins: int = DEFAULT_BINS,
    with_vpc: bool = True,
    keep_replicates: bool = False,
) -> EvaluationResult:
    """Simulate K replicates under the tested model and compute residuals, tests and diagnostics."""

    design = design or infer_design(observed, tested_spec.study_end)
    LOGGER.info("Evaluating %s on %d subjects with K=%d", tested_spec.name, len(observed), k)
    replicates = simulate_replicates(observed, tested_spec, k, SeedSpec(seed, study), design)
    residuals = compute_residuals(observed, replicates, design, SeedSpec(seed, study))

    npde = residuals.npde_values()
    npd_tte = residuals.npd_tte_values()
    global_results = global_tests(npde, npd_tte)
    ks_results = ks_tests(npde, npd_tte)
    tests: Dict = {**global_results, **ks_results}
    global_decision = combine("global", global_results, GLOBAL_THRESHOLD)
    ks_decision = combine("ks", ks_results, KS_THRESHOLD)

    wormplot = detrended_pd_wormplot(residuals.tte)
    bands = npd_percentile_bands(residuals.longitudinal, n_bins=n_bins)
    vpc = None
    if with_vpc:
        if k < MIN_VPC_REPLICATES:
            LOGGER.warning("KM-VPC bands from only %d replicates are unreliable", k)
        vpc = km_vpc([subject.event for subject in observed], replicates)

    report = EvaluationReport(
        model_name=tested_spec.name,
        n_subjects=len(observed),
        n_observations=len(residuals.longitudinal),
        k=k,
        master_seed=seed,
        tests=tests,
        global_decision=global_decision,
        ks_decision=ks_decision,
        excluded=[(res.subject_id, res.time) for res in residuals.excluded()],
        low_support=_count_flag(residuals, LOW_SUPPORT),
        clamped=_count_flag(residuals, CLAMPED),
        imputed=_count_flag(residuals, IMPUTED),
        worm_outside=worm_points_outside(wormplot),
        bands_outside=band_points_outside(bands),
    )
    verdict = "rejected" if global_decision.reject else "not rejected"
    LOGGER.info(
        "%s %s by the global test (min p %.4g via %s); KS %s",
        tested_spec.name,
        verdict,
        global_decision.components[global_decision.driving_component],
        global_decision.driving_component,
        "rejects" if ks_decision.reject else "does not reject",
    )
    return EvaluationResult(
        residuals=residuals,
        report=report,
        wormplot=wormplot,
        bands=bands,
        qq_tte=npd_qq_points(npd_tte),
        km_vpc=vpc,
        replicates=replicates if keep_replicates else None,
    )


def write_evaluation_outputs(result: EvaluationResult, directory: str | Path) -> Dict[str, Path]:
    """Residual CSV, report JSON and one CSV + SVG per diagnostic."""

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths: Dict[str, Path] = {"residuals": write_residuals(result.residuals, directory / "residuals.csv")}

    report_path = directory / "report.json"
    report_path.write_text(result.report.to_json() + "\n", encoding="utf-8")
    paths["report"] = report_path

    frames = {
        "wormplot": (wormplot_to_dataframe(result.wormplot), result.wormplot),
        "bands": (bands_to_dataframe(result.bands), result.bands),
        "qq_tte": (qq_to_dataframe(result.qq_tte), result.qq_tte),
    }
    if result.km_vpc is not None:
        frames["km_vpc"] = (km_vpc_to_dataframe(result.km_vpc), result.km_vpc)
    kinds = {"wormplot": "wormplot", "bands": "bands", "qq_tte": "qq", "km_vpc": "km_vpc"}
    for name, (frame, data) in frames.items():
        csv_path = directory / f"{name}.csv"
        frame.to_csv(csv_path, index=False)
        svg_path = directory / f"{name}.svg"
        svg_path.write_bytes(render_svg(data, kind=kinds[name]))
        paths[name] = csv_path
        paths[f"{name}_svg"] = svg_path
    LOGGER.info("Wrote evaluation outputs to %s", directory)
    return paths
