import json
from pathlib import Path

import numpy as np

from src.dataset_io import read_dataset
from src.evaluation import evaluate_model, write_evaluation_outputs
from src.model_core import base_model_spec
from src.simulator import default_design, simulate_dataset
from src.stat_tests import GLOBAL_THRESHOLD, KS_THRESHOLD

FIXTURES = Path(__file__).parent / "fixtures"


def _simulated_result(k: int = 120, **kwargs):
    spec = base_model_spec()
    subjects = simulate_dataset(spec, default_design(30), 21)
    return evaluate_model(subjects, spec, k=k, seed=21, **kwargs)


def test_report_carries_every_component():
    result = _simulated_result()
    report = result.report
    assert report.n_subjects == 30
    assert report.k == 120
    assert len(report.tests) == 8
    assert report.global_decision.threshold == GLOBAL_THRESHOLD
    assert report.ks_decision.threshold == KS_THRESHOLD
    assert set(report.global_decision.components) | set(report.ks_decision.components) == set(report.tests)
    assert len(result.wormplot) == 30
    assert result.km_vpc is not None
    assert result.replicates is None
    assert report.imputed == sum(res.imputed for res in result.residuals.tte)


def test_evaluation_is_deterministic():
    first = _simulated_result(with_vpc=False)
    second = _simulated_result(with_vpc=False)
    assert first.report.to_json() == second.report.to_json()
    np.testing.assert_array_equal(first.residuals.npde_values(), second.residuals.npde_values())


def test_report_json_layout():
    payload = json.loads(_simulated_result(with_vpc=False).report.to_json())
    assert set(payload) == {
        "model",
        "n_subjects",
        "n_observations",
        "k",
        "master_seed",
        "tests",
        "global_test",
        "ks_test",
        "excluded",
        "flags",
        "diagnostics",
    }
    assert payload["tests"]["ks_tte"]["method"] == "ks_normal"
    assert set(payload["tests"]["wilcoxon_longitudinal"]) == {"method", "statistic", "p", "n"}


def test_fixture_dataset_with_uneven_follow_up():
    subjects = read_dataset(FIXTURES / "small_longitudinal.csv", FIXTURES / "small_events.csv")
    result = evaluate_model(subjects, base_model_spec(), k=200, seed=4, keep_replicates=True)
    assert result.report.n_observations == 9
    assert result.replicates.values.shape == (4, 200, 3)
    np.testing.assert_array_equal(result.replicates.planned_times, [0.0, 182.5, 365.0])
    assert result.report.imputed == 2


def test_outputs_are_written(tmp_path):
    result = _simulated_result()
    paths = write_evaluation_outputs(result, tmp_path / "run")
    for name in ("residuals", "report", "wormplot", "bands", "qq_tte", "km_vpc", "km_vpc_svg", "bands_svg"):
        assert paths[name].exists()
    assert json.loads(paths["report"].read_text())["model"] == "M_PSA"
