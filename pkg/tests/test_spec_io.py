import json
from pathlib import Path

import pytest

from src.data_models import AssociationKind, Transform
from src.errors import SpecError
from src.model_core import base_model_spec
from src.spec_io import load_spec, save_spec, scenario_from_config, spec_from_dict, spec_to_dict

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
FIXTURES = Path(__file__).parent / "fixtures"


def test_shipped_base_model_matches_code():
    assert load_spec(CONFIGS / "base_model.json") == base_model_spec()


def test_shipped_variants():
    assert load_spec(CONFIGS / "shape_k1.json").shape == 1.0
    assert load_spec(CONFIGS / "epsilon_0.8.json").parameter("epsilon").fixed_effect == 0.8
    slope = load_spec(CONFIGS / "base_model_slope.json")
    assert slope.association is AssociationKind.SLOPE_LOG_PSA
    assert slope == base_model_spec(association="slope_log_psa")


def test_saved_spec_loads_back(tmp_path):
    spec = base_model_spec(association=AssociationKind.AUC_LOG_PSA, epsilon=0.45)
    path = save_spec(spec, tmp_path / "specs" / "auc.json")
    assert load_spec(path) == spec
    assert json.loads(path.read_text())["schema_version"] == 1


def test_invalid_fixed_effect_names_the_parameter():
    with pytest.raises(SpecError) as info:
        load_spec(FIXTURES / "bad_epsilon_spec.json")
    assert info.value.field == "epsilon"


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda d: d.pop("association"), "association"),
        (lambda d: d.update(association="hazard_of_psa"), "association"),
        (lambda d: d.update(schema_version=2), "schema_version"),
        (lambda d: d["psa_parameters"][0].update(fixed_effect="fast"), "r.fixed_effect"),
        (lambda d: d["psa_parameters"][1].update(transform="box-cox"), "psa0.transform"),
        (lambda d: d["tte_parameters"][0].update(omega=0.3), "k.omega"),
        (lambda d: d["psa_parameters"].pop(), "psa_parameters"),
        (lambda d: d["error_model"].update(proportional=-0.1), "error_model"),
    ],
)
def test_malformed_specs_name_the_field(mutate, field):
    data = spec_to_dict(base_model_spec())
    mutate(data)
    with pytest.raises(SpecError) as info:
        spec_from_dict(data)
    assert info.value.field == field


def test_beta_may_be_zero_or_negative():
    data = spec_to_dict(base_model_spec())
    data["tte_parameters"][2]["fixed_effect"] = -0.002
    assert spec_from_dict(data).beta == -0.002
    assert spec_from_dict(data).parameter("beta").transform is Transform.NORMAL


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(SpecError):
        load_spec(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(SpecError):
        load_spec(broken)


def test_scenario_config_resolves_relative_specs():
    scenario = scenario_from_config(CONFIGS / "scenario_shape_power.json")
    assert scenario.truth == base_model_spec()
    assert scenario.tested.shape == 1.0
    assert scenario.tested_label == "k=1"
    assert not scenario.is_type_one
    assert len(scenario.planned_times) == 9
    type_one = scenario_from_config(CONFIGS / "scenario_base_type1.json")
    assert type_one.is_type_one
    assert (type_one.n_subjects, type_one.n_replicate_studies, type_one.k) == (100, 100, 500)


def test_scenario_config_with_inline_spec(tmp_path):
    config = {
        "truth": spec_to_dict(base_model_spec()),
        "tested": spec_to_dict(base_model_spec(epsilon=0.15)),
        "n_subjects": 50,
        "k": 200,
    }
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(config))
    scenario = scenario_from_config(path)
    assert scenario.tested.parameter("epsilon").fixed_effect == 0.15
    assert scenario.n_replicate_studies == 200


def test_scenario_config_errors_carry_the_side(tmp_path):
    bad = spec_to_dict(base_model_spec())
    bad["association"] = "unknown"
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({"truth": bad, "tested": "x.json", "n_subjects": 10}))
    with pytest.raises(SpecError) as info:
        scenario_from_config(path)
    assert info.value.field == "truth.association"
    path.write_text(json.dumps({"truth": spec_to_dict(base_model_spec()), "tested": spec_to_dict(base_model_spec()), "n_subjects": 0}))
    with pytest.raises(SpecError) as info:
        scenario_from_config(path)
    assert info.value.field == "n_subjects"
