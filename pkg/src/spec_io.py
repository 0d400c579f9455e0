"""JSON model specs and scenario configs."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping

from .data_models import (
    AssociationKind,
    ErrorModel,
    ErrorModelKind,
    JointModelSpec,
    ParameterSpec,
    PsaConstants,
    Scenario,
    SlopeScale,
    StudyDesign,
    Transform,
)
from .errors import SpecError
from .model_core import validate_spec

LOGGER = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def _parameter_to_dict(param: ParameterSpec) -> Dict[str, Any]:
    return {
        "name": param.name,
        "fixed_effect": param.fixed_effect,
        "transform": param.transform.value,
        "omega": param.omega,
    }


def spec_to_dict(spec: JointModelSpec) -> Dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": spec.name,
        "psa_parameters": [_parameter_to_dict(p) for p in spec.psa_parameters],
        "tte_parameters": [_parameter_to_dict(p) for p in spec.tte_parameters],
        "association": spec.association.value,
        "slope_scale": spec.slope_scale.value,
        "constants": {"k_out": spec.constants.k_out, "delta": spec.constants.delta},
        "error_model": {
            "kind": spec.error_model.kind.value,
            "additive": spec.error_model.additive,
            "proportional": spec.error_model.proportional,
        },
        "study_end": spec.study_end,
        "covariate_coefficient": spec.covariate_coefficient,
    }


def _require(data: Mapping[str, Any], key: str, context: str = "") -> Any:
    if key not in data:
        raise SpecError(f"missing field {context}{key}", field=f"{context}{key}")
    return data[key]


def _number(value: Any, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SpecError(f"{field} must be a number, got {value!r}", field=field)
    return float(value)


def _enum(enum_cls, value: Any, field: str):
    try:
        return enum_cls(value)
    except ValueError as exc:
        allowed = ", ".join(member.value for member in enum_cls)
        raise SpecError(f"{field} must be one of {allowed}, got {value!r}", field=field) from exc


def _parameter_from_dict(data: Mapping[str, Any], context: str) -> ParameterSpec:
    if not isinstance(data, Mapping):
        raise SpecError(f"{context} entries must be objects", field=context)
    name = str(_require(data, "name", f"{context}."))
    return ParameterSpec(
        name=name,
        fixed_effect=_number(_require(data, "fixed_effect", f"{name}."), f"{name}.fixed_effect"),
        transform=_enum(Transform, data.get("transform", Transform.LOG_NORMAL.value), f"{name}.transform"),
        omega=_number(data.get("omega", 0.0), f"{name}.omega"),
    )


def spec_from_dict(data: Mapping[str, Any]) -> JointModelSpec:
    """Build and validate a spec; every failure names the offending field."""

    if not isinstance(data, Mapping):
        raise SpecError("a model spec must be a JSON object")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SpecError(f"unsupported schema_version {version!r}", field="schema_version")

    params = {}
    for group in ("psa_parameters", "tte_parameters"):
        entries = _require(data, group)
        if not isinstance(entries, list):
            raise SpecError(f"{group} must be a list", field=group)
        params[group] = tuple(_parameter_from_dict(entry, group) for entry in entries)

    constants = data.get("constants", {})
    error = data.get("error_model", {})
    spec = JointModelSpec(
        psa_parameters=params["psa_parameters"],
        tte_parameters=params["tte_parameters"],
        association=_enum(AssociationKind, _require(data, "association"), "association"),
        constants=PsaConstants(
            k_out=_number(constants.get("k_out", PsaConstants.k_out), "constants.k_out"),
            delta=_number(constants.get("delta", PsaConstants.delta), "constants.delta"),
        ),
        error_model=ErrorModel(
            kind=_enum(ErrorModelKind, error.get("kind", ErrorModelKind.PROPORTIONAL.value), "error_model.kind"),
            additive=_number(error.get("additive", 0.0), "error_model.additive"),
            proportional=_number(error.get("proportional", 0.0), "error_model.proportional"),
        ),
        study_end=_number(data.get("study_end", 365.0), "study_end"),
        slope_scale=_enum(SlopeScale, data.get("slope_scale", SlopeScale.LOG.value), "slope_scale"),
        covariate_coefficient=_number(data.get("covariate_coefficient", 0.0), "covariate_coefficient"),
        name=str(data.get("name", "model")),
    )
    validate_spec(spec)
    return spec


def load_spec(path: str | Path) -> JointModelSpec:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise SpecError(f"model spec {path} not found", field="path") from exc
    except json.JSONDecodeError as exc:
        raise SpecError(f"model spec {path} is not valid JSON: {exc}", field="path") from exc
    spec = spec_from_dict(data)
    LOGGER.debug("Loaded model spec %s from %s", spec.name, path)
    return spec


def save_spec(spec: JointModelSpec, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(spec_to_dict(spec), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def design_to_dict(design: StudyDesign) -> Dict[str, Any]:
    return {
        "n_subjects": design.n_subjects,
        "planned_times": list(design.planned_times),
        "study_end": design.study_end,
    }


def design_from_dict(data: Mapping[str, Any], n_subjects: int | None = None) -> StudyDesign:
    times = _require(data, "planned_times", "design.")
    if not isinstance(times, list) or not times:
        raise SpecError("design.planned_times must be a non-empty list", field="design.planned_times")
    count = data.get("n_subjects", n_subjects)
    if count is None:
        raise SpecError("missing field design.n_subjects", field="design.n_subjects")
    return StudyDesign(
        n_subjects=int(count),
        planned_times=tuple(_number(t, "design.planned_times") for t in times),
        study_end=_number(data.get("study_end", 365.0), "design.study_end"),
    )


def _resolve_spec(value: Any, base: Path, field: str) -> JointModelSpec:
    if isinstance(value, Mapping):
        try:
            return spec_from_dict(value)
        except SpecError as exc:
            raise SpecError(f"{field}: {exc}", field=f"{field}.{exc.field}" if exc.field else field) from exc
    if isinstance(value, str):
        path = Path(value)
        return load_spec(path if path.is_absolute() else base / path)
    raise SpecError(f"{field} must be a spec object or a path", field=field)


def scenario_from_config(path: str | Path) -> Scenario:
    """Read a scenario config; spec paths are resolved against the config's directory."""

    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise SpecError(f"scenario config {path} not found", field="config") from exc
    except json.JSONDecodeError as exc:
        raise SpecError(f"scenario config {path} is not valid JSON: {exc}", field="config") from exc
    if not isinstance(data, Mapping):
        raise SpecError("a scenario config must be a JSON object", field="config")
    if data.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise SpecError(f"unsupported schema_version {data.get('schema_version')!r}", field="schema_version")

    base = path.parent
    truth = _resolve_spec(_require(data, "truth"), base, "truth")
    tested = _resolve_spec(_require(data, "tested"), base, "tested")
    n_subjects = int(_number(_require(data, "n_subjects"), "n_subjects"))
    if n_subjects < 1:
        raise SpecError("n_subjects must be positive", field="n_subjects")
    studies = int(_number(data.get("n_replicate_studies", 200), "n_replicate_studies"))
    k = int(_number(data.get("k", 2000), "k"))
    if studies < 1 or k < 1:
        raise SpecError("n_replicate_studies and k must be positive", field="k" if k < 1 else "n_replicate_studies")
    design = data.get("design")
    planned = design_from_dict(design, n_subjects).planned_times if design else None
    return Scenario(
        truth=truth,
        tested=tested,
        n_subjects=n_subjects,
        n_replicate_studies=studies,
        k=k,
        master_seed=int(_number(data.get("master_seed", 20240601), "master_seed")),
        family=str(data.get("family", "custom")),
        truth_label=str(data.get("truth_label", truth.name)),
        tested_label=str(data.get("tested_label", tested.name)),
        planned_times=planned,
    )
