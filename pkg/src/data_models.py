from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

ArrayLike = Union[float, np.ndarray]


class Transform(str, Enum):
    NORMAL = "normal"
    LOG_NORMAL = "log-normal"
    LOGIT_NORMAL = "logit-normal"


class AssociationKind(str, Enum):
    """Link between the PSA trajectory and the hazard."""

    CURRENT_PSA = "current_psa"
    T_ESC = "t_esc"
    PSA0 = "psa0"
    SLOPE_LOG_PSA = "slope_log_psa"
    LOG_PSA = "log_psa"
    AUC_LOG_PSA = "auc_log_psa"

    @property
    def label(self) -> str:
        return ASSOCIATION_LABELS[self]


ASSOCIATION_LABELS = {
    AssociationKind.CURRENT_PSA: "M_PSA",
    AssociationKind.T_ESC: "M_Tesc",
    AssociationKind.PSA0: "M_PSA0",
    AssociationKind.SLOPE_LOG_PSA: "M_dlnPSA",
    AssociationKind.LOG_PSA: "M_lnPSA",
    AssociationKind.AUC_LOG_PSA: "M_AUClnPSA",
}


class SlopeScale(str, Enum):
    LOG = "log"  # d log(PSA + 1) / dt
    RAW = "raw"  # dPSA / dt


class ErrorModelKind(str, Enum):
    CONSTANT = "constant"
    PROPORTIONAL = "proportional"
    COMBINED = "combined"


class EventKind(str, Enum):
    OBSERVED = "observed"
    RIGHT_CENSORED = "right-censored"
    INTERVAL_CENSORED = "interval-censored"


class TestMethod(str, Enum):
    __test__ = False

    WILCOXON = "wilcoxon"
    FISHER_VARIANCE = "fisher_variance"
    SHAPIRO_WILK = "shapiro_wilk"
    KS_NORMAL = "ks_normal"


@dataclass(frozen=True)
class ParameterSpec:
    """Population description of one model parameter."""

    name: str
    fixed_effect: float
    transform: Transform = Transform.LOG_NORMAL
    omega: float = 0.0


@dataclass(frozen=True)
class PsaConstants:
    k_out: float = 0.046
    delta: float = 0.23


@dataclass(frozen=True)
class ErrorModel:
    """Residual error g(f) = sqrt(additive^2 + (proportional * f)^2)."""

    kind: ErrorModelKind = ErrorModelKind.PROPORTIONAL
    additive: float = 0.0
    proportional: float = 0.2

    def sd(self, prediction: ArrayLike) -> np.ndarray:
        prediction = np.asarray(prediction, dtype=float)
        if self.kind is ErrorModelKind.CONSTANT:
            return np.full_like(prediction, self.additive)
        if self.kind is ErrorModelKind.PROPORTIONAL:
            return self.proportional * np.abs(prediction)
        return np.sqrt(self.additive**2 + (self.proportional * prediction) ** 2)

    @property
    def is_degenerate(self) -> bool:
        if self.kind is ErrorModelKind.CONSTANT:
            return self.additive == 0
        if self.kind is ErrorModelKind.PROPORTIONAL:
            return self.proportional == 0
        return self.additive == 0 and self.proportional == 0


PSA_PARAMETER_NAMES = ("r", "psa0", "epsilon", "t_esc")
TTE_PARAMETER_NAMES = ("k", "lambda", "beta")
RESIDUAL_COLUMNS = ["id", "time", "type", "pd", "npd", "pde", "npde", "survivor_count", "flags"]


@dataclass(frozen=True)
class JointModelSpec:
    psa_parameters: Tuple[ParameterSpec, ...]
    tte_parameters: Tuple[ParameterSpec, ...]
    association: AssociationKind = AssociationKind.CURRENT_PSA
    constants: PsaConstants = field(default_factory=PsaConstants)
    error_model: ErrorModel = field(default_factory=ErrorModel)
    study_end: float = 365.0
    slope_scale: SlopeScale = SlopeScale.LOG
    # alpha of the covariate term; no shipped scenario uses covariates
    covariate_coefficient: float = 0.0
    name: str = "model"

    def parameter(self, name: str) -> ParameterSpec:
        for param in self.psa_parameters + self.tte_parameters:
            if param.name == name:
                return param
        raise KeyError(name)

    @property
    def shape(self) -> float:
        return self.parameter("k").fixed_effect

    @property
    def scale(self) -> float:
        return self.parameter("lambda").fixed_effect

    @property
    def beta(self) -> float:
        return self.parameter("beta").fixed_effect

    def with_parameter(self, name: str, *, fixed_effect: float | None = None, omega: float | None = None) -> "JointModelSpec":
        changes = {}
        if fixed_effect is not None:
            changes["fixed_effect"] = fixed_effect
        if omega is not None:
            changes["omega"] = omega

        def _update(params: Tuple[ParameterSpec, ...]) -> Tuple[ParameterSpec, ...]:
            return tuple(dataclasses.replace(p, **changes) if p.name == name else p for p in params)

        self.parameter(name)
        return dataclasses.replace(
            self,
            psa_parameters=_update(self.psa_parameters),
            tte_parameters=_update(self.tte_parameters),
        )

    def replace(self, **changes) -> "JointModelSpec":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class IndividualParameters:
    """Natural-scale PSA parameters; fields are scalars or equal-shape arrays."""

    r: ArrayLike
    psa0: ArrayLike
    epsilon: ArrayLike
    t_esc: ArrayLike

    def __len__(self) -> int:
        return int(np.size(self.r))

    def item(self, index: int) -> "IndividualParameters":
        return IndividualParameters(
            r=float(np.ravel(self.r)[index]),
            psa0=float(np.ravel(self.psa0)[index]),
            epsilon=float(np.ravel(self.epsilon)[index]),
            t_esc=float(np.ravel(self.t_esc)[index]),
        )

    def expand(self, ndim: int) -> "IndividualParameters":
        """Reshape 1-d members to (M, 1, ..., 1) so they broadcast against ndim-d arrays."""

        shape = (-1,) + (1,) * (ndim - 1)
        return IndividualParameters(
            r=np.reshape(self.r, shape),
            psa0=np.reshape(self.psa0, shape),
            epsilon=np.reshape(self.epsilon, shape),
            t_esc=np.reshape(self.t_esc, shape),
        )

    @classmethod
    def stack(cls, members: List["IndividualParameters"]) -> "IndividualParameters":
        return cls(
            r=np.array([float(m.r) for m in members]),
            psa0=np.array([float(m.psa0) for m in members]),
            epsilon=np.array([float(m.epsilon) for m in members]),
            t_esc=np.array([float(m.t_esc) for m in members]),
        )


@dataclass(frozen=True)
class StudyDesign:
    n_subjects: int
    planned_times: Tuple[float, ...]
    study_end: float = 365.0

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.planned_times, dtype=float)


@dataclass(frozen=True)
class SeedSpec:
    """Coordinates of one counter-based random stream."""

    master_seed: int
    study: int = 0
    subject: int = 0
    replicate: int = 0
    purpose: str = "eta"


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: EventKind = EventKind.OBSERVED
    upper_time: Optional[float] = None

    @property
    def observed(self) -> bool:
        return self.kind is EventKind.OBSERVED

    @property
    def indicator(self) -> int:
        return 1 if self.observed else 0


@dataclass
class SubjectData:
    id: str
    times: np.ndarray
    values: np.ndarray
    event: EventRecord

    @property
    def n_observations(self) -> int:
        return int(len(self.times))


@dataclass
class ReplicateSet:
    """K predictive replicates per subject on the full planned grid.

    values has shape (N, K, P); event_times holds the uncensored draws, shape (N, K).
    """

    subject_ids: List[str]
    planned_times: np.ndarray
    values: np.ndarray
    event_times: np.ndarray
    study_end: float

    @property
    def k(self) -> int:
        return int(self.event_times.shape[1])

    def censored_times(self) -> np.ndarray:
        return np.minimum(self.event_times, self.study_end)

    def event_indicators(self) -> np.ndarray:
        return (self.event_times <= self.study_end).astype(int)


@dataclass(frozen=True)
class LongitudinalResidual:
    subject_id: str
    time: float
    value: float
    pd: float
    npd: float
    pde: float
    npde: float
    survivor_count: int
    flags: Tuple[str, ...] = ()

    @property
    def excluded(self) -> bool:
        return "excluded" in self.flags


@dataclass(frozen=True)
class TteResidual:
    subject_id: str
    event: EventRecord
    pd: float
    npd: float
    imputed: bool
    imputation_lower_bound: Optional[float] = None
    flags: Tuple[str, ...] = ()


@dataclass
class MomentSummary:
    mean: np.ndarray
    covariance: np.ndarray
    factor: np.ndarray
    ridge: float = 0.0


@dataclass
class ResidualTable:
    longitudinal: List[LongitudinalResidual]
    tte: List[TteResidual]
    k: int

    def npde_values(self) -> np.ndarray:
        return np.array([res.npde for res in self.longitudinal if not res.excluded], dtype=float)

    def npd_values(self) -> np.ndarray:
        return np.array([res.npd for res in self.longitudinal if not res.excluded], dtype=float)

    def npd_tte_values(self) -> np.ndarray:
        return np.array([res.npd for res in self.tte], dtype=float)

    def pd_tte_values(self) -> np.ndarray:
        return np.array([res.pd for res in self.tte], dtype=float)

    def excluded(self) -> List[LongitudinalResidual]:
        return [res for res in self.longitudinal if res.excluded]

    def to_dataframe(self) -> pd.DataFrame:
        """One row per residual: id, time, type (long or tte), pd, npd, pde, npde, survivor_count, flags."""

        rows = [
            {
                "id": res.subject_id,
                "time": res.time,
                "type": "long",
                "pd": res.pd,
                "npd": res.npd,
                "pde": res.pde,
                "npde": res.npde,
                "survivor_count": res.survivor_count,
                "flags": ";".join(res.flags),
            }
            for res in self.longitudinal
        ]
        rows.extend(
            {
                "id": res.subject_id,
                "time": res.event.time,
                "type": "tte",
                "pd": res.pd,
                "npd": res.npd,
                "pde": None,
                "npde": None,
                "survivor_count": None,
                "flags": ";".join(res.flags),
            }
            for res in self.tte
        )
        frame = pd.DataFrame(rows, columns=RESIDUAL_COLUMNS)
        frame["survivor_count"] = frame["survivor_count"].astype("Int64")
        return frame


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    method: TestMethod
    statistic: float
    p_value: float
    n: int

    def to_dict(self) -> Dict[str, Union[str, float, int]]:
        return {"method": self.method.value, "statistic": self.statistic, "p": self.p_value, "n": self.n}


@dataclass(frozen=True)
class CombinedDecision:
    name: str
    components: Dict[str, float]
    threshold: float
    reject: bool
    driving_component: str

    def to_dict(self) -> Dict[str, object]:
        return {
            "name": self.name,
            "components": dict(sorted(self.components.items())),
            "threshold": self.threshold,
            "reject": self.reject,
            "driving_component": self.driving_component,
        }


@dataclass(frozen=True)
class PercentileBand:
    bin_center: float
    bin_count: int
    time_low: float
    time_high: float
    percentiles: Tuple[float, ...]
    observed: Tuple[float, ...]
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    merged: bool = False


@dataclass(frozen=True)
class WormPoint:
    subject_id: str
    time: float
    pd: float
    rank: int
    n: int
    theoretical: float
    detrended: float
    lower: float
    upper: float
    imputed: bool = False


@dataclass
class KmCurve:
    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray


@dataclass
class KmVpc:
    bin_times: np.ndarray
    observed: np.ndarray
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    observed_curve: KmCurve
    level: float = 0.90


@dataclass(frozen=True)
class QqPoint:
    theoretical: float
    sample: float


@dataclass
class EvaluationReport:
    model_name: str
    n_subjects: int
    n_observations: int
    k: int
    master_seed: int
    tests: Dict[str, TestResult]
    global_decision: CombinedDecision
    ks_decision: CombinedDecision
    excluded: List[Tuple[str, float]] = field(default_factory=list)
    low_support: int = 0
    clamped: int = 0
    imputed: int = 0
    worm_outside: int = 0
    bands_outside: int = 0

    def to_dict(self) -> Dict[str, object]:
        return {
            "model": self.model_name,
            "n_subjects": self.n_subjects,
            "n_observations": self.n_observations,
            "k": self.k,
            "master_seed": self.master_seed,
            "tests": {name: result.to_dict() for name, result in sorted(self.tests.items())},
            "global_test": self.global_decision.to_dict(),
            "ks_test": self.ks_decision.to_dict(),
            "excluded": [{"id": sid, "time": time} for sid, time in self.excluded],
            "flags": {"low_support": self.low_support, "clamped": self.clamped, "imputed": self.imputed},
            "diagnostics": {"wormplot_outside": self.worm_outside, "bands_outside": self.bands_outside},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


@dataclass
class EvaluationResult:
    residuals: ResidualTable
    report: EvaluationReport
    wormplot: List[WormPoint]
    bands: List[PercentileBand]
    qq_tte: List[QqPoint]
    km_vpc: Optional[KmVpc] = None
    replicates: Optional[ReplicateSet] = None


@dataclass(frozen=True)
class Scenario:
    truth: JointModelSpec
    tested: JointModelSpec
    n_subjects: int
    n_replicate_studies: int = 200
    k: int = 2000
    master_seed: int = 20240601
    family: str = "custom"
    truth_label: str = "truth"
    tested_label: str = "tested"
    planned_times: Optional[Tuple[float, ...]] = None

    @property
    def is_type_one(self) -> bool:
        return self.truth == self.tested


@dataclass
class StudyOutcome:
    study_index: int
    global_reject: bool
    ks_reject: bool
    global_min_p: float
    ks_min_p: float


@dataclass
class ScenarioResult:
    scenario: Scenario
    outcomes: List[StudyOutcome]
    rates: Dict[str, float]
    rejections: Dict[str, int]
    intervals: Dict[str, Tuple[float, float]]
    type_one_pass: Optional[Dict[str, bool]] = None
