"""Joint-model mathematics: parameter transforms, PSA kinetics, hazard and survival.

Point evaluations of the cumulative hazard use adaptive Gauss-Kronrod quadrature
(``scipy.integrate.quad``).  The ``*_batch`` variants serve the simulator: they integrate
many subjects at once with fixed Gauss-Legendre panels split at each subject's escape time.
Both integrate in the variable u = (t / lambda) ** k, where the Weibull factor becomes
exactly 1 and the origin singularity for k < 1 disappears.
"""

from __future__ import annotations

import logging
import warnings
from typing import Callable, Sequence, Tuple

import numpy as np
from scipy.integrate import IntegrationWarning, quad, solve_ivp
from scipy.special import exprel, expit, logit, roots_legendre

from .data_models import (
    ArrayLike,
    AssociationKind,
    ErrorModel,
    ErrorModelKind,
    IndividualParameters,
    JointModelSpec,
    ParameterSpec,
    PSA_PARAMETER_NAMES,
    PsaConstants,
    SlopeScale,
    TTE_PARAMETER_NAMES,
    Transform,
)
from .errors import NumericalError, SpecError

LOGGER = logging.getLogger(__name__)

QUAD_EPSREL = 1e-8
QUAD_EPSABS = 1e-12
QUAD_LIMIT = 200
DEGENERATE_TOL = 1e-10
MAX_EXPONENT = 700.0

BATCH_PANELS = 6
BATCH_NODES = 16
_GL_X, _GL_W = roots_legendre(BATCH_NODES)


def base_model_spec(
    association: AssociationKind | str = AssociationKind.CURRENT_PSA,
    name: str | None = None,
    **fixed_effects: float,
) -> JointModelSpec:
    """The published PSA/survival model used by every shipped scenario.

    Keyword overrides replace fixed effects by parameter name (``epsilon=0.8``, ``k=1``).
    """

    association = AssociationKind(association)
    spec = JointModelSpec(
        psa_parameters=(
            ParameterSpec("r", 0.05, Transform.LOG_NORMAL, 0.1),
            ParameterSpec("psa0", 80.0, Transform.LOG_NORMAL, 0.6),
            ParameterSpec("epsilon", 0.3, Transform.LOGIT_NORMAL, 1.5),
            ParameterSpec("t_esc", 140.0, Transform.LOG_NORMAL, 0.6),
        ),
        tte_parameters=(
            ParameterSpec("k", 1.5, Transform.LOG_NORMAL, 0.0),
            ParameterSpec("lambda", 580.0, Transform.LOG_NORMAL, 0.0),
            ParameterSpec("beta", 0.001, Transform.NORMAL, 0.0),
        ),
        association=association,
        constants=PsaConstants(),
        error_model=ErrorModel(ErrorModelKind.PROPORTIONAL, 0.0, 0.2),
        study_end=365.0,
        name=name or association.label,
    )
    for param_name, value in fixed_effects.items():
        spec = spec.with_parameter(param_name, fixed_effect=value)
    return spec


def validate_spec(spec: JointModelSpec) -> None:
    """Raise SpecError unless the spec is simulable."""

    names = tuple(p.name for p in spec.psa_parameters)
    if sorted(names) != sorted(PSA_PARAMETER_NAMES):
        raise SpecError(f"PSA parameters must be {PSA_PARAMETER_NAMES}, got {names}", field="psa_parameters")
    names = tuple(p.name for p in spec.tte_parameters)
    if sorted(names) != sorted(TTE_PARAMETER_NAMES):
        raise SpecError(f"TTE parameters must be {TTE_PARAMETER_NAMES}, got {names}", field="tte_parameters")
    for param in spec.psa_parameters + spec.tte_parameters:
        _check_domain(param.fixed_effect, param.transform, param.name)
        if param.omega < 0:
            raise SpecError(f"omega of {param.name} must be nonnegative", field=f"{param.name}.omega")
    for param in spec.tte_parameters:
        if param.omega != 0:
            raise SpecError(f"TTE parameter {param.name} cannot carry inter-individual variability", field=f"{param.name}.omega")
    if spec.shape <= 0 or spec.scale <= 0:
        raise SpecError("Weibull shape and scale must be positive", field="tte_parameters")
    if spec.constants.k_out <= 0 or spec.constants.delta <= 0:
        raise SpecError("k_out and delta must be positive", field="constants")
    if spec.error_model.additive < 0 or spec.error_model.proportional < 0:
        raise SpecError("error coefficients must be nonnegative", field="error_model")
    if spec.study_end <= 0:
        raise SpecError("study_end must be positive", field="study_end")


def is_simulable(spec: JointModelSpec) -> bool:
    try:
        validate_spec(spec)
    except SpecError:
        return False
    return not spec.error_model.is_degenerate


def _check_domain(fixed_effect: float, transform: Transform, name: str = "parameter") -> None:
    transform = Transform(transform)
    if transform is Transform.LOG_NORMAL and not fixed_effect > 0:
        raise SpecError(f"{name}: log-normal fixed effect must be positive, got {fixed_effect}", field=name)
    if transform is Transform.LOGIT_NORMAL and not 0 < fixed_effect < 1:
        raise SpecError(f"{name}: logit-normal fixed effect must lie in (0, 1), got {fixed_effect}", field=name)


def transform_parameter(fixed_effect: float, eta: ArrayLike, transform: Transform | str) -> ArrayLike:
    transform = Transform(transform)
    _check_domain(fixed_effect, transform)
    if transform is Transform.NORMAL:
        return fixed_effect + eta
    if transform is Transform.LOG_NORMAL:
        return fixed_effect * np.exp(eta)
    return expit(logit(fixed_effect) + eta)


def individual_from_eta(spec: JointModelSpec, eta: np.ndarray) -> IndividualParameters:
    """Map random effects (columns ordered as spec.psa_parameters) to natural-scale parameters."""

    eta = np.asarray(eta, dtype=float)
    values = {}
    for column, param in enumerate(spec.psa_parameters):
        values[param.name] = transform_parameter(param.fixed_effect, eta[..., column], param.transform)
    return IndividualParameters(**values)


def typical_parameters(spec: JointModelSpec) -> IndividualParameters:
    return individual_from_eta(spec, np.zeros(len(spec.psa_parameters)))


def _rates(psi: IndividualParameters, constants: PsaConstants):
    r = np.asarray(psi.r, dtype=float)
    treated = r * (1.0 - np.asarray(psi.epsilon, dtype=float)) - constants.k_out
    escaped = r - constants.k_out
    return treated, escaped


def rates_near_degenerate(psi: IndividualParameters, constants: PsaConstants = PsaConstants()) -> np.ndarray:
    """True where a growth rate cancels the PSA elimination rate (limit form in use)."""

    treated, escaped = _rates(psi, constants)
    scale = DEGENERATE_TOL * np.maximum(1.0, np.asarray(psi.psa0, dtype=float))
    return (np.abs(treated + constants.delta) < scale) | (np.abs(escaped + constants.delta) < scale)


def _phase(s, growth, driver_start, psa_start, delta):
    # PSA after time s in a phase where the driver grows at a constant rate
    x = (growth + delta) * s
    with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
        direct = (np.exp(growth * s) - np.exp(-delta * s)) / (growth + delta)
        limit = s * np.exp(-delta * s) * exprel(x)
        transit = np.where(np.abs(x) < 1.0, limit, direct)
    return psa_start * np.exp(-delta * s) + delta * driver_start * transit


def _check_times(t: ArrayLike) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise SpecError("time must be nonnegative", field="t")
    return t


def psa_driver(t: ArrayLike, psi: IndividualParameters, constants: PsaConstants = PsaConstants()) -> np.ndarray:
    """Latent production driver B(t); B(0) = PSA0 and PSA relaxes towards it at rate delta."""

    t = _check_times(t)
    treated, escaped = _rates(psi, constants)
    t_esc = np.asarray(psi.t_esc, dtype=float)
    exponent = treated * np.minimum(t, t_esc) + escaped * np.maximum(t - t_esc, 0.0)
    with np.errstate(over="ignore"):
        return np.asarray(psi.psa0, dtype=float) * np.exp(exponent)


def psa_value(
    t: ArrayLike,
    psi: IndividualParameters,
    constants: PsaConstants = PsaConstants(),
    with_flag: bool = False,
) -> np.ndarray | Tuple[np.ndarray, np.ndarray]:
    """Bi-exponential PSA kinetics: decline under treatment, regrowth after T_esc.

    With ``with_flag`` also returns, per member of psi, whether a growth rate cancels the
    elimination rate so the limiting form carries the phase.
    """

    t = _check_times(t)
    treated, escaped = _rates(psi, constants)
    delta = constants.delta
    psa0 = np.asarray(psi.psa0, dtype=float)
    t_esc = np.asarray(psi.t_esc, dtype=float)

    before = _phase(np.minimum(t, t_esc), treated, psa0, psa0, delta)
    driver_esc = psa0 * np.exp(treated * t_esc)
    psa_esc = _phase(t_esc, treated, psa0, psa0, delta)
    after = _phase(np.maximum(t - t_esc, 0.0), escaped, driver_esc, psa_esc, delta)
    values = np.where(t < t_esc, before, after)
    if not with_flag:
        return values
    degenerate = rates_near_degenerate(psi, constants)
    if np.any(degenerate):
        LOGGER.debug("%d members evaluated with the limiting PSA form", int(np.count_nonzero(degenerate)))
    return values, degenerate


def psa_derivative(t: ArrayLike, psi: IndividualParameters, constants: PsaConstants = PsaConstants()) -> np.ndarray:
    return constants.delta * (psa_driver(t, psi, constants) - psa_value(t, psi, constants))


def psa_log_slope(
    t: ArrayLike,
    psi: IndividualParameters,
    constants: PsaConstants = PsaConstants(),
    scale: SlopeScale | str = SlopeScale.LOG,
) -> np.ndarray:
    derivative = psa_derivative(t, psi, constants)
    if SlopeScale(scale) is SlopeScale.RAW:
        return derivative
    return derivative / (psa_value(t, psi, constants) + 1.0)


def psa_reference_ode(t: Sequence[float], psi: IndividualParameters, constants: PsaConstants = PsaConstants()) -> np.ndarray:
    """Integrate the turnover system behind the closed form; reference for tests.

    dB/dt = (r (1 - epsilon 1{t < T_esc}) - k_out) B,  dPSA/dt = delta (B - PSA),  B(0) = PSA(0) = PSA0.
    """

    t = np.atleast_1d(_check_times(t))
    r, epsilon, t_esc, psa0 = float(psi.r), float(psi.epsilon), float(psi.t_esc), float(psi.psa0)

    def make_rhs(efficacy: float):
        def rhs(_time, state):
            driver, psa = state
            return [(r * (1.0 - efficacy) - constants.k_out) * driver, constants.delta * (driver - psa)]

        return rhs

    def integrate(rhs, start: float, stop: float, state, times: np.ndarray):
        if stop <= start:
            return np.asarray(state, dtype=float), np.full(len(times), float(state[1]))
        # t_eval must be strictly increasing
        grid = np.unique(np.concatenate([times, [stop]]))
        solution = solve_ivp(
            rhs,
            (start, stop),
            state,
            method="DOP853",
            t_eval=grid,
            rtol=1e-12,
            atol=1e-12 * psa0,
        )
        if not solution.success:
            raise NumericalError(f"PSA reference integration failed: {solution.message}")
        return solution.y[:, -1], solution.y[1, np.searchsorted(grid, times)]

    order = np.argsort(t, kind="stable")
    ordered = t[order]
    first = ordered[ordered <= t_esc]
    second = ordered[ordered > t_esc]
    state = np.array([psa0, psa0])
    values = []
    if len(first):
        state, head = integrate(make_rhs(epsilon), 0.0, t_esc if len(second) else float(first[-1]), state, first)
        values.append(head)
    else:
        state, _ = integrate(make_rhs(epsilon), 0.0, t_esc, state, np.empty(0))
    if len(second):
        _, tail = integrate(make_rhs(0.0), t_esc, float(second[-1]), state, second)
        values.append(tail)
    result = np.empty_like(t)
    result[order] = np.concatenate(values)
    return result


def _adaptive_quad(func: Callable[[float], float], lower: float, upper: float, points: Sequence[float] = ()) -> float:
    points = [p for p in points if lower < p < upper]
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            value, abserr = quad(
                func,
                lower,
                upper,
                epsabs=QUAD_EPSABS,
                epsrel=QUAD_EPSREL,
                limit=QUAD_LIMIT,
                points=points or None,
            )
        except IntegrationWarning as exc:
            raise NumericalError(
                f"quadrature on [{lower}, {upper}] did not converge: {exc}",
                context={"lower": lower, "upper": upper},
            ) from exc
    return value


def _gauss_legendre(func: Callable[[np.ndarray], np.ndarray], lower: np.ndarray, upper: np.ndarray, panels: int) -> np.ndarray:
    # composite fixed-order rule, vectorised over the leading dimensions of lower/upper
    fractions = np.linspace(0.0, 1.0, panels + 1)
    edges = lower[..., None] + (upper - lower)[..., None] * fractions
    half = 0.5 * (edges[..., 1:] - edges[..., :-1])
    centre = 0.5 * (edges[..., 1:] + edges[..., :-1])
    nodes = centre[..., None] + half[..., None] * _GL_X
    return np.sum(func(nodes) * (half[..., None] * _GL_W), axis=(-2, -1))


def _split_gauss_legendre(func, lower, upper, knot, panels: int = BATCH_PANELS) -> np.ndarray:
    knot = np.clip(knot, np.minimum(lower, upper), np.maximum(lower, upper))
    return _gauss_legendre(func, lower, knot, panels) + _gauss_legendre(func, knot, upper, panels)


def _auc_log_psa_batch(t: np.ndarray, psi: IndividualParameters, constants: PsaConstants) -> np.ndarray:
    # psi members broadcast along axis 0 of t
    t = np.asarray(t, dtype=float)
    base = psi.expand(t.ndim)
    lower = np.zeros_like(t)
    knot = np.broadcast_to(np.asarray(base.t_esc, dtype=float), t.shape)

    def integrand(x):
        return np.log1p(psa_value(x, psi.expand(x.ndim), constants))

    return _split_gauss_legendre(integrand, lower, t, knot, panels=2)


def association_value(
    t: ArrayLike,
    psi: IndividualParameters,
    kind: AssociationKind | str,
    constants: PsaConstants = PsaConstants(),
    slope_scale: SlopeScale | str = SlopeScale.LOG,
    batch: bool = False,
) -> np.ndarray:
    """X(t, psi) for each link; ``batch`` selects fixed-order quadrature for the AUC link."""

    kind = AssociationKind(kind)
    t = _check_times(t)
    if kind is AssociationKind.CURRENT_PSA:
        return psa_value(t, psi, constants)
    if kind is AssociationKind.T_ESC:
        return np.broadcast_to(np.asarray(psi.t_esc, dtype=float), np.broadcast_shapes(t.shape, np.shape(psi.t_esc))).copy()
    if kind is AssociationKind.PSA0:
        return np.broadcast_to(np.asarray(psi.psa0, dtype=float), np.broadcast_shapes(t.shape, np.shape(psi.psa0))).copy()
    if kind is AssociationKind.SLOPE_LOG_PSA:
        return psa_log_slope(t, psi, constants, slope_scale)
    if kind is AssociationKind.LOG_PSA:
        return np.log1p(psa_value(t, psi, constants))
    if batch:
        return _auc_log_psa_batch(t, psi, constants)
    return _auc_log_psa(t, psi, constants)


def _auc_log_psa(t: np.ndarray, psi: IndividualParameters, constants: PsaConstants) -> np.ndarray:
    t_esc = float(psi.t_esc)

    def integrand(x: float) -> float:
        return float(np.log1p(psa_value(x, psi, constants)))

    flat = [_adaptive_quad(integrand, 0.0, float(upper), points=(t_esc,)) for upper in np.ravel(t)]
    return np.reshape(np.asarray(flat), t.shape)


def hazard(
    t: ArrayLike,
    psi: IndividualParameters,
    spec: JointModelSpec,
    covariate: float = 0.0,
    batch: bool = False,
) -> np.ndarray:
    t = _check_times(t)
    k, lam, beta = spec.shape, spec.scale, spec.beta
    if k < 1 and np.any(t == 0):
        raise SpecError("hazard is infinite at t = 0 when the Weibull shape is below 1", field="t")
    link = association_value(t, psi, spec.association, spec.constants, spec.slope_scale, batch=batch)
    exponent = np.minimum(beta * link + spec.covariate_coefficient * covariate, MAX_EXPONENT)
    with np.errstate(divide="ignore"):
        baseline = (k / lam) * np.power(t / lam, k - 1.0)
    return baseline * np.exp(exponent)


def _link_factor(u: np.ndarray, psi: IndividualParameters, spec: JointModelSpec, covariate: float, batch: bool) -> np.ndarray:
    # hazard / (dU/dt): the integrand of the cumulative hazard in u = (t / lambda) ** k
    t = spec.scale * np.power(u, 1.0 / spec.shape)
    link = association_value(t, psi, spec.association, spec.constants, spec.slope_scale, batch=batch)
    exponent = np.minimum(spec.beta * link + spec.covariate_coefficient * covariate, MAX_EXPONENT)
    return np.exp(exponent)


def _has_link(spec: JointModelSpec, covariate: float) -> bool:
    return spec.beta != 0 or (spec.covariate_coefficient != 0 and covariate != 0)


def cumulative_hazard(t: ArrayLike, psi: IndividualParameters, spec: JointModelSpec, covariate: float = 0.0) -> ArrayLike:
    """H(t) by adaptive quadrature; accepts scalar psi and scalar or array t."""

    t_arr = _check_times(t)
    lam, k = spec.scale, spec.shape
    u_upper = np.power(t_arr / lam, k)
    if not _has_link(spec, covariate):
        return float(u_upper) if t_arr.ndim == 0 else u_upper

    knot = (float(psi.t_esc) / lam) ** k

    def integrand(u: float) -> float:
        return float(_link_factor(np.asarray(u), psi, spec, covariate, batch=False))

    values = np.array([_adaptive_quad(integrand, 0.0, float(upper), points=(knot,)) for upper in np.ravel(u_upper)])
    if t_arr.ndim == 0:
        return float(values[0])
    return values.reshape(t_arr.shape)


def survival(t: ArrayLike, psi: IndividualParameters, spec: JointModelSpec, covariate: float = 0.0) -> ArrayLike:
    return np.exp(-np.asarray(cumulative_hazard(t, psi, spec, covariate)))


def cumulative_hazard_increment_u(
    u_from: np.ndarray,
    u_to: np.ndarray,
    psi: IndividualParameters,
    spec: JointModelSpec,
    covariate: float = 0.0,
    panels: int = BATCH_PANELS,
) -> np.ndarray:
    """Batch integral of the hazard between u_from and u_to (u = (t / lambda) ** k), one per member."""

    u_from = np.asarray(u_from, dtype=float)
    u_to = np.asarray(u_to, dtype=float)
    if not _has_link(spec, covariate):
        return u_to - u_from
    knot = np.power(np.asarray(psi.t_esc, dtype=float) / spec.scale, spec.shape)

    def integrand(u):
        return _link_factor(u, psi.expand(u.ndim), spec, covariate, batch=True)

    return _split_gauss_legendre(integrand, u_from, u_to, knot, panels=panels)


def cumulative_hazard_batch(t: ArrayLike, psi: IndividualParameters, spec: JointModelSpec, covariate: float = 0.0) -> np.ndarray:
    """H(t_m) for member m of a batch of individual parameters (1-d arrays)."""

    t = np.atleast_1d(_check_times(t))
    u_upper = np.power(t / spec.scale, spec.shape)
    return cumulative_hazard_increment_u(np.zeros_like(u_upper), u_upper, psi, spec, covariate)


def link_factor_batch(u: np.ndarray, psi: IndividualParameters, spec: JointModelSpec, covariate: float = 0.0) -> np.ndarray:
    """dH/du for each member at its own u."""

    u = np.asarray(u, dtype=float)
    if not _has_link(spec, covariate):
        return np.ones_like(u)
    return _link_factor(u, psi, spec, covariate, batch=True)
