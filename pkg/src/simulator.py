from __future__ import annotations

import logging
from typing import List, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .data_models import (
    EventKind,
    EventRecord,
    IndividualParameters,
    JointModelSpec,
    ReplicateSet,
    SeedSpec,
    StudyDesign,
    SubjectData,
)
from .errors import NumericalError, SpecError
from .model_core import (
    cumulative_hazard,
    cumulative_hazard_increment_u,
    individual_from_eta,
    link_factor_batch,
    psa_value,
    validate_spec,
)

LOGGER = logging.getLogger(__name__)

PURPOSE_CODES = {"eta": 0, "event": 1, "error": 2, "impute": 3}
OBSERVED_BLOCK = 0
REPLICATE_BLOCK = 1

DEFAULT_N_TIMES = 9
MAX_ROOT_ITERATIONS = 200
MAX_BRACKET_DOUBLINGS = 64
ROOT_RTOL = 1e-12
ROOT_ATOL = 1e-13

SeedLike = SeedSpec | np.random.Generator | int


def seed_generator(seed: SeedSpec) -> np.random.Generator:
    """Philox stream addressed by (study, subject, replicate block, purpose) under the master seed."""

    try:
        purpose = PURPOSE_CODES[seed.purpose]
    except KeyError as exc:
        raise SpecError(f"unknown random-stream purpose {seed.purpose!r}", field="purpose") from exc
    sequence = np.random.SeedSequence(
        int(seed.master_seed),
        spawn_key=(int(seed.study), int(seed.subject), int(seed.replicate), purpose),
    )
    return np.random.Generator(np.random.Philox(sequence))


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, SeedSpec):
        return seed_generator(seed)
    return seed_generator(SeedSpec(int(seed)))


def default_design(n_subjects: int, study_end: float = 365.0, n_times: int = DEFAULT_N_TIMES) -> StudyDesign:
    times = tuple(float(t) for t in np.linspace(0.0, study_end, n_times))
    return StudyDesign(n_subjects=n_subjects, planned_times=times, study_end=study_end)


def validate_design(design: StudyDesign) -> None:
    times = design.times
    if design.n_subjects < 1:
        raise SpecError("a design needs at least one subject", field="n_subjects")
    if times.size == 0 or np.any(np.diff(times) <= 0):
        raise SpecError("planned times must be strictly increasing", field="planned_times")
    if times[0] < 0 or times[-1] > design.study_end:
        raise SpecError("planned times must lie within [0, study_end]", field="planned_times")


def _omegas(spec: JointModelSpec) -> np.ndarray:
    return np.array([param.omega for param in spec.psa_parameters], dtype=float)


def draw_individual_parameters(spec: JointModelSpec, seed: SeedLike, size: int | None = None) -> IndividualParameters:
    """eta ~ N(0, diag(omega^2)) mapped through each parameter's transform."""

    rng = as_generator(seed)
    omegas = _omegas(spec)
    shape = omegas.shape if size is None else (size, omegas.size)
    return individual_from_eta(spec, rng.standard_normal(shape) * omegas)


def draw_individual_parameters_batch(spec: JointModelSpec, n: int, rng: SeedLike) -> IndividualParameters:
    return draw_individual_parameters(spec, rng, size=n)


def _draw_targets(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    # -log(u) with u uniform on (0, 1]
    return -np.log1p(-rng.random(size))


def _subset(psi: IndividualParameters, index: np.ndarray) -> IndividualParameters:
    return IndividualParameters(
        r=np.asarray(psi.r)[index],
        psa0=np.asarray(psi.psa0)[index],
        epsilon=np.asarray(psi.epsilon)[index],
        t_esc=np.asarray(psi.t_esc)[index],
    )


def _solve_event_time_scalar(target: float, psi: IndividualParameters, spec: JointModelSpec) -> float:
    if target <= 0:
        return 0.0

    def excess(t: float) -> float:
        return cumulative_hazard(t, psi, spec) - target

    lower, upper = 0.0, float(spec.study_end)
    for _ in range(MAX_BRACKET_DOUBLINGS):
        if excess(upper) >= 0:
            break
        lower, upper = upper, 2.0 * upper
    else:
        LOGGER.debug("cumulative hazard stays below %g up to t = %g; no event", target, lower)
        return float("inf")
    LOGGER.debug("event-time bracket [%g, %g] for target %g", lower, upper, target)
    try:
        return float(brentq(excess, lower, upper, xtol=1e-12, rtol=1e-13, maxiter=MAX_ROOT_ITERATIONS))
    except RuntimeError as exc:
        raise NumericalError(f"event-time root finding failed: {exc}", context={"target": target}) from exc


def simulate_event_time(psi: IndividualParameters, spec: JointModelSpec, seed: SeedLike) -> Tuple[float, EventRecord]:
    """Inverse cumulative-hazard draw for one subject: (uncensored time, censored record)."""

    rng = as_generator(seed)
    target = float(_draw_targets(rng))
    uncensored = _solve_event_time_scalar(target, psi, spec)
    return uncensored, censor_record(uncensored, spec.study_end)


def censor_record(time: float, study_end: float) -> EventRecord:
    if time > study_end:
        return EventRecord(float(study_end), EventKind.RIGHT_CENSORED)
    return EventRecord(float(time), EventKind.OBSERVED)


def censor(times: np.ndarray, study_end: float) -> Tuple[np.ndarray, np.ndarray]:
    times = np.asarray(times, dtype=float)
    return np.minimum(times, study_end), (times <= study_end).astype(int)


def _grow_brackets(
    targets: np.ndarray, psi: IndividualParameters, spec: JointModelSpec, covariate: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    # double u from u(study_end) until H(upper) >= target; H(lower) is a sum of positive increments
    start = (float(spec.study_end) / spec.scale) ** spec.shape
    lower = np.zeros_like(targets)
    h_lower = np.zeros_like(targets)
    upper = np.full_like(targets, start)
    with np.errstate(over="ignore", invalid="ignore"):
        h_upper = cumulative_hazard_increment_u(lower, upper, psi, spec, covariate)
    short = np.flatnonzero(h_upper < targets)
    doublings = 0
    while short.size and doublings < MAX_BRACKET_DOUBLINGS:
        lower[short] = upper[short]
        h_lower[short] = h_upper[short]
        upper[short] = 2.0 * upper[short]
        with np.errstate(over="ignore", invalid="ignore"):
            h_upper[short] = h_lower[short] + cumulative_hazard_increment_u(
                lower[short], upper[short], _subset(psi, short), spec, covariate
            )
        short = short[h_upper[short] < targets[short]]
        doublings += 1
    if doublings:
        LOGGER.debug("event-time brackets grown %d times from u(study_end) = %g", doublings, start)
    return lower, h_lower, upper, short


def solve_event_times(targets: np.ndarray, psi: IndividualParameters, spec: JointModelSpec, covariate: float = 0.0) -> np.ndarray:
    """Solve H(T_m) = target_m for a batch with bracketed Newton steps in u = (t / lambda) ** k.

    Brackets grow geometrically from study_end. Each iterate's H is the stored H(lower) plus the
    integral over [lower, iterate], so values beyond the root never enter a running sum. Members whose
    cumulative hazard levels off below the target never have the event (infinite time).
    """

    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    k, lam = spec.shape, spec.scale
    if spec.beta == 0 and (spec.covariate_coefficient == 0 or covariate == 0):
        return lam * np.power(targets, 1.0 / k)

    lower, h_lower, upper, unbounded = _grow_brackets(targets, psi, spec, covariate)
    u = np.full_like(targets, np.nan)
    if unbounded.size:
        LOGGER.debug("%d members never reach their cumulative-hazard target", unbounded.size)
        u[unbounded] = np.inf
    active = np.setdiff1d(np.flatnonzero(targets > 0), unbounded)
    u[targets <= 0] = 0.0

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        # first Newton step from the lower bracket, where H is known exactly
        slope = link_factor_batch(lower[active], _subset(psi, active), spec, covariate)
        candidate = lower[active] + (targets[active] - h_lower[active]) / slope
        step = step_old = upper[active] - lower[active]
        for _ in range(MAX_ROOT_ITERATIONS):
            if active.size == 0:
                break
            members = _subset(psi, active)
            low, high, target = lower[active], upper[active], targets[active]
            outside = ~np.isfinite(candidate) | (candidate <= low) | (candidate >= high)
            candidate = np.where(outside, 0.5 * (low + high), candidate)

            value = h_lower[active] + cumulative_hazard_increment_u(low, candidate, members, spec, covariate)
            excess = value - target
            below = excess < 0
            lower[active] = np.where(below, candidate, low)
            h_lower[active] = np.where(below, value, h_lower[active])
            upper[active] = np.where(below, high, candidate)

            hit = np.abs(excess) <= ROOT_ATOL * np.maximum(1.0, target)
            narrow = upper[active] - lower[active] <= ROOT_RTOL * upper[active]
            u[active[hit]] = candidate[hit]
            closed = narrow & ~hit
            u[active[closed]] = 0.5 * (lower[active[closed]] + upper[active[closed]])
            done = hit | narrow

            # bisect whenever Newton would not halve the step before last
            slope = link_factor_batch(candidate, members, spec, covariate)
            newton = candidate - excess / slope
            slow = ~(np.abs(2.0 * excess) <= np.abs(step_old * slope))
            low, high = lower[active], upper[active]
            bisect = slow | ~np.isfinite(newton) | (newton <= low) | (newton >= high)
            following = np.where(bisect, 0.5 * (low + high), newton)
            step_old, step = step, np.abs(following - candidate)
            keep = ~done
            candidate, step, step_old = following[keep], step[keep], step_old[keep]
            active = active[keep]
    if active.size:
        raise NumericalError(
            f"event-time root finding did not converge for {active.size} members",
            context={"iterations": MAX_ROOT_ITERATIONS},
        )
    return lam * np.power(u, 1.0 / k)


def simulate_event_times_batch(psi: IndividualParameters, spec: JointModelSpec, seed: SeedLike, covariate: float = 0.0) -> np.ndarray:
    rng = as_generator(seed)
    return solve_event_times(_draw_targets(rng, len(psi)), psi, spec, covariate)


def _predictions(times: np.ndarray, psi: IndividualParameters, spec: JointModelSpec) -> np.ndarray:
    if np.ndim(psi.r) == 0:
        values, _ = psa_value(times, psi, spec.constants, with_flag=True)
    else:
        values, _ = psa_value(times[None, :], psi.expand(2), spec.constants, with_flag=True)
    return values


def simulate_longitudinal(psi: IndividualParameters, spec: JointModelSpec, design: StudyDesign, seed: SeedLike) -> np.ndarray:
    """Values at every planned time (no truncation); shape (P,) or (M, P) for batched psi."""

    rng = as_generator(seed)
    prediction = _predictions(design.times, psi, spec)
    noise = rng.standard_normal(prediction.shape)
    return prediction + spec.error_model.sd(prediction) * noise


def _master_and_study(seed: SeedSpec | int, study: int) -> Tuple[int, int]:
    if isinstance(seed, SeedSpec):
        return int(seed.master_seed), int(seed.study)
    return int(seed), int(study)


def simulate_dataset(spec: JointModelSpec, design: StudyDesign, seed: SeedSpec | int, study: int = 0) -> List[SubjectData]:
    """Observed-data stream: subject i only ever reads its own streams, so datasets nest in N."""

    validate_spec(spec)
    validate_design(design)
    master, study = _master_and_study(seed, study)
    omegas = _omegas(spec)
    times = design.times

    def stream(subject: int, purpose: str) -> np.random.Generator:
        return seed_generator(SeedSpec(master, study, subject, OBSERVED_BLOCK, purpose))

    subjects_range = range(design.n_subjects)
    eta = np.stack([stream(i, "eta").standard_normal(omegas.size) for i in subjects_range]) * omegas
    psi = individual_from_eta(spec, eta)
    targets = np.array([float(_draw_targets(stream(i, "event"))) for i in subjects_range])
    event_times = solve_event_times(targets, psi, spec)
    prediction = _predictions(times, psi, spec)
    noise = np.stack([stream(i, "error").standard_normal(times.size) for i in subjects_range])
    values = prediction + spec.error_model.sd(prediction) * noise

    subjects: List[SubjectData] = []
    for i in subjects_range:
        record = censor_record(event_times[i], design.study_end)
        # an event exactly at a planned time keeps that observation
        keep = times <= record.time
        subjects.append(SubjectData(id=str(i + 1), times=times[keep].copy(), values=values[i, keep].copy(), event=record))
    n_events = sum(subject.event.observed for subject in subjects)
    LOGGER.debug("Simulated %d subjects (%d events) for study %d", len(subjects), n_events, study)
    return subjects


def simulate_replicates(
    observed: Sequence[SubjectData],
    tested_spec: JointModelSpec,
    k: int,
    seed: SeedSpec | int,
    design: StudyDesign | None = None,
    study: int = 0,
) -> ReplicateSet:
    """K full-grid replicates per subject with their uncensored event times."""

    if k < 1:
        raise SpecError("K must be at least 1", field="k")
    validate_spec(tested_spec)
    design = design or default_design(len(observed), study_end=tested_spec.study_end)
    validate_design(design)
    master, study = _master_and_study(seed, study)
    omegas = _omegas(tested_spec)
    times = design.times

    n = len(observed)
    values = np.empty((n, k, times.size))
    event_times = np.empty((n, k))
    for i in range(n):

        def stream(purpose: str) -> np.random.Generator:
            return seed_generator(SeedSpec(master, study, i, REPLICATE_BLOCK, purpose))

        psi = individual_from_eta(tested_spec, stream("eta").standard_normal((k, omegas.size)) * omegas)
        event_times[i] = solve_event_times(_draw_targets(stream("event"), k), psi, tested_spec)
        prediction = _predictions(times, psi, tested_spec)
        values[i] = prediction + tested_spec.error_model.sd(prediction) * stream("error").standard_normal(prediction.shape)

    LOGGER.debug("Simulated %d replicates for %d subjects under %s", k, n, tested_spec.name)
    return ReplicateSet(
        subject_ids=[subject.id for subject in observed],
        planned_times=times.copy(),
        values=values,
        event_times=event_times,
        study_end=float(design.study_end),
    )
