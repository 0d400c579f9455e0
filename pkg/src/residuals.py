"""Prediction discrepancies for joint longitudinal/time-to-event data.

Longitudinal pd rank an observation among the replicates still event-free at its time;
pde do the same after whitening each subject's vector with the replicate moments.
TTE pd are the empirical predictive CDF at the event time, drawn uniformly above
that CDF when the record is censored.
"""

from __future__ import annotations

import logging
import math
from typing import List, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.special import ndtri

from .data_models import (
    EventKind,
    EventRecord,
    LongitudinalResidual,
    MomentSummary,
    ReplicateSet,
    ResidualTable,
    SeedSpec,
    StudyDesign,
    SubjectData,
    TteResidual,
)
from .errors import NumericalError, SpecError
from .simulator import OBSERVED_BLOCK, SeedLike, as_generator, seed_generator

LOGGER = logging.getLogger(__name__)

CLAMPED = "clamped"
LOW_SUPPORT = "low_support"
EXCLUDED = "excluded"
IMPUTED = "imputed"
INTERVAL = "interval"

LOW_SUPPORT_FRACTION = 0.05
RIDGE_SCALE = 1e-8
TIME_MATCH_TOL = 1e-9


def clamp_and_normalise(p, k: int):
    """Clamp into [1/(2K), 1 - 1/(2K)] and map through the normal quantile.

    Returns (p_clamped, n, clamped); NaN inputs stay NaN and are never flagged.
    """

    if k < 1:
        raise SpecError("K must be at least 1", field="k")
    p = np.asarray(p, dtype=float)
    bound = 1.0 / (2.0 * k)
    clamped_p = np.clip(p, bound, 1.0 - bound)
    fired = (clamped_p != p) & ~np.isnan(p)
    normal = ndtri(clamped_p)
    if p.ndim == 0:
        return float(clamped_p), float(normal), bool(fired)
    return clamped_p, normal, fired


def empirical_cdf(event_times: np.ndarray, t: float) -> float:
    """F(t) estimated as the fraction of uncensored replicate times strictly below t."""

    return float(np.mean(np.asarray(event_times, dtype=float) < t))


def compute_pd_tte(
    record: EventRecord,
    replicate_event_times: np.ndarray,
    seed: SeedLike,
    subject_id: str = "",
) -> TteResidual:
    event_times = np.asarray(replicate_event_times, dtype=float)
    k = event_times.size
    if k == 0:
        raise SpecError("no replicate event times to rank against", field="k")

    rng = as_generator(seed)
    draw = rng.random()
    flags: Tuple[str, ...] = ()
    lower_bound = None
    if record.kind is EventKind.OBSERVED:
        raw = empirical_cdf(event_times, record.time)
    elif record.kind is EventKind.INTERVAL_CENSORED:
        low = empirical_cdf(event_times, record.time)
        high = empirical_cdf(event_times, record.upper_time)
        raw = low + (high - low) * draw
        lower_bound = low
        flags = (IMPUTED, INTERVAL)
    else:
        low = empirical_cdf(event_times, record.time)
        raw = low + (1.0 - low) * draw
        lower_bound = low
        flags = (IMPUTED,)

    pd_value, npd, clamped = clamp_and_normalise(raw, k)
    if clamped:
        flags = flags + (CLAMPED,)
    if lower_bound is not None:
        lower_bound = clamp_and_normalise(lower_bound, k)[0]
    return TteResidual(
        subject_id=subject_id,
        event=record,
        pd=pd_value,
        npd=npd,
        imputed=record.kind is not EventKind.OBSERVED,
        imputation_lower_bound=lower_bound,
        flags=flags,
    )


def _survival_weighted_rank(
    observed: np.ndarray,
    simulated: np.ndarray,
    event_times: np.ndarray,
    times: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    # simulated has shape (K, n_i); replicates count only while their event is later than t_ij
    survivors = np.asarray(event_times, dtype=float)[:, None] > np.asarray(times, dtype=float)[None, :]
    below = np.asarray(simulated, dtype=float) < np.asarray(observed, dtype=float)[None, :]
    counts = survivors.sum(axis=0)
    hits = (below & survivors).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        pd_values = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    return pd_values, counts


def compute_pd_longitudinal(
    observed: np.ndarray,
    replicate_values: np.ndarray,
    replicate_event_times: np.ndarray,
    times: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Unclamped pd and survivor counts; pd is NaN where no replicate survives past t."""

    return _survival_weighted_rank(observed, replicate_values, replicate_event_times, times)


def compute_pde(
    decorrelated_observed: np.ndarray,
    decorrelated_replicates: np.ndarray,
    replicate_event_times: np.ndarray,
    times: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    return _survival_weighted_rank(decorrelated_observed, decorrelated_replicates, replicate_event_times, times)


def _inverse_factor(covariance: np.ndarray, subject_id: str) -> Tuple[np.ndarray, float]:
    n = covariance.shape[0]
    try:
        lower = cholesky(covariance, lower=True)
        ridge = 0.0
    except LinAlgError:
        ridge = RIDGE_SCALE * float(np.trace(covariance)) / n
        LOGGER.debug("subject %s: covariance not positive definite, adding ridge %g", subject_id, ridge)
        try:
            lower = cholesky(covariance + ridge * np.eye(n), lower=True)
        except LinAlgError as exc:
            raise NumericalError(
                f"replicate covariance of subject {subject_id} is not positive definite",
                context={"subject": subject_id, "ridge": ridge},
            ) from exc
    return solve_triangular(lower, np.eye(n), lower=True), ridge


def decorrelate(
    observed: np.ndarray,
    replicate_values: np.ndarray,
    subject_id: str = "",
) -> Tuple[np.ndarray, np.ndarray, MomentSummary]:
    """Whiten the observed vector and every replicate with the replicate mean and covariance."""

    observed = np.asarray(observed, dtype=float)
    simulated = np.asarray(replicate_values, dtype=float)
    if observed.size == 0:
        raise SpecError(f"subject {subject_id} has no observations to decorrelate", field="time")
    if simulated.shape[0] < 2:
        raise SpecError("decorrelation needs at least two replicates", field="k")
    mean = simulated.mean(axis=0)
    covariance = np.atleast_2d(np.cov(simulated, rowvar=False, ddof=1))
    if not np.all(np.isfinite(covariance)):
        raise NumericalError(f"replicate covariance of subject {subject_id} is not finite", context={"subject": subject_id})
    factor, ridge = _inverse_factor(covariance, subject_id)
    observed_star = factor @ (observed - mean)
    simulated_star = (simulated - mean) @ factor.T
    return observed_star, simulated_star, MomentSummary(mean=mean, covariance=covariance, factor=factor, ridge=ridge)


def grid_indices(times: np.ndarray, planned_times: np.ndarray, subject_id: str = "") -> np.ndarray:
    """Column of the replicate grid holding each observation time."""

    times = np.asarray(times, dtype=float)
    planned_times = np.asarray(planned_times, dtype=float)
    last = planned_times.size - 1
    right = np.clip(np.searchsorted(planned_times, times), 0, last)
    left = np.clip(right - 1, 0, last)
    index = np.where(np.abs(planned_times[left] - times) < np.abs(planned_times[right] - times), left, right)
    matched = np.abs(planned_times[index] - times) <= TIME_MATCH_TOL * np.maximum(1.0, np.abs(times))
    if not np.all(matched):
        missing = times[~matched][0]
        raise SpecError(f"subject {subject_id}: observation time {missing} is not on the design grid", field="time")
    return index


def subject_residuals(
    subject: SubjectData,
    replicate_values: np.ndarray,
    replicate_event_times: np.ndarray,
    planned_times: np.ndarray,
    seed: SeedLike,
) -> Tuple[List[LongitudinalResidual], TteResidual]:
    """Residuals of one subject against its (K, P) replicate grid."""

    k = replicate_event_times.size
    columns = grid_indices(subject.times, planned_times, subject.id)
    simulated = replicate_values[:, columns]

    pd_raw, survivors = compute_pd_longitudinal(subject.values, simulated, replicate_event_times, subject.times)
    observed_star, simulated_star, _ = decorrelate(subject.values, simulated, subject.id)
    pde_raw, _ = compute_pde(observed_star, simulated_star, replicate_event_times, subject.times)
    pd_values, npd, pd_clamped = clamp_and_normalise(pd_raw, k)
    pde_values, npde, pde_clamped = clamp_and_normalise(pde_raw, k)

    minimum_support = math.ceil(LOW_SUPPORT_FRACTION * k)
    longitudinal: List[LongitudinalResidual] = []
    for j, time in enumerate(subject.times):
        flags: List[str] = []
        if survivors[j] == 0:
            flags.append(EXCLUDED)
        elif survivors[j] < minimum_support:
            flags.append(LOW_SUPPORT)
        if pd_clamped[j] or pde_clamped[j]:
            flags.append(CLAMPED)
        excluded = survivors[j] == 0
        longitudinal.append(
            LongitudinalResidual(
                subject_id=subject.id,
                time=float(time),
                value=float(subject.values[j]),
                pd=float(pd_values[j]),
                npd=float(npd[j]),
                pde=float("nan") if excluded else float(pde_values[j]),
                npde=float("nan") if excluded else float(npde[j]),
                survivor_count=int(survivors[j]),
                flags=tuple(flags),
            )
        )
    tte = compute_pd_tte(subject.event, replicate_event_times, seed, subject_id=subject.id)
    return longitudinal, tte


def compute_residuals(
    observed: Sequence[SubjectData],
    replicates: ReplicateSet,
    design: StudyDesign | None = None,
    seed: SeedSpec | int = 0,
    study: int = 0,
) -> ResidualTable:
    """Every residual of a dataset; subject i imputes from its own stream of the master seed."""

    ids = [subject.id for subject in observed]
    if list(replicates.subject_ids) != ids:
        raise SpecError("replicate set and dataset list different subjects", field="id")
    planned_times = design.times if design is not None else np.asarray(replicates.planned_times, dtype=float)
    if planned_times.size != replicates.values.shape[2]:
        raise SpecError("design grid does not match the replicate grid", field="planned_times")
    if isinstance(seed, SeedSpec):
        master, study = seed.master_seed, seed.study
    else:
        master = int(seed)

    longitudinal: List[LongitudinalResidual] = []
    tte: List[TteResidual] = []
    for i, subject in enumerate(observed):
        stream = seed_generator(SeedSpec(master, study, i, OBSERVED_BLOCK, "impute"))
        rows, event = subject_residuals(subject, replicates.values[i], replicates.event_times[i], planned_times, stream)
        longitudinal.extend(rows)
        tte.append(event)

    table = ResidualTable(longitudinal=longitudinal, tte=tte, k=replicates.k)
    excluded = table.excluded()
    if excluded:
        LOGGER.warning(
            "%d observations have no surviving replicates and are left out of the tests: %s",
            len(excluded),
            ", ".join(f"{res.subject_id}@{res.time:g}" for res in excluded),
        )
    low_support = sum(LOW_SUPPORT in res.flags for res in longitudinal)
    if low_support:
        LOGGER.warning("%d observations rest on fewer than %d surviving replicates", low_support, math.ceil(LOW_SUPPORT_FRACTION * replicates.k))
    LOGGER.debug("Computed %d longitudinal and %d TTE residuals (K=%d)", len(longitudinal), len(tte), replicates.k)
    return table
