"""Plot-ready diagnostic data: npd percentile bands, de-trended pd wormplot, Kaplan-Meier and KM-VPC."""

from __future__ import annotations

import logging
import math
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
from lifelines import KaplanMeierFitter
from scipy import stats
from scipy.special import ndtr, ndtri

from .data_models import (
    EventKind,
    EventRecord,
    KmCurve,
    KmVpc,
    LongitudinalResidual,
    PercentileBand,
    QqPoint,
    ReplicateSet,
    TteResidual,
    WormPoint,
)
from .errors import SpecError

LOGGER = logging.getLogger(__name__)

DEFAULT_BINS = 9
DEFAULT_PERCENTILES = (5.0, 50.0, 95.0)
DEFAULT_LEVEL = 0.90
MIN_BIN_COUNT = 5
MAX_VPC_POINTS = 50


def _tail_quantiles(level: float) -> Tuple[float, float]:
    if not 0 < level < 1:
        raise SpecError(f"level must lie in (0, 1), got {level}", field="level")
    return (1.0 - level) / 2.0, (1.0 + level) / 2.0


def detrended_pd_wormplot(tte_residuals: Sequence[TteResidual], level: float = DEFAULT_LEVEL) -> List[WormPoint]:
    """Sorted pd minus the Beta(i, n - i + 1) median, with the exact order-statistic band."""

    if not tte_residuals:
        raise SpecError("wormplot needs at least one TTE residual", field="tte")
    low_q, high_q = _tail_quantiles(level)
    ordered = sorted(tte_residuals, key=lambda res: res.pd)
    n = len(ordered)
    ranks = np.arange(1, n + 1)
    a, b = ranks, n - ranks + 1
    median = stats.beta.ppf(0.5, a, b)
    lower = stats.beta.ppf(low_q, a, b)
    upper = stats.beta.ppf(high_q, a, b)
    return [
        WormPoint(
            subject_id=res.subject_id,
            time=res.event.time,
            pd=res.pd,
            rank=int(ranks[i]),
            n=n,
            theoretical=float(median[i]),
            detrended=float(res.pd - median[i]),
            lower=float(lower[i] - median[i]),
            upper=float(upper[i] - median[i]),
            imputed=res.imputed,
        )
        for i, res in enumerate(ordered)
    ]


def worm_points_outside(points: Sequence[WormPoint]) -> int:
    return sum(not point.lower <= point.detrended <= point.upper for point in points)


def _assign_bins(times: np.ndarray, n_bins: int) -> np.ndarray:
    distinct = np.unique(times)
    if distinct.size <= n_bins:
        return np.searchsorted(distinct, times)
    # equal-count bins; identical times always share a bin
    edges = np.unique(np.quantile(times, np.linspace(0.0, 1.0, n_bins + 1)))
    labels = np.searchsorted(edges[1:-1], times, side="right")
    return np.unique(labels, return_inverse=True)[1]


def _merge_small_bins(labels: np.ndarray, min_count: int) -> Tuple[np.ndarray, set]:
    groups = [list(np.flatnonzero(labels == label)) for label in np.unique(labels)]
    merged: set = set()
    while len(groups) > 1:
        sizes = [len(group) for group in groups]
        smallest = int(np.argmin(sizes))
        if sizes[smallest] >= min_count:
            break
        if smallest == len(groups) - 1:
            neighbour = smallest - 1
        elif smallest == 0:
            neighbour = 1
        else:
            neighbour = smallest - 1 if sizes[smallest - 1] <= sizes[smallest + 1] else smallest + 1
        keep, drop = min(smallest, neighbour), max(smallest, neighbour)
        groups[keep] = sorted(groups[keep] + groups[drop])
        del groups[drop]
        merged = {m if m < drop else m - 1 for m in merged if m != drop} | {keep}
    result = np.empty(labels.size, dtype=int)
    for label, group in enumerate(groups):
        result[group] = label
    return result, merged


def theoretical_percentile_interval(percentile: float, m: int, level: float = DEFAULT_LEVEL) -> Tuple[float, float]:
    """Prediction interval of the sample percentile of m standard-normal draws."""

    low_q, high_q = _tail_quantiles(level)
    j = min(max(math.ceil(percentile / 100.0 * m), 1), m)
    lower, upper = ndtri(stats.beta.ppf([low_q, high_q], j, m - j + 1))
    return float(lower), float(upper)


def npd_percentile_bands(
    residuals: Sequence[LongitudinalResidual],
    n_bins: int = DEFAULT_BINS,
    percentiles: Sequence[float] = DEFAULT_PERCENTILES,
    level: float = DEFAULT_LEVEL,
    min_count: int = MIN_BIN_COUNT,
) -> List[PercentileBand]:
    usable = [res for res in residuals if not res.excluded and np.isfinite(res.npd)]
    if not usable:
        raise SpecError("percentile bands need at least one longitudinal residual", field="longitudinal")
    if n_bins < 1:
        raise SpecError("n_bins must be positive", field="n_bins")
    times = np.array([res.time for res in usable])
    values = np.array([res.npd for res in usable])
    order = np.lexsort((values, times))
    times, values = times[order], values[order]

    labels, merged = _merge_small_bins(_assign_bins(times, n_bins), min_count)
    if merged:
        LOGGER.warning("%d npd bins held fewer than %d points and were merged", len(merged), min_count)

    bands: List[PercentileBand] = []
    for label in range(labels.max() + 1):
        in_bin = labels == label
        bin_times, bin_values = times[in_bin], values[in_bin]
        m = int(bin_values.size)
        intervals = [theoretical_percentile_interval(p, m, level) for p in percentiles]
        bands.append(
            PercentileBand(
                bin_center=float(np.mean(bin_times)),
                bin_count=m,
                time_low=float(bin_times.min()),
                time_high=float(bin_times.max()),
                percentiles=tuple(float(p) for p in percentiles),
                observed=tuple(float(v) for v in np.percentile(bin_values, percentiles)),
                lower=tuple(lo for lo, _ in intervals),
                upper=tuple(hi for _, hi in intervals),
                merged=label in merged,
            )
        )
    return bands


def band_points_outside(bands: Sequence[PercentileBand]) -> int:
    return sum(
        not lower <= observed <= upper
        for band in bands
        for observed, lower, upper in zip(band.observed, band.lower, band.upper)
    )


def _fit_km(durations: np.ndarray, events: np.ndarray) -> KaplanMeierFitter:
    fitter = KaplanMeierFitter()
    fitter.fit(durations=durations, event_observed=events)
    return fitter


def km_estimator(records: Sequence[EventRecord]) -> KmCurve:
    """Product-limit estimate; interval-censored records count as censored at their lower bound."""

    if not records:
        raise SpecError("Kaplan-Meier needs at least one event record", field="events")
    durations = np.array([record.time for record in records], dtype=float)
    events = np.array([record.kind is EventKind.OBSERVED for record in records], dtype=bool)
    return km_from_arrays(durations, events)


def km_from_arrays(durations: np.ndarray, events: np.ndarray) -> KmCurve:
    fitter = _fit_km(np.asarray(durations, dtype=float), np.asarray(events, dtype=bool))
    table = fitter.event_table
    survival = fitter.survival_function_.reindex(table.index)
    return KmCurve(
        times=table.index.to_numpy(dtype=float),
        survival=survival.iloc[:, 0].to_numpy(dtype=float),
        at_risk=table["at_risk"].to_numpy(dtype=int),
        events=table["observed"].to_numpy(dtype=int),
    )


def km_at(curve: KmCurve, times) -> np.ndarray:
    """Right-continuous step evaluation; 1 before the first step."""

    times = np.asarray(times, dtype=float)
    index = np.searchsorted(curve.times, times, side="right") - 1
    return np.where(index >= 0, curve.survival[np.maximum(index, 0)], 1.0)


def vpc_grid(records: Sequence[EventRecord], fallback: Sequence[float], max_points: int = MAX_VPC_POINTS) -> np.ndarray:
    event_times = np.unique([record.time for record in records if record.observed])
    if event_times.size == 0:
        return np.asarray(fallback, dtype=float)
    if event_times.size <= max_points:
        return event_times
    picks = np.unique(np.round(np.linspace(0, event_times.size - 1, max_points)).astype(int))
    return event_times[picks]


def km_vpc(
    records: Sequence[EventRecord],
    replicates: ReplicateSet,
    time_bins: Sequence[float] | None = None,
    level: float = DEFAULT_LEVEL,
) -> KmVpc:
    """Percentile band of the replicate KM curves at the grid times, with the observed KM overlaid."""

    if len(records) != replicates.event_times.shape[0]:
        raise SpecError("event records and replicate set cover different subjects", field="events")
    low_q, high_q = _tail_quantiles(level)
    grid = np.asarray(time_bins, dtype=float) if time_bins is not None else vpc_grid(records, replicates.planned_times)
    observed_curve = km_estimator(records)

    durations = replicates.censored_times()
    indicators = replicates.event_indicators().astype(bool)
    simulated = np.empty((replicates.k, grid.size))
    for k in range(replicates.k):
        simulated[k] = km_at(km_from_arrays(durations[:, k], indicators[:, k]), grid)
    lower, median, upper = np.percentile(simulated, [100 * low_q, 50.0, 100 * high_q], axis=0)
    return KmVpc(
        bin_times=grid,
        observed=km_at(observed_curve, grid),
        lower=lower,
        median=median,
        upper=upper,
        observed_curve=observed_curve,
        level=level,
    )


def npd_qq_points(values) -> List[QqPoint]:
    sample = np.sort(np.asarray(values, dtype=float).ravel())
    n = sample.size
    theoretical = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    return [QqPoint(float(t), float(s)) for t, s in zip(theoretical, sample)]


def npd_histogram(values, bins: int = 10) -> pd.DataFrame:
    values = np.asarray(values, dtype=float).ravel()
    counts, edges = np.histogram(values, bins=bins)
    expected = values.size * (ndtr(edges[1:]) - ndtr(edges[:-1]))
    return pd.DataFrame({"left": edges[:-1], "right": edges[1:], "count": counts, "expected": expected})


def wormplot_to_dataframe(points: Sequence[WormPoint]) -> pd.DataFrame:
    data = [
        {
            "id": point.subject_id,
            "time": point.time,
            "pd": point.pd,
            "rank": point.rank,
            "n": point.n,
            "theoretical": point.theoretical,
            "detrended": point.detrended,
            "lower": point.lower,
            "upper": point.upper,
            "imputed": int(point.imputed),
        }
        for point in points
    ]
    return pd.DataFrame(data, columns=["id", "time", "pd", "rank", "n", "theoretical", "detrended", "lower", "upper", "imputed"])


def bands_to_dataframe(bands: Sequence[PercentileBand]) -> pd.DataFrame:
    data = [
        {
            "bin_center": band.bin_center,
            "bin_count": band.bin_count,
            "time_low": band.time_low,
            "time_high": band.time_high,
            "percentile": percentile,
            "observed": observed,
            "lower": lower,
            "upper": upper,
            "merged": int(band.merged),
        }
        for band in bands
        for percentile, observed, lower, upper in zip(band.percentiles, band.observed, band.lower, band.upper)
    ]
    return pd.DataFrame(
        data,
        columns=["bin_center", "bin_count", "time_low", "time_high", "percentile", "observed", "lower", "upper", "merged"],
    )


def km_vpc_to_dataframe(vpc: KmVpc) -> pd.DataFrame:
    return pd.DataFrame(
        {"time": vpc.bin_times, "observed": vpc.observed, "lower": vpc.lower, "median": vpc.median, "upper": vpc.upper}
    )


def qq_to_dataframe(points: Sequence[QqPoint]) -> pd.DataFrame:
    return pd.DataFrame([{"theoretical": p.theoretical, "sample": p.sample} for p in points], columns=["theoretical", "sample"])
