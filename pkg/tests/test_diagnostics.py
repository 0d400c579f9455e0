import numpy as np
import pytest

from src.data_models import EventKind, EventRecord, LongitudinalResidual, ReplicateSet, TteResidual
from src.diagnostics import (
    band_points_outside,
    bands_to_dataframe,
    detrended_pd_wormplot,
    km_at,
    km_estimator,
    km_vpc,
    km_vpc_to_dataframe,
    npd_histogram,
    npd_percentile_bands,
    npd_qq_points,
    theoretical_percentile_interval,
    vpc_grid,
    worm_points_outside,
    wormplot_to_dataframe,
)
from src.errors import SpecError
from src.evaluation import evaluate_model
from src.model_core import base_model_spec
from src.simulator import default_design, simulate_dataset


def _residual(time: float, npd: float, flags=()) -> LongitudinalResidual:
    return LongitudinalResidual("s", time, 0.0, 0.5, npd, 0.5, npd, 100, tuple(flags))


def _tte(subject_id: str, pd_value: float, imputed: bool = False) -> TteResidual:
    kind = EventKind.RIGHT_CENSORED if imputed else EventKind.OBSERVED
    return TteResidual(subject_id, EventRecord(100.0, kind), pd_value, 0.0, imputed)


def test_wormplot_single_point():
    (point,) = detrended_pd_wormplot([_tte("a", 0.5)])
    assert point.theoretical == pytest.approx(0.5)
    assert point.lower == pytest.approx(-0.45)
    assert point.upper == pytest.approx(0.45)
    assert point.detrended == pytest.approx(0.0)


def test_wormplot_sorts_by_pd_and_counts_outliers():
    points = detrended_pd_wormplot([_tte("a", 0.9), _tte("b", 0.1, imputed=True), _tte("c", 0.5)])
    assert [point.subject_id for point in points] == ["b", "c", "a"]
    assert [point.rank for point in points] == [1, 2, 3]
    assert points[0].imputed
    assert worm_points_outside(points) == 0
    skewed = detrended_pd_wormplot([_tte(str(i), 0.999) for i in range(30)])
    assert worm_points_outside(skewed) > 0
    frame = wormplot_to_dataframe(points)
    assert list(frame["imputed"]) == [1, 0, 0]


def test_wormplot_needs_residuals():
    with pytest.raises(SpecError):
        detrended_pd_wormplot([])


def test_percentile_interval_narrows_with_bin_size():
    small_low, small_high = theoretical_percentile_interval(50.0, 20)
    large_low, large_high = theoretical_percentile_interval(50.0, 200)
    assert small_high - small_low > large_high - large_low
    assert small_low < 0 < small_high


def test_small_trailing_bin_is_merged():
    rng = np.random.default_rng(0)
    residuals = [_residual(t, float(v)) for t, v in zip([0.0] * 10 + [10.0] * 10 + [20.0] * 2, rng.normal(size=22))]
    bands = npd_percentile_bands(residuals)
    assert len(bands) == 2
    assert [band.bin_count for band in bands] == [10, 12]
    assert not bands[0].merged and bands[1].merged
    assert bands[1].time_low == 10.0 and bands[1].time_high == 20.0


def test_constant_npd_gives_identical_percentiles():
    bands = npd_percentile_bands([_residual(0.0, 0.7) for _ in range(8)])
    assert bands[0].observed == (0.7, 0.7, 0.7)


def test_bands_skip_excluded_residuals():
    residuals = [_residual(float(t), 0.0) for t in range(0, 100, 10)] + [_residual(50.0, float("nan"), ("excluded",))]
    bands = npd_percentile_bands(residuals, n_bins=2, min_count=1)
    assert sum(band.bin_count for band in bands) == 10


def test_standard_normal_npd_stay_inside_bands():
    rng = np.random.default_rng(1)
    residuals = [_residual(float(t), float(rng.normal())) for t in np.repeat(np.linspace(0.0, 365.0, 9), 200)]
    bands = npd_percentile_bands(residuals)
    assert len(bands) == 9
    assert band_points_outside(bands) <= 8
    frame = bands_to_dataframe(bands)
    assert len(frame) == 27
    assert set(frame["percentile"]) == {5.0, 50.0, 95.0}


def test_shifted_npd_leave_the_bands():
    rng = np.random.default_rng(2)
    residuals = [_residual(float(t), float(rng.normal(loc=1.0))) for t in np.repeat([0.0, 100.0], 200)]
    assert band_points_outside(npd_percentile_bands(residuals)) >= 4


def test_kaplan_meier_all_events():
    curve = km_estimator([EventRecord(1.0), EventRecord(2.0), EventRecord(3.0)])
    np.testing.assert_allclose(km_at(curve, [0.5, 1.0, 2.0, 3.0]), [1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0])


def test_kaplan_meier_with_censoring():
    curve = km_estimator([EventRecord(1.0), EventRecord(2.0, EventKind.RIGHT_CENSORED), EventRecord(3.0)])
    np.testing.assert_allclose(km_at(curve, [1.0, 2.0, 3.0]), [2.0 / 3.0, 2.0 / 3.0, 0.0])


def test_kaplan_meier_all_censored():
    records = [EventRecord(365.0, EventKind.RIGHT_CENSORED) for _ in range(4)]
    np.testing.assert_allclose(km_at(km_estimator(records), [100.0, 365.0]), 1.0)


def test_interval_censored_records_count_as_censored():
    records = [EventRecord(1.0), EventRecord(2.0, EventKind.INTERVAL_CENSORED, upper_time=5.0)]
    np.testing.assert_allclose(km_at(km_estimator(records), [1.0, 10.0]), [0.5, 0.5])


def test_vpc_grid_uses_observed_event_times():
    records = [EventRecord(5.0), EventRecord(3.0), EventRecord(365.0, EventKind.RIGHT_CENSORED)]
    np.testing.assert_array_equal(vpc_grid(records, [0.0, 365.0]), [3.0, 5.0])
    censored = [EventRecord(365.0, EventKind.RIGHT_CENSORED)]
    np.testing.assert_array_equal(vpc_grid(censored, [0.0, 365.0]), [0.0, 365.0])
    many = [EventRecord(float(t)) for t in range(1, 201)]
    assert vpc_grid(many, [], max_points=50).size == 50


def test_km_vpc_collapses_on_identical_replicates():
    records = [EventRecord(100.0), EventRecord(200.0), EventRecord(365.0, EventKind.RIGHT_CENSORED)]
    event_times = np.tile(np.array([[100.0], [200.0], [400.0]]), (1, 20))
    replicates = ReplicateSet(["1", "2", "3"], np.array([0.0, 365.0]), np.zeros((3, 20, 2)), event_times, 365.0)
    vpc = km_vpc(records, replicates)
    np.testing.assert_array_equal(vpc.bin_times, [100.0, 200.0])
    np.testing.assert_allclose(vpc.observed, [2.0 / 3.0, 1.0 / 3.0])
    np.testing.assert_allclose(vpc.lower, vpc.observed)
    np.testing.assert_allclose(vpc.upper, vpc.observed)
    assert list(km_vpc_to_dataframe(vpc).columns) == ["time", "observed", "lower", "median", "upper"]


def test_km_vpc_checks_subject_count():
    replicates = ReplicateSet(["1"], np.array([0.0]), np.zeros((1, 5, 1)), np.ones((1, 5)), 365.0)
    with pytest.raises(SpecError):
        km_vpc([EventRecord(1.0), EventRecord(2.0)], replicates)


def test_qq_points_are_sorted():
    points = npd_qq_points([0.3, -1.0, 2.0])
    assert [point.sample for point in points] == [-1.0, 0.3, 2.0]
    assert points[1].theoretical == pytest.approx(0.0)


def test_histogram_expected_counts():
    values = np.random.default_rng(3).normal(size=500)
    frame = npd_histogram(values, bins=12)
    assert frame["count"].sum() == 500
    assert frame["expected"].sum() <= 500


def _worm_outside_fraction(truth, tested, seeds, n_subjects=100, k=500):
    fractions = []
    for seed in seeds:
        subjects = simulate_dataset(truth, default_design(n_subjects), seed)
        result = evaluate_model(subjects, tested, k=k, seed=seed, with_vpc=False)
        fractions.append(worm_points_outside(result.wormplot) / n_subjects)
    return float(np.mean(fractions))


@pytest.mark.slow
def test_wormplot_coverage_under_the_true_model():
    truth = base_model_spec()
    null_fraction = _worm_outside_fraction(truth, truth, seeds=range(1, 9))
    assert null_fraction < 0.2
    misspecified = _worm_outside_fraction(truth, base_model_spec(k=0.8, name="k=0.8"), seeds=range(1, 4))
    assert misspecified > null_fraction
