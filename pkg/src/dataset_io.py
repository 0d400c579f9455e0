from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from .data_models import (
    RESIDUAL_COLUMNS,
    EventKind,
    EventRecord,
    LongitudinalResidual,
    ReplicateSet,
    ResidualTable,
    StudyDesign,
    SubjectData,
    TteResidual,
)
from .errors import SpecError

LOGGER = logging.getLogger(__name__)

LONGITUDINAL_COLUMNS = ["id", "time", "value"]
EVENT_COLUMNS = ["id", "time", "event"]
UPPER_TIME_COLUMN = "time_upper"
LONGITUDINAL_FILE = "longitudinal.csv"
EVENTS_FILE = "events.csv"


def longitudinal_to_dataframe(subjects: Iterable[SubjectData]) -> pd.DataFrame:
    data = [
        {"id": subject.id, "time": float(time), "value": float(value)}
        for subject in subjects
        for time, value in zip(subject.times, subject.values)
    ]
    return pd.DataFrame(data, columns=LONGITUDINAL_COLUMNS)


def events_to_dataframe(subjects: Iterable[SubjectData]) -> pd.DataFrame:
    subjects = list(subjects)
    data = [{"id": s.id, "time": s.event.time, "event": s.event.indicator} for s in subjects]
    frame = pd.DataFrame(data, columns=EVENT_COLUMNS)
    if any(s.event.kind is EventKind.INTERVAL_CENSORED for s in subjects):
        frame[UPPER_TIME_COLUMN] = [s.event.upper_time for s in subjects]
    return frame


def write_dataset(subjects: Sequence[SubjectData], directory: str | Path) -> Tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    longitudinal_path = directory / LONGITUDINAL_FILE
    events_path = directory / EVENTS_FILE
    longitudinal_to_dataframe(subjects).to_csv(longitudinal_path, index=False)
    events_to_dataframe(subjects).to_csv(events_path, index=False)
    LOGGER.info("Wrote %d subjects to %s", len(subjects), directory)
    return longitudinal_path, events_path


def _read_csv(path: str | Path, columns: List[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype={"id": str})
    except FileNotFoundError as exc:
        raise SpecError(f"{path} not found", field="path") from exc
    missing = [column for column in columns if column not in frame.columns]
    if missing:
        raise SpecError(f"{path} is missing columns {missing}", field=missing[0])
    if frame[columns].isna().any().any():
        column = next(c for c in columns if frame[c].isna().any())
        raise SpecError(f"{path} has empty cells in column {column}", field=column)
    return frame


def _event_record(row: pd.Series, has_upper: bool) -> EventRecord:
    indicator = int(row["event"])
    if indicator not in (0, 1):
        raise SpecError(f"subject {row['id']}: event must be 0 or 1, got {row['event']}", field="event")
    if indicator == 1:
        return EventRecord(float(row["time"]), EventKind.OBSERVED)
    upper = row[UPPER_TIME_COLUMN] if has_upper else np.nan
    if pd.notna(upper):
        if float(upper) < float(row["time"]):
            raise SpecError(f"subject {row['id']}: time_upper precedes time", field=UPPER_TIME_COLUMN)
        return EventRecord(float(row["time"]), EventKind.INTERVAL_CENSORED, float(upper))
    return EventRecord(float(row["time"]), EventKind.RIGHT_CENSORED)


def frames_to_subjects(longitudinal: pd.DataFrame, events: pd.DataFrame) -> List[SubjectData]:
    """Join the two tables; subjects follow the event table's order."""

    if events["id"].duplicated().any():
        duplicate = events.loc[events["id"].duplicated(), "id"].iloc[0]
        raise SpecError(f"subject {duplicate} appears twice in the event table", field="id")
    known = set(longitudinal["id"])
    for subject_id in events["id"]:
        if subject_id not in known:
            raise SpecError(f"unknown subject id {subject_id} in the event table", field="id")
    orphans = sorted(known - set(events["id"]))
    if orphans:
        raise SpecError(f"subject id {orphans[0]} has no event record", field="id")

    has_upper = UPPER_TIME_COLUMN in events.columns
    grouped = {key: group.sort_values("time", kind="stable") for key, group in longitudinal.groupby("id", sort=False)}
    subjects: List[SubjectData] = []
    for _, row in events.iterrows():
        record = _event_record(row, has_upper)
        observations = grouped[row["id"]]
        times = observations["time"].to_numpy(dtype=float)
        if np.any(times > record.time):
            raise SpecError(f"subject {row['id']} has observations after its event record", field="time")
        subjects.append(
            SubjectData(
                id=str(row["id"]),
                times=times,
                values=observations["value"].to_numpy(dtype=float),
                event=record,
            )
        )
    return subjects


def read_dataset(longitudinal_path: str | Path, events_path: str | Path) -> List[SubjectData]:
    longitudinal = _read_csv(longitudinal_path, LONGITUDINAL_COLUMNS)
    events = _read_csv(events_path, EVENT_COLUMNS)
    subjects = frames_to_subjects(longitudinal, events)
    LOGGER.info("Read %d subjects (%d observations)", len(subjects), len(longitudinal))
    return subjects


def infer_design(subjects: Sequence[SubjectData], study_end: float) -> StudyDesign:
    """Planned grid = every distinct observation time in the dataset."""

    times = np.unique(np.concatenate([subject.times for subject in subjects])) if subjects else np.empty(0)
    if times.size == 0:
        raise SpecError("dataset has no longitudinal observations", field="time")
    return StudyDesign(n_subjects=len(subjects), planned_times=tuple(float(t) for t in times), study_end=float(study_end))


def write_residuals(table: ResidualTable, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_dataframe().to_csv(path, index=False, na_rep="")
    return path


def _flags(value) -> Tuple[str, ...]:
    if pd.isna(value) or value == "":
        return ()
    return tuple(str(value).split(";"))


def read_residuals(path: str | Path) -> ResidualTable:
    """Load a residual CSV; TTE censoring is recovered from the flags column."""

    frame = _read_csv(path, ["id", "time", "type"])
    missing = [column for column in RESIDUAL_COLUMNS if column not in frame.columns]
    if missing:
        raise SpecError(f"{path} is missing columns {missing}", field=missing[0])
    longitudinal: List[LongitudinalResidual] = []
    tte: List[TteResidual] = []
    for _, row in frame.iterrows():
        flags = _flags(row["flags"])
        if row["type"] == "long":
            longitudinal.append(
                LongitudinalResidual(
                    subject_id=str(row["id"]),
                    time=float(row["time"]),
                    value=float("nan"),
                    pd=float(row["pd"]),
                    npd=float(row["npd"]),
                    pde=float(row["pde"]),
                    npde=float(row["npde"]),
                    survivor_count=int(row["survivor_count"]) if pd.notna(row["survivor_count"]) else 0,
                    flags=flags,
                )
            )
        elif row["type"] == "tte":
            if "interval" in flags:
                kind = EventKind.INTERVAL_CENSORED
            elif "imputed" in flags:
                kind = EventKind.RIGHT_CENSORED
            else:
                kind = EventKind.OBSERVED
            tte.append(
                TteResidual(
                    subject_id=str(row["id"]),
                    event=EventRecord(float(row["time"]), kind),
                    pd=float(row["pd"]),
                    npd=float(row["npd"]),
                    imputed=kind is not EventKind.OBSERVED,
                    flags=flags,
                )
            )
        else:
            raise SpecError(f"unknown residual type {row['type']!r}", field="type")
    return ResidualTable(longitudinal=longitudinal, tte=tte, k=0)


def replicates_to_dataframe(replicates: ReplicateSet) -> pd.DataFrame:
    n, k, p = replicates.values.shape
    return pd.DataFrame(
        {
            "id": np.repeat(np.asarray(replicates.subject_ids, dtype=object), k * p),
            "replicate": np.tile(np.repeat(np.arange(1, k + 1), p), n),
            "time": np.tile(replicates.planned_times, n * k),
            "value": replicates.values.reshape(-1),
        }
    )


def replicate_events_to_dataframe(replicates: ReplicateSet) -> pd.DataFrame:
    n, k = replicates.event_times.shape
    return pd.DataFrame(
        {
            "id": np.repeat(np.asarray(replicates.subject_ids, dtype=object), k),
            "replicate": np.tile(np.arange(1, k + 1), n),
            "time": replicates.censored_times().reshape(-1),
            "event_time_uncensored": replicates.event_times.reshape(-1),
            "event": replicates.event_indicators().reshape(-1),
        }
    )


def write_replicates(replicates: ReplicateSet, directory: str | Path) -> Tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    values_path = directory / "replicates.csv"
    events_path = directory / "replicate_events.csv"
    replicates_to_dataframe(replicates).to_csv(values_path, index=False)
    replicate_events_to_dataframe(replicates).to_csv(events_path, index=False)
    return values_path, events_path
