"""Journey CSV ingestion for docked bike-sharing exports.

Rows are cleaned with an explicit, reason-coded rejection taxonomy, times
are converted to hours since the window origin (local midnight of the
start date), and accepted journeys are split into train and test stores by
end time.

Civil times are local. For times that fall in a DST gap or overlap the
offset in force *before* the transition is used (``fold=0``); how many
such rows occurred is reported.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence
from zoneinfo import ZoneInfo

import numpy as np

from gbmep.errors import IngestError, SchemaError
from gbmep.events import EventStore
from gbmep.geometry import StationRegistry

log = logging.getLogger(__name__)

REASONS = (
    "duplicate_rental_id",
    "unparseable_timestamp",
    "unknown_station",
    "non_positive_duration",
    "duration_mismatch",
    "outside_window",
)
DURATION_SLACK_S = 60.0


@dataclass
class ColumnMap:
    """Journey CSV column names; defaults follow the public TfL export."""

    rental_id: str = "Rental Id"
    start: str = "Start Date"
    end: str = "End Date"
    start_station: str = "StartStation Id"
    end_station: str = "EndStation Id"
    duration: str | None = "Duration"
    time_format: str = "%d/%m/%Y %H:%M"
    timezone: str = "Europe/London"
    duration_unit: str = "s"

    def __post_init__(self):
        names = [self.rental_id, self.start, self.end, self.start_station, self.end_station]
        if self.duration:
            names.append(self.duration)
        if len(set(names)) != len(names):
            raise SchemaError("mapped column names must be distinct")
        if self.duration_unit not in ("s", "ms", "min"):
            raise ValueError("duration_unit must be one of s, ms, min")

    def required(self) -> list[str]:
        cols = [self.rental_id, self.start, self.end, self.start_station, self.end_station]
        return cols + ([self.duration] if self.duration else [])


@dataclass
class StationColumns:
    id: str = "id"
    name: str = "name"
    lat: str = "lat"
    lon: str = "lon"


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_accepted: int = 0
    rejected: dict = field(default_factory=lambda: {r: 0 for r in REASONS})
    origin: str = ""
    horizon_hours: float = 0.0
    t_star_hours: float = 0.0
    n_train: int = 0
    n_test: int = 0
    n_stations: int = 0
    dst_ambiguous: int = 0
    dst_nonexistent: int = 0

    def check(self):
        if self.rows_read != self.rows_accepted + sum(self.rejected.values()):
            raise AssertionError("ingest report does not balance")

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(asdict(self), indent=1) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def _parse_date(value) -> dt.date:
    if isinstance(value, dt.date):
        return value
    return dt.date.fromisoformat(str(value))


class _Clock:
    """Local civil timestamps to hours since a local-midnight origin."""

    def __init__(self, origin: dt.date, fmt: str, tz: str):
        self.zone = ZoneInfo(tz)
        self.fmt = fmt
        self.origin = dt.datetime.combine(origin, dt.time(), tzinfo=self.zone)
        self.origin_utc = self.origin.astimezone(dt.timezone.utc)
        self.ambiguous = 0
        self.nonexistent = 0
        self._parse = lru_cache(maxsize=1 << 20)(self._parse_uncached)

    def hours_at(self, day: dt.date) -> float:
        local = dt.datetime.combine(day, dt.time(), tzinfo=self.zone)
        return self._hours(local)

    def _hours(self, local: dt.datetime) -> float:
        return (local.astimezone(dt.timezone.utc) - self.origin_utc).total_seconds() / 3600.0

    def _parse_uncached(self, text: str):
        naive = dt.datetime.strptime(text.strip(), self.fmt)
        local = naive.replace(tzinfo=self.zone, fold=0)
        flag = 0
        if local.utcoffset() != naive.replace(tzinfo=self.zone, fold=1).utcoffset():
            # overlap if the wall time round-trips, gap otherwise
            back = local.astimezone(dt.timezone.utc).astimezone(self.zone).replace(tzinfo=None)
            flag = 1 if back == naive else 2
        return self._hours(local), flag

    def parse(self, text: str) -> float:
        hours, flag = self._parse(text)
        if flag == 1:
            self.ambiguous += 1
        elif flag == 2:
            self.nonexistent += 1
        return hours


_UNIT = {"s": 1.0, "ms": 1e-3, "min": 60.0}


def ingest(
    journey_files: Sequence[str | Path],
    stations_file: str | Path,
    columns: ColumnMap | None = None,
    window: tuple = ("2022-03-02", "2022-06-22", "2022-10-10"),
    station_columns: StationColumns | None = None,
) -> tuple[EventStore, EventStore, StationRegistry, IngestReport]:
    """Parse journeys into (train, test, registry, report).

    Each entry of ``journey_files`` is a path or a ``(path, ColumnMap)``
    pair, for exports whose schema differs from ``columns``. ``window`` is
    (start, split, end) as ISO dates; each is local midnight and the window
    is ``[start, end)``. Journeys ending before the split
    form the training store. The registry keeps only stations that occur in
    accepted journeys, in stations-file order.
    """
    columns = columns or ColumnMap()
    station_columns = station_columns or StationColumns()
    start_d, split_d, end_d = (_parse_date(w) for w in window)
    if not start_d < split_d < end_d:
        raise ValueError("window must satisfy start < split < end")
    clock = _Clock(start_d, columns.time_format, columns.timezone)
    T = clock.hours_at(end_d)
    t_star = clock.hours_at(split_d)

    stations = StationRegistry.from_csv(
        stations_file, station_columns.id, station_columns.name, station_columns.lat, station_columns.lon
    )
    report = IngestReport(origin=clock.origin.isoformat(), horizon_hours=T, t_star_hours=t_star)
    seen: set[str] = set()
    rows = []  # (end, rental id, src idx, dst idx, start)

    for entry in journey_files:
        path, cols = entry if isinstance(entry, tuple) else (entry, columns)
        unit = _UNIT[cols.duration_unit]
        file_clock = clock if (cols.time_format, cols.timezone) == (columns.time_format, columns.timezone) else None
        if file_clock is None:
            file_clock = _Clock(start_d, cols.time_format, cols.timezone)
        with open(path, newline="", encoding="utf-8-sig") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for col in cols.required():
                if col not in header:
                    raise SchemaError(f"{path}: missing column {col!r}", column=col)
            for row in reader:
                report.rows_read += 1
                reason = _classify(row, cols, file_clock, stations, seen, unit, T)
                if isinstance(reason, str):
                    report.rejected[reason] += 1
                    continue
                rows.append(reason)
        if file_clock is not clock:
            clock.ambiguous += file_clock.ambiguous
            clock.nonexistent += file_clock.nonexistent

    if not rows:
        raise IngestError("no journeys accepted; check the column map and window")
    rows.sort(key=lambda r: (r[0], r[1]))
    used = sorted({r[2] for r in rows} | {r[3] for r in rows})
    remap = {old: new for new, old in enumerate(used)}
    registry = stations.subset(used)
    src = np.array([remap[r[2]] for r in rows], dtype=np.int64)
    dst = np.array([remap[r[3]] for r in rows], dtype=np.int64)
    st = np.array([r[4] for r in rows])
    en = np.array([r[0] for r in rows])
    first = en < t_star
    train = EventStore(src[first], dst[first], st[first], en[first], len(registry), t_star)
    test = EventStore(src[~first], dst[~first], st[~first], en[~first], len(registry), T)

    report.rows_accepted = len(rows)
    report.n_train = len(train)
    report.n_test = len(test)
    report.n_stations = len(registry)
    report.dst_ambiguous = clock.ambiguous
    report.dst_nonexistent = clock.nonexistent
    report.check()
    log.info("ingested %d of %d rows (%d train / %d test, %d stations)", report.rows_accepted,
             report.rows_read, report.n_train, report.n_test, report.n_stations)
    return train, test, registry, report


def _classify(row, columns, clock, stations, seen, unit, T):
    rid = (row.get(columns.rental_id) or "").strip()
    if rid in seen:
        return "duplicate_rental_id"
    seen.add(rid)
    try:
        start = clock.parse(row[columns.start])
        end = clock.parse(row[columns.end])
    except (TypeError, ValueError, AttributeError):
        return "unparseable_timestamp"
    s_id = (row.get(columns.start_station) or "").strip()
    e_id = (row.get(columns.end_station) or "").strip()
    if s_id not in stations or e_id not in stations:
        return "unknown_station"
    if end <= start:
        return "non_positive_duration"
    if columns.duration:
        try:
            dur_s = float(row[columns.duration]) * unit
        except (TypeError, ValueError):
            return "duration_mismatch"
        if abs(dur_s - (end - start) * 3600.0) > DURATION_SLACK_S:
            return "duration_mismatch"
    if start < 0 or end > T:
        return "outside_window"
    return (end, rid, stations.index_of(s_id), stations.index_of(e_id), start)


def summarize(store: EventStore, registry: StationRegistry | None = None) -> dict:
    """Per-node start/end counts and totals."""
    n = store.n_nodes
    starts = np.bincount(store.sources, minlength=n) if len(store) else np.zeros(n, dtype=int)
    ends = np.bincount(store.destinations, minlength=n) if len(store) else np.zeros(n, dtype=int)
    ids = registry.ids if registry is not None else [str(i) for i in range(n)]
    nodes = [{"node": i, "id": ids[i], "n_starts": int(starts[i]), "n_ends": int(ends[i])} for i in range(n)]
    return {
        "n_nodes": n,
        "n_records": len(store),
        "total_starts": int(starts.sum()),
        "total_ends": int(ends.sum()),
        "first_start": float(store.starts.min()) if len(store) else 0.0,
        "last_end": float(store.ends.max()) if len(store) else 0.0,
        "horizon": store.horizon,
        "nodes": nodes,
    }
