"""Immutable storage of journey quadruples with per-node counting processes.

Times are hours measured from the window origin. Records are kept in
ascending end-time order; each node additionally gets a sorted view of the
start times of journeys leaving it and of the end times of journeys
arriving at it. Counting queries are left-continuous: an event at exactly
``t`` is not counted in ``N(t)``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from gbmep.errors import RegistryError, SchemaError

_HEADER = "source,destination,start,end"


@dataclass(frozen=True)
class EventRecord:
    source: int
    destination: int
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


def _csr(keys: np.ndarray, values: np.ndarray, n_nodes: int):
    # stable sort by (key, value); record position breaks ties
    order = np.lexsort((values, keys))
    counts = np.bincount(keys, minlength=n_nodes) if len(keys) else np.zeros(n_nodes, dtype=np.int64)
    ptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr, np.ascontiguousarray(values[order], dtype=np.float64), order


class EventStore:
    """Event quadruples over ``n_nodes`` nodes observed on ``[0, horizon]``.

    The constructor re-orders records by end time (stable, so ties keep the
    order in which they were supplied) and builds the per-node indices.
    Arrays are made read-only; the store is safe to share between workers.
    """

    def __init__(self, sources, destinations, starts, ends, n_nodes: int, horizon: float):
        sources = np.asarray(sources, dtype=np.int64).reshape(-1)
        destinations = np.asarray(destinations, dtype=np.int64).reshape(-1)
        starts = np.asarray(starts, dtype=np.float64).reshape(-1)
        ends = np.asarray(ends, dtype=np.float64).reshape(-1)
        n = len(sources)
        if not (len(destinations) == len(starts) == len(ends) == n):
            raise ValueError("sources, destinations, starts and ends must have equal length")
        n_nodes = int(n_nodes)
        horizon = float(horizon)
        if n_nodes < 0:
            raise ValueError("n_nodes must be non-negative")
        if not math.isfinite(horizon) or horizon < 0:
            raise ValueError(f"horizon must be finite and >= 0, got {horizon}")
        if n:
            for name, arr in (("source", sources), ("destination", destinations)):
                bad = (arr < 0) | (arr >= n_nodes)
                if bad.any():
                    raise RegistryError(f"unregistered {name} node {int(arr[bad][0])} (n_nodes={n_nodes})")
            if not (np.isfinite(starts).all() and np.isfinite(ends).all()):
                raise ValueError("event times must be finite")
            if (ends <= starts).any():
                k = int(np.flatnonzero(ends <= starts)[0])
                raise ValueError(f"record {k} has end {ends[k]} <= start {starts[k]}")
            if starts.min() < 0 or ends.max() > horizon:
                raise ValueError(f"event times must lie in [0, {horizon}]")

        order = np.argsort(ends, kind="stable")
        self._sources = sources[order]
        self._destinations = destinations[order]
        self._starts = starts[order]
        self._ends = ends[order]
        self.n_nodes = n_nodes
        self.horizon = horizon

        self._start_ptr, self._start_times, self._start_order = _csr(self._sources, self._starts, n_nodes)
        self._end_ptr, self._end_times, _ = _csr(self._destinations, self._ends, n_nodes)
        for arr in (self._sources, self._destinations, self._starts, self._ends,
                    self._start_ptr, self._start_times, self._start_order,
                    self._end_ptr, self._end_times):
            arr.setflags(write=False)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_records(cls, records: Iterable[EventRecord], n_nodes: int, horizon: float) -> EventStore:
        records = list(records)
        return cls(
            [r.source for r in records],
            [r.destination for r in records],
            [r.start for r in records],
            [r.end for r in records],
            n_nodes=n_nodes,
            horizon=horizon,
        )

    @classmethod
    def empty(cls, n_nodes: int, horizon: float) -> EventStore:
        return cls([], [], [], [], n_nodes=n_nodes, horizon=horizon)

    # -- array views ------------------------------------------------------------

    @property
    def sources(self) -> np.ndarray:
        return self._sources

    @property
    def destinations(self) -> np.ndarray:
        return self._destinations

    @property
    def starts(self) -> np.ndarray:
        return self._starts

    @property
    def ends(self) -> np.ndarray:
        return self._ends

    @property
    def start_index(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR pair ``(ptr, times)``; node i's start times are ``times[ptr[i]:ptr[i+1]]``."""
        return self._start_ptr, self._start_times

    @property
    def start_records(self) -> np.ndarray:
        """Record positions in per-node start order, aligned with ``start_index``."""
        return self._start_order

    @property
    def end_index(self) -> tuple[np.ndarray, np.ndarray]:
        return self._end_ptr, self._end_times

    def __len__(self) -> int:
        return len(self._sources)

    def __iter__(self) -> Iterator[EventRecord]:
        for s, d, a, b in zip(self._sources, self._destinations, self._starts, self._ends):
            yield EventRecord(int(s), int(d), float(a), float(b))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStore):
            return NotImplemented
        return (
            self.n_nodes == other.n_nodes
            and self.horizon == other.horizon
            and np.array_equal(self._sources, other._sources)
            and np.array_equal(self._destinations, other._destinations)
            and np.array_equal(self._starts, other._starts)
            and np.array_equal(self._ends, other._ends)
        )

    def __repr__(self) -> str:
        return f"EventStore(n_records={len(self)}, n_nodes={self.n_nodes}, horizon={self.horizon})"

    def _check_node(self, node: int) -> int:
        node = int(node)
        if not 0 <= node < self.n_nodes:
            raise RegistryError(f"unknown node {node} (n_nodes={self.n_nodes})")
        return node

    def starts_of(self, node: int) -> np.ndarray:
        """Sorted start times of journeys leaving ``node``."""
        node = self._check_node(node)
        return self._start_times[self._start_ptr[node]:self._start_ptr[node + 1]]

    def ends_of(self, node: int) -> np.ndarray:
        """Sorted end times of journeys arriving at ``node``."""
        node = self._check_node(node)
        return self._end_times[self._end_ptr[node]:self._end_ptr[node + 1]]

    def n_starts(self, node: int) -> int:
        node = self._check_node(node)
        return int(self._start_ptr[node + 1] - self._start_ptr[node])

    # -- counting processes -------------------------------------------------------

    def count_starts(self, node: int, t: float) -> int:
        """N_i(t): journeys started at ``node`` strictly before ``t``."""
        return int(np.searchsorted(self.starts_of(node), t, side="left"))

    def count_ends(self, node: int, t: float) -> int:
        """N'_i(t): journeys ended at ``node`` strictly before ``t``."""
        return int(np.searchsorted(self.ends_of(node), t, side="left"))

    # -- partitioning ---------------------------------------------------------------

    def split_at(self, t_star: float) -> tuple[EventStore, EventStore]:
        """Partition by end time into ``[0, t_star)`` (horizon ``t_star``) and the rest."""
        t_star = float(t_star)
        if not 0 < t_star < self.horizon:
            raise ValueError(f"t_star must lie in (0, {self.horizon}), got {t_star}")
        first = self._ends < t_star
        second = ~first
        a = EventStore(self._sources[first], self._destinations[first], self._starts[first],
                       self._ends[first], self.n_nodes, t_star)
        b = EventStore(self._sources[second], self._destinations[second], self._starts[second],
                       self._ends[second], self.n_nodes, self.horizon)
        return a, b

    # -- text format -------------------------------------------------------------------

    def to_csv(self, path: str | Path | None = None) -> str:
        """Serialize as ``source,destination,start,end`` lines; floats use ``repr``
        so a round trip is exact."""
        buf = io.StringIO()
        buf.write(f"# n_nodes={self.n_nodes} horizon={self.horizon!r}\n")
        buf.write(_HEADER + "\n")
        for s, d, a, b in zip(self._sources.tolist(), self._destinations.tolist(),
                              self._starts.tolist(), self._ends.tolist()):
            buf.write(f"{s},{d},{a!r},{b!r}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> EventStore:
        return cls.from_text(Path(path).read_text())

    @classmethod
    def from_text(cls, text: str) -> EventStore:
        lines = text.splitlines()
        if len(lines) < 2 or not lines[0].startswith("#"):
            raise SchemaError("event store text must start with a '# n_nodes=... horizon=...' line")
        meta = {}
        for tok in lines[0][1:].split():
            key, _, value = tok.partition("=")
            meta[key] = value
        try:
            n_nodes = int(meta["n_nodes"])
            horizon = float(meta["horizon"])
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"bad event store header: {lines[0]!r}") from exc
        if lines[1].strip() != _HEADER:
            raise SchemaError(f"expected column header {_HEADER!r}, got {lines[1]!r}")
        src, dst, st, en = [], [], [], []
        for lineno, line in enumerate(lines[2:], start=3):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise SchemaError(f"line {lineno}: expected 4 fields, got {len(parts)}")
            try:
                src.append(int(parts[0]))
                dst.append(int(parts[1]))
                st.append(float(parts[2]))
                en.append(float(parts[3]))
            except ValueError as exc:
                raise SchemaError(f"line {lineno}: {exc}") from exc
        return cls(src, dst, st, en, n_nodes=n_nodes, horizon=horizon)


def merge(first: EventStore, second: EventStore) -> EventStore:
    """Union of two stores over the same node set; horizon is the larger one."""
    if first.n_nodes != second.n_nodes:
        raise ValueError("stores cover different node sets")
    return EventStore(
        np.concatenate([first.sources, second.sources]),
        np.concatenate([first.destinations, second.destinations]),
        np.concatenate([first.starts, second.starts]),
        np.concatenate([first.ends, second.ends]),
        n_nodes=first.n_nodes,
        horizon=max(first.horizon, second.horizon),
    )
