"""Station coordinates, haversine distances and truncated neighbourhoods."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from gbmep.errors import RegistryError, SchemaError

# Earth radius at the latitude of London, no altitude.
EARTH_RADIUS_KM = 6365.079


def _check_coords(lat, lon):
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    if not (np.isfinite(lat).all() and np.isfinite(lon).all()):
        raise ValueError("coordinates must be finite")
    if (np.abs(lat) > 90).any():
        raise ValueError("latitude must lie in [-90, 90]")
    if (np.abs(lon) > 180).any():
        raise ValueError("longitude must lie in [-180, 180]")
    return lat, lon


def haversine(a, b, rho: float = EARTH_RADIUS_KM):
    """Great-circle distance in km between ``a`` and ``b`` given as (lat, lon) in degrees.

    Broadcasts over array inputs of shape ``(..., 2)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lat_a, lon_a = _check_coords(a[..., 0], a[..., 1])
    lat_b, lon_b = _check_coords(b[..., 0], b[..., 1])
    out = _haversine_rad(np.radians(lat_a), np.radians(lon_a), np.radians(lat_b), np.radians(lon_b), rho)
    return float(out) if np.ndim(out) == 0 else out


def _haversine_rad(phi_a, l_a, phi_b, l_b, rho):
    h = np.sin((phi_b - phi_a) / 2.0) ** 2 + np.cos(phi_a) * np.cos(phi_b) * np.sin((l_b - l_a) / 2.0) ** 2
    return 2.0 * rho * np.arcsin(np.sqrt(np.minimum(h, 1.0)))


@dataclass
class StationRegistry:
    """Stations with dense indices ``0..M-1`` in the order given."""

    ids: list[str]
    lat: np.ndarray
    lon: np.ndarray
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.ids = [str(i) for i in self.ids]
        self.lat, self.lon = _check_coords(self.lat, self.lon)
        self.lat = self.lat.reshape(-1)
        self.lon = self.lon.reshape(-1)
        if not (len(self.ids) == len(self.lat) == len(self.lon)):
            raise ValueError("ids, lat and lon must have equal length")
        if not self.names:
            self.names = [""] * len(self.ids)
        if len(self.names) != len(self.ids):
            raise ValueError("names must match ids in length")
        self._index = {}
        for k, sid in enumerate(self.ids):
            if sid in self._index:
                raise ValueError(f"duplicate station id {sid!r}")
            self._index[sid] = k

    def __len__(self) -> int:
        return len(self.ids)

    def index_of(self, station_id) -> int:
        try:
            return self._index[str(station_id)]
        except KeyError:
            raise RegistryError(f"unknown station id {station_id!r}") from None

    def __contains__(self, station_id) -> bool:
        return str(station_id) in self._index

    def coords(self) -> np.ndarray:
        return np.column_stack([self.lat, self.lon])

    def subset(self, indices: Sequence[int]) -> StationRegistry:
        indices = list(indices)
        return StationRegistry(
            [self.ids[k] for k in indices],
            self.lat[indices],
            self.lon[indices],
            [self.names[k] for k in indices],
        )

    def distances_from(self, i: int, rho: float = EARTH_RADIUS_KM) -> np.ndarray:
        """Haversine distances from station ``i`` to every station."""
        phi = np.radians(self.lat)
        lam = np.radians(self.lon)
        return _haversine_rad(phi[i], lam[i], phi, lam, rho)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "name", "lat", "lon"])
        for sid, name, la, lo in zip(self.ids, self.names, self.lat.tolist(), self.lon.tolist()):
            w.writerow([sid, name, repr(la), repr(lo)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path, id_col="id", name_col="name", lat_col="lat", lon_col="lon") -> StationRegistry:
        with open(path, newline="", encoding="utf-8-sig") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for col in (id_col, lat_col, lon_col):
                if col not in header:
                    raise SchemaError(f"stations file {path} is missing column {col!r}", column=col)
            ids, names, lat, lon = [], [], [], []
            for lineno, row in enumerate(reader, start=2):
                try:
                    lat.append(float(row[lat_col]))
                    lon.append(float(row[lon_col]))
                except (TypeError, ValueError) as exc:
                    raise SchemaError(f"{path}:{lineno}: bad coordinate") from exc
                ids.append(row[id_col].strip())
                names.append((row.get(name_col) or "") if name_col in header else "")
        return cls(ids, np.array(lat), np.array(lon), names)


@dataclass(frozen=True)
class NeighborhoodGraph:
    """Per-node neighbour lists ``(indices, distances_km)`` sorted by distance.

    ``radius[i]`` is the effective radius used for node ``i``; it exceeds
    ``epsilon`` only where the minimum-neighbour fallback kicked in.
    """

    indices: tuple[np.ndarray, ...]
    distances: tuple[np.ndarray, ...]
    radius: np.ndarray
    epsilon: float
    rho: float = EARTH_RADIUS_KM

    def __len__(self) -> int:
        return len(self.indices)

    def neighbors(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= i < len(self.indices):
            raise RegistryError(f"unknown node {i}")
        return self.indices[i], self.distances[i]

    def size(self, i: int) -> int:
        return len(self.indices[i])

    @classmethod
    def self_only(cls, n_nodes: int) -> NeighborhoodGraph:
        idx = tuple(np.array([i], dtype=np.int64) for i in range(n_nodes))
        dist = tuple(np.zeros(1) for _ in range(n_nodes))
        return cls(idx, dist, np.zeros(n_nodes), 0.0)

    @classmethod
    def from_distance_matrix(cls, dist, epsilon: float = math.inf, min_neighbors: int = 1) -> NeighborhoodGraph:
        """Build from an explicit symmetric distance matrix (pluggable dissimilarity)."""
        dist = np.asarray(dist, dtype=np.float64)
        if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
            raise ValueError("distance matrix must be square")
        return _build(lambda i: dist[i], dist.shape[0], epsilon, min_neighbors, math.nan)

    def to_lines(self, path: str | Path | None = None) -> str:
        """Export as ``i,j,distance_km`` lines."""
        buf = io.StringIO()
        buf.write("i,j,distance_km\n")
        for i, (idx, d) in enumerate(zip(self.indices, self.distances)):
            for j, dj in zip(idx.tolist(), d.tolist()):
                buf.write(f"{i},{j},{dj!r}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _build(row, m, epsilon, min_neighbors, rho):
    if m < 1:
        raise ValueError("need at least one node")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if min_neighbors < 1:
        raise ValueError("min_neighbors must be >= 1")
    if min_neighbors > m:
        raise ValueError(f"min_neighbors={min_neighbors} exceeds the number of nodes {m}")
    all_idx = np.arange(m)
    indices, distances = [], []
    radius = np.empty(m)
    for i in range(m):
        d = np.asarray(row(i), dtype=np.float64)
        order = np.lexsort((all_idx, d))
        d_sorted = d[order]
        eps_i = float(epsilon)
        if np.count_nonzero(d_sorted <= eps_i) < min_neighbors:
            eps_i = float(d_sorted[min_neighbors - 1])
        keep = order[d_sorted <= eps_i]
        idx = keep.astype(np.int64)
        dist = d[keep]
        idx.setflags(write=False)
        dist.setflags(write=False)
        indices.append(idx)
        distances.append(dist)
        radius[i] = eps_i
    radius.setflags(write=False)
    return NeighborhoodGraph(tuple(indices), tuple(distances), radius, float(epsilon), rho)


def build_neighborhoods(
    reg: StationRegistry,
    epsilon: float = 0.5,
    min_neighbors: int = 3,
    rho: float = EARTH_RADIUS_KM,
) -> NeighborhoodGraph:
    """All stations within ``epsilon`` km of each station, self included.

    Where fewer than ``min_neighbors`` stations qualify, the node's radius is
    raised to its ``min_neighbors``-th smallest distance.
    """
    return _build(lambda i: reg.distances_from(i, rho), len(reg), epsilon, min_neighbors, rho)
