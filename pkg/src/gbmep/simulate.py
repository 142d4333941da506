"""Exact simulation of graph-based mutually exciting networks by thinning.

Start events are generated by Ogata-style thinning of the total network
intensity. Every accepted start draws a journey duration and a
destination; the resulting end time is queued and, once reached, excites
the nodes around the destination.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from gbmep.errors import DomainError, InvariantError, SimulationError
from gbmep.events import EventStore
from gbmep.geometry import EARTH_RADIUS_KM, NeighborhoodGraph, StationRegistry
from gbmep.model import ModelSpec, NodeParams, effective_neighbors

RNG_ALGORITHM = "numpy.random.PCG64 via SeedSequence(seed).spawn(3)"
LONDON_CENTER = (51.5074, -0.1278)


@dataclass
class SimConfig:
    registry: StationRegistry
    nbhd: NeighborhoodGraph | None
    params: list[NodeParams]
    horizon: float
    variant: ModelSpec = ModelSpec.GBMEP
    duration: dict = field(default_factory=lambda: {"dist": "lognormal", "mu": -1.0, "sigma": 0.5})
    destination_weights: list[float] | None = None
    seed: int = 0
    max_events: int = 1_000_000

    def __post_init__(self):
        self.variant = ModelSpec.parse(self.variant)
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if len(self.params) != len(self.registry):
            raise ValueError("need one NodeParams per station")
        for i, p in enumerate(self.params):
            try:
                p.validate(self.variant)
            except DomainError as exc:
                raise DomainError(f"node {i}: {exc}") from None
        if self.destination_weights is not None:
            w = np.asarray(self.destination_weights, dtype=np.float64)
            if len(w) != len(self.registry) or (w < 0).any() or w.sum() <= 0:
                raise ValueError("destination_weights must be non-negative, one per station, not all zero")
        dist = self.duration.get("dist", "lognormal")
        if dist not in ("lognormal", "exponential", "fixed"):
            raise ValueError(f"unknown duration distribution {dist!r}")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "horizon": self.horizon,
            "seed": self.seed,
            "max_events": self.max_events,
            "duration": self.duration,
            "destination_weights": self.destination_weights,
            "stations": [[sid, la, lo] for sid, la, lo in zip(self.registry.ids, self.registry.lat.tolist(),
                                                              self.registry.lon.tolist())],
            "epsilon": None if self.nbhd is None else self.nbhd.epsilon,
            "params": [p.neutralize(self.variant).to_dict() for p in self.params],
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _destination_probs(config: SimConfig) -> np.ndarray:
    m = len(config.registry)
    if config.destination_weights is None:
        return np.full(m, 1.0 / m)
    w = np.asarray(config.destination_weights, dtype=np.float64)
    return w / w.sum()


def _reverse_jumps(config: SimConfig):
    """For each source node j, the nodes it excites and the jump sizes."""
    spec = config.variant
    m = len(config.registry)
    start_t = [[] for _ in range(m)]
    start_j = [[] for _ in range(m)]
    end_t = [[] for _ in range(m)]
    end_j = [[] for _ in range(m)]
    for i, p in enumerate(config.params):
        p = p.neutralize(spec)
        idx, dist = effective_neighbors(spec, config.nbhd, i)
        for j, d in zip(idx.tolist(), dist.tolist()):
            if spec.starts_excite:
                start_t[j].append(i)
                start_j[j].append(math.exp(-p.theta * d) * p.alpha)
            if spec.ends_excite:
                end_t[j].append(i)
                end_j[j].append(math.exp(-p.theta_prime * d) * p.alpha_prime)
    pack = lambda a, dt: [np.array(x, dtype=dt) for x in a]
    return pack(start_t, np.int64), pack(start_j, float), pack(end_t, np.int64), pack(end_j, float)


def branching_matrix(config: SimConfig) -> np.ndarray:
    """Expected direct offspring: entry (i, j) counts starts at i caused by one start at j."""
    spec = config.variant
    m = len(config.registry)
    q = _destination_probs(config)
    K = np.zeros((m, m))
    end_gain = np.zeros((m, m))  # (i, d): expected starts at i from one end at d
    for i, p in enumerate(config.params):
        p = p.neutralize(spec)
        idx, dist = effective_neighbors(spec, config.nbhd, i)
        for j, d in zip(idx.tolist(), dist.tolist()):
            if spec.starts_excite:
                K[i, j] += math.exp(-p.theta * d) * p.alpha / p.beta
            if spec.ends_excite:
                end_gain[i, j] += math.exp(-p.theta_prime * d) * p.alpha_prime / p.beta_prime
    K += (end_gain @ q)[:, None]
    return K


def expected_events(config: SimConfig) -> float:
    """Stationary-rate approximation of the expected number of start events."""
    K = branching_matrix(config)
    radius = max(abs(np.linalg.eigvals(K))) if K.size else 0.0
    if radius >= 1:
        return math.inf
    lam = np.array([p.lam for p in config.params])
    rate = np.linalg.solve(np.eye(len(lam)) - K, lam)
    return float(rate.sum() * config.horizon)


def _durations(rng: np.random.Generator, spec: dict, size: int | None = None):
    dist = spec.get("dist", "lognormal")
    if dist == "lognormal":
        return rng.lognormal(spec.get("mu", -1.0), spec.get("sigma", 0.5), size)
    if dist == "exponential":
        return rng.exponential(spec.get("mean", 0.5), size)
    return float(spec["value"]) if size is None else np.full(size, float(spec["value"]))


def simulate(config: SimConfig) -> EventStore:
    """Draw one realisation on ``[0, horizon]``; deterministic given ``config.seed``.

    Journeys whose end time falls beyond the horizon are not recorded,
    although their start excited the network while it was observed.
    """
    expected = expected_events(config)
    if expected > config.max_events:
        raise SimulationError(
            f"expected ~{expected:.3g} events exceeds the cap of {config.max_events} "
            "(branching ratio too close to or above 1)"
        )
    spec = config.variant
    m = len(config.registry)
    params = [p.neutralize(spec) for p in config.params]
    lam = np.array([p.lam for p in params])
    beta = np.array([p.beta for p in params])
    beta_p = np.array([p.beta_prime for p in params])
    tgt_s, jump_s, tgt_e, jump_e = _reverse_jumps(config)
    q_cum = np.cumsum(_destination_probs(config))

    arrivals, durations, destinations = (np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(3))

    ex_s = np.zeros(m)
    ex_e = np.zeros(m)
    t = 0.0
    T = config.horizon
    pending: list[tuple[float, int, int]] = []  # (end time, sequence, destination)
    out_src, out_dst, out_start, out_end = [], [], [], []
    seq = 0

    def advance(dt):
        if dt > 0:
            ex_s[:] *= np.exp(-beta * dt)
            ex_e[:] *= np.exp(-beta_p * dt)

    while True:
        node_rates = lam + ex_s + ex_e
        bound = float(node_rates.sum())
        cand = t + arrivals.exponential(1.0 / bound)
        if pending and pending[0][0] <= cand:
            # the end time raises the intensity: move there and propose afresh
            e_time, _, dest = heapq.heappop(pending)
            if e_time > T:
                break
            advance(e_time - t)
            t = e_time
            ex_e[tgt_e[dest]] += jump_e[dest]
            continue
        if cand > T:
            break
        advance(cand - t)
        t = cand
        node_rates = lam + ex_s + ex_e
        total = float(node_rates.sum())
        if total > bound * (1 + 1e-12):
            raise InvariantError(f"thinning bound exceeded at t={t}: {total} > {bound}")
        if arrivals.random() * bound > total:
            continue
        u = arrivals.random() * total
        node = int(np.searchsorted(np.cumsum(node_rates), u, side="right"))
        node = min(node, m - 1)
        dur = float(_durations(durations, config.duration))
        dest = int(np.searchsorted(q_cum, destinations.random() * q_cum[-1], side="right"))
        dest = min(dest, m - 1)
        end = t + dur
        out_src.append(node)
        out_dst.append(dest)
        out_start.append(t)
        out_end.append(end)
        if len(out_src) > config.max_events:
            raise SimulationError(f"event cap of {config.max_events} reached at t={t:.6g}")
        heapq.heappush(pending, (end, seq, dest))
        seq += 1
        ex_s[tgt_s[node]] += jump_s[node]

    src = np.array(out_src, dtype=np.int64)
    dst = np.array(out_dst, dtype=np.int64)
    st = np.array(out_start)
    en = np.array(out_end)
    keep = en <= T
    return EventStore(src[keep], dst[keep], st[keep], en[keep], n_nodes=m, horizon=T)


def manifest(config: SimConfig, store: EventStore | None = None) -> dict:
    out = {
        "seed": config.seed,
        "rng": RNG_ALGORITHM,
        "config_hash": config.config_hash(),
        "variant": config.variant.value,
        "horizon": config.horizon,
        "n_nodes": len(config.registry),
    }
    if store is not None:
        out["n_records"] = len(store)
    return out


def make_grid_network(
    side: int,
    spacing_km: float,
    center: tuple[float, float] = LONDON_CENTER,
    rho: float = EARTH_RADIUS_KM,
) -> StationRegistry:
    """``side x side`` stations on a lat/lon grid with roughly ``spacing_km`` between neighbours."""
    if side < 1:
        raise ValueError("side must be >= 1")
    lat0, lon0 = center
    dlat = math.degrees(spacing_km / rho)
    dlon = math.degrees(spacing_km / (rho * math.cos(math.radians(lat0))))
    offsets = (np.arange(side) - (side - 1) / 2.0)
    lat, lon, ids = [], [], []
    for r, a in enumerate(offsets):
        for c, b in enumerate(offsets):
            lat.append(lat0 + a * dlat)
            lon.append(lon0 + b * dlon)
            ids.append(f"G{r:02d}{c:02d}")
    return StationRegistry(ids, np.array(lat), np.array(lon))
