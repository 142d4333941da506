"""Graph-based mutually exciting point processes for node-level event streams."""

from gbmep.errors import (
    DomainError,
    GbmepError,
    IngestError,
    InvariantError,
    NumericalError,
    RegistryError,
    SchemaError,
    SimulationError,
)
from gbmep.events import EventRecord, EventStore, merge
from gbmep.geometry import (
    EARTH_RADIUS_KM,
    NeighborhoodGraph,
    StationRegistry,
    build_neighborhoods,
    haversine,
)
from gbmep.model import ModelSpec, NodeParams, cif, intensity_path, restrict
from gbmep.likelihood import LogLikResult, compensator_node, loglik_node
from gbmep.fit import FitConfig, FitResult, fit_all, fit_cascade, fit_node
from gbmep.gof import GofReport, evaluate, ks_score, pvalues_node
from gbmep.simulate import SimConfig, make_grid_network, simulate

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "EARTH_RADIUS_KM",
    "EventRecord",
    "EventStore",
    "FitConfig",
    "FitResult",
    "GbmepError",
    "GofReport",
    "IngestError",
    "InvariantError",
    "LogLikResult",
    "ModelSpec",
    "NeighborhoodGraph",
    "NodeParams",
    "NumericalError",
    "RegistryError",
    "SchemaError",
    "SimConfig",
    "SimulationError",
    "StationRegistry",
    "build_neighborhoods",
    "cif",
    "compensator_node",
    "evaluate",
    "fit_all",
    "fit_cascade",
    "fit_node",
    "haversine",
    "intensity_path",
    "ks_score",
    "loglik_node",
    "make_grid_network",
    "merge",
    "pvalues_node",
    "restrict",
    "simulate",
]
