import math

import numpy as np
import pytest

from gbmep import (
    EventRecord,
    EventStore,
    ModelSpec,
    NeighborhoodGraph,
    NodeParams,
    SimConfig,
    build_neighborhoods,
    make_grid_network,
    simulate,
)

# Worked three-node example: records (source, destination, start, end), 0-based nodes.
WORKED_RECORDS = [(0, 1, 1.25, 2.75), (0, 2, 4.0, 4.5), (1, 1, 2.35, 8.0)]
WORKED_DIST = np.array([[0.0, 0.5, 0.75], [0.5, 0.0, 0.25], [0.75, 0.25, 0.0]])
WORKED_PARAMS = [
    NodeParams(lam=0.2, alpha=0.8, beta=1.0, theta=1.0, alpha_prime=0.5, beta_prime=1.0, theta_prime=1.5),
    NodeParams(lam=0.3, alpha=0.6, beta=1.0, theta=1.0, alpha_prime=0.5, beta_prime=1.0, theta_prime=1.5),
    NodeParams(lam=0.15, alpha=0.6, beta=1.0, theta=1.0, alpha_prime=0.3, beta_prime=1.0, theta_prime=1.5),
]

SIM_PARAMS = NodeParams(0.3, 0.3, 1.5, 2.0, 0.2, 1.2, 3.0)


@pytest.fixture
def worked():
    store = EventStore.from_records([EventRecord(*r) for r in WORKED_RECORDS], n_nodes=3, horizon=10.0)
    nbhd = NeighborhoodGraph.from_distance_matrix(WORKED_DIST, epsilon=math.inf)
    return store, nbhd, WORKED_PARAMS


def grid_sim(side=2, horizon=400.0, seed=0, params=SIM_PARAMS, epsilon=0.5, spacing=0.3, variant=ModelSpec.GBMEP):
    reg = make_grid_network(side, spacing)
    nbhd = build_neighborhoods(reg, epsilon, min(3, len(reg)))
    cfg = SimConfig(reg, nbhd, [params] * len(reg), horizon, variant, seed=seed)
    return reg, nbhd, simulate(cfg)


@pytest.fixture(scope="session")
def small_network():
    """2x2 grid, ~2000 journeys from a stable GBMEP."""
    return grid_sim()


def random_params(rng, spec):
    """A valid parameter point with moderate magnitudes."""
    lam = rng.uniform(0.05, 1.0)
    alpha = rng.uniform(0.05, 1.0)
    beta = alpha + rng.uniform(0.1, 2.0)
    ap = rng.uniform(0.05, 1.0)
    bp = ap + rng.uniform(0.1, 2.0)
    return NodeParams(lam, alpha, beta, rng.uniform(0.1, 5.0), ap, bp, rng.uniform(0.1, 5.0)).neutralize(spec)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
