import math

import numpy as np
import pytest
from scipy import stats

from gbmep import (
    NodeParams,
    SimConfig,
    build_neighborhoods,
    haversine,
    make_grid_network,
    simulate,
)
from gbmep.errors import DomainError, SimulationError
from gbmep.simulate import LONDON_CENTER, RNG_ALGORITHM, expected_events, manifest

from conftest import SIM_PARAMS


def single(params, horizon, variant, seed=0, **kw):
    reg = make_grid_network(1, 0.3)
    nbhd = build_neighborhoods(reg, 0.5, 1)
    return SimConfig(reg, nbhd, [params], horizon, variant, seed=seed, **kw)


def test_poisson_counts_and_interarrivals():
    reg = make_grid_network(2, 0.3)
    nbhd = build_neighborhoods(reg, 0.5, 3)
    lam, T = 0.8, 2000.0
    store = simulate(SimConfig(reg, nbhd, [NodeParams(lam)] * 4, T, "Poisson", seed=7))
    for node in range(4):
        # journeys still running at T are not recorded; count the starts that were
        n = len(store.starts_of(node))
        assert abs(n - lam * T) < 3 * math.sqrt(lam * T) + 5
        gaps = np.diff(store.starts_of(node))
        assert stats.kstest(gaps, "expon", args=(0, 1 / lam)).pvalue > 0.01


def test_sep_mean_count_matches_branching_ratio():
    counts = [len(simulate(single(NodeParams(0.2, 0.5, 1.0), 2000.0, "SEP", seed=s))) for s in range(50)]
    assert np.mean(counts) == pytest.approx(800, rel=0.05)


def test_same_seed_same_store():
    cfg = single(NodeParams(0.2, 0.5, 1.0), 300.0, "SEP", seed=5)
    a, b = simulate(cfg), simulate(cfg)
    assert a == b and a.to_csv() == b.to_csv()
    assert simulate(single(NodeParams(0.2, 0.5, 1.0), 300.0, "SEP", seed=6)) != a


def test_records_lie_in_window_and_have_positive_duration():
    reg = make_grid_network(2, 0.3)
    nbhd = build_neighborhoods(reg, 0.5, 3)
    store = simulate(SimConfig(reg, nbhd, [SIM_PARAMS] * 4, 200.0, seed=1))
    assert (store.ends <= 200.0).all() and (store.ends > store.starts).all()


def test_destination_weights_route_journeys():
    reg = make_grid_network(2, 0.3)
    nbhd = build_neighborhoods(reg, 0.5, 3)
    cfg = SimConfig(reg, nbhd, [SIM_PARAMS] * 4, 100.0, destination_weights=[0, 1, 0, 0], seed=2)
    assert set(simulate(cfg).destinations.tolist()) == {1}


def test_fixed_durations():
    cfg = single(NodeParams(0.5), 100.0, "Poisson", duration={"dist": "fixed", "value": 0.25})
    s = simulate(cfg)
    assert np.allclose(s.ends - s.starts, 0.25)


def test_unstable_parameters_hit_the_cap():
    reg = make_grid_network(3, 0.3)
    nbhd = build_neighborhoods(reg, 0.5, 3)
    p = NodeParams(0.3, 0.9, 1.0, 0.0, 0.9, 1.0, 0.0)
    cfg = SimConfig(reg, nbhd, [p] * 9, 100.0)
    assert math.isinf(expected_events(cfg))
    with pytest.raises(SimulationError):
        simulate(cfg)


def test_small_cap_is_enforced():
    with pytest.raises(SimulationError):
        simulate(single(NodeParams(0.5), 1000.0, "Poisson", max_events=50))


def test_alpha_at_least_beta_rejected():
    with pytest.raises(DomainError):
        single(NodeParams(0.2, 1.0, 0.5), 100.0, "SEP")


def test_manifest_records_seed_and_hash():
    cfg = single(NodeParams(0.2, 0.5, 1.0), 100.0, "SEP", seed=9)
    m = manifest(cfg, simulate(cfg))
    assert m["seed"] == 9 and m["rng"] == RNG_ALGORITHM
    assert m["config_hash"] == single(NodeParams(0.2, 0.5, 1.0), 100.0, "SEP", seed=9).config_hash()
    assert m["config_hash"] != single(NodeParams(0.2, 0.5, 1.0), 100.0, "SEP", seed=10).config_hash()


def test_grid_single_station_at_center():
    reg = make_grid_network(1, 0.3)
    assert len(reg) == 1
    assert (reg.lat[0], reg.lon[0]) == LONDON_CENTER


def test_grid_spacing():
    reg = make_grid_network(2, 0.3)
    c = reg.coords()
    for a, b in ((0, 1), (0, 2), (1, 3), (2, 3)):
        assert haversine(c[a], c[b]) == pytest.approx(0.3, rel=0.01)


def test_grid_corner_neighbourhoods():
    reg = make_grid_network(3, 0.3)
    g = build_neighborhoods(reg, 0.35, 1)
    for corner in (0, 2, 6, 8):
        assert g.size(corner) == 3
    assert g.size(4) == 5
