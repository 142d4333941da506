import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gbmep import (
    EventStore,
    FitConfig,
    ModelSpec,
    NodeParams,
    SimConfig,
    StationRegistry,
    build_neighborhoods,
    compensator_node,
    evaluate,
    fit_all,
    fit_cascade,
    ks_score,
    make_grid_network,
    merge,
    pvalues_node,
    simulate,
)
from gbmep.fit import FitResult, NodeFit
from gbmep.gof import boxplot_csv, ks_critical, ks_differences, summary_table

from conftest import SIM_PARAMS, grid_sim
from oracles import ks_brute


def test_poisson_gap_of_log_two():
    t = math.log(2)
    s = EventStore([0, 0], [0, 0], [t, 2 * t], [t + 1, 2 * t + 1], 1, 5.0)
    p = pvalues_node(NodeParams(1.0), "Poisson", 0, s)
    assert p == pytest.approx([0.5, 0.5], rel=1e-15)


def test_first_event_uses_compensator_from_zero(small_network):
    _, nbhd, store = small_network
    p = pvalues_node(SIM_PARAMS, "GBMEP", 3, store, nbhd)
    t1 = store.starts_of(3)[0]
    assert p[0] == pytest.approx(math.exp(-compensator_node(SIM_PARAMS, "GBMEP", 3, t1, store, nbhd)), rel=1e-13)


def test_reduced_formula_matches_compensator_differences(small_network):
    _, nbhd, store = small_network
    for node in range(3):
        own = store.starts_of(node)
        lam = compensator_node(SIM_PARAMS, "GBMEP", node, own, store, nbhd)
        direct = np.exp(-np.diff(lam, prepend=0.0))
        p = pvalues_node(SIM_PARAMS, "GBMEP", node, store, nbhd)
        assert np.max(np.abs(p - direct)) < 1e-10
        assert ((p > 0) & (p <= 1)).all()


def test_ks_examples():
    assert ks_score([0.5]) == 0.5
    assert ks_score([0.25, 0.5, 0.75]) == pytest.approx(0.25, abs=1e-15)
    n = 100
    grid = (2 * np.arange(1, n + 1) - 1) / (2 * n)
    assert ks_score(grid) == pytest.approx(0.005, abs=1e-15)
    assert ks_brute(grid) == pytest.approx(0.005, abs=1e-15)
    assert ks_score([]) is None


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40))
def test_ks_matches_brute_force(p):
    k = ks_score(p)
    assert k == pytest.approx(ks_brute(p), abs=1e-15)
    assert 0 <= k <= 1


def test_ks_critical_value():
    assert ks_critical(1) == pytest.approx(1.6276, abs=1e-4)


def _poisson_network(seed, lam=0.5, horizon=400.0):
    reg = make_grid_network(2, 0.3)
    nbhd = build_neighborhoods(reg, 0.5, 3)
    store = simulate(SimConfig(reg, nbhd, [NodeParams(lam)] * 4, horizon, "Poisson", seed=seed))
    return reg, nbhd, store


def test_poisson_fit_passes_ks():
    _, nbhd, store = _poisson_network(3)
    fit = fit_all(FitConfig("Poisson"), store, nbhd)
    rep = evaluate(fit, store, None, nbhd)
    n = len(rep.pooled("train"))
    assert rep.pooled_ks_train < ks_critical(n)


def test_wrong_rate_fails_ks():
    _, nbhd, store = _poisson_network(3)
    fit = fit_all(FitConfig("Poisson"), store, nbhd)
    for nf in fit.nodes:
        nf.params = NodeParams(nf.params.lam * 10)
    rep = evaluate(fit, store, None, nbhd)
    assert rep.pooled_ks_train > 0.5


def test_gbmep_fit_on_five_node_network():
    reg = make_grid_network(3, 0.3).subset([0, 1, 2, 3, 4])
    nbhd = build_neighborhoods(reg, 0.5, 3)
    store = simulate(SimConfig(reg, nbhd, [SIM_PARAMS] * 5, 700.0, "GBMEP", seed=21))
    assert 8000 <= len(store) <= 14000
    fit = fit_cascade(FitConfig("GBMEP"), store, nbhd)[ModelSpec.GBMEP]
    rep = evaluate(fit, store, None, nbhd)
    assert rep.pooled_ks_train < 0.05


def test_true_parameters_pass_uniformity_in_most_replicates():
    passed = total = 0
    for seed in range(100):
        _, nbhd, store = grid_sim(side=2, horizon=80.0, seed=1000 + seed)
        for node in range(4):
            p = pvalues_node(SIM_PARAMS, "GBMEP", node, store, nbhd)
            if len(p) < 10:
                continue
            total += 1
            passed += ks_score(p) < ks_critical(len(p))
    assert total >= 350
    assert passed / total >= 0.95


def _fit_with(params, n):
    return FitResult(ModelSpec.GBMEP, [NodeFit(i, params, 0.0, 0.0, "converged") for i in range(n)], 0.0)


def test_evaluate_test_window_conditions_on_full_history(small_network):
    _, nbhd, store = small_network
    train, test = store.split_at(250.0)
    rep = evaluate(_fit_with(SIM_PARAMS, 4), train, test, nbhd)
    full = merge(train, test)
    for node in range(4):
        own = full.starts_of(node)
        lam = compensator_node(SIM_PARAMS, "GBMEP", node, own, full, nbhd)
        inc = np.exp(-np.diff(lam, prepend=0.0))
        want = inc[own >= 250.0]
        assert np.allclose(rep.pvals_test[node], want, rtol=0, atol=1e-10)
        assert len(rep.pvals_train[node]) == len(train.starts_of(node))
    assert len(rep.pooled("test")) == sum(rep.n_test)


def test_pooled_ks_independent_of_station_order(small_network):
    _, nbhd, store = small_network
    rep = evaluate(_fit_with(SIM_PARAMS, 4), store, None, nbhd)
    order = [3, 1, 0, 2]
    shuffled = np.concatenate([rep.pvals_train[i] for i in order])
    assert ks_score(shuffled) == rep.pooled_ks_train


def test_missing_node_is_skipped(small_network):
    _, nbhd, store = small_network
    fit = _fit_with(SIM_PARAMS, 4)
    fit.nodes = fit.nodes[:3]
    rep = evaluate(fit, store, None, nbhd)
    assert rep.skipped == [3] and rep.ks_train[3] is None


def test_report_exports(small_network):
    _, nbhd, store = small_network
    train, test = store.split_at(250.0)
    a = evaluate(_fit_with(SIM_PARAMS, 4), train, test, nbhd)
    b = evaluate(FitResult(ModelSpec.SMEP, [NodeFit(i, SIM_PARAMS, 0, 0, "converged") for i in range(4)], 0.0),
                 train, test, nbhd)
    rows = a.node_csv().splitlines()
    assert rows[0] == "node,n_train,n_test,ks_train,ks_test" and len(rows) == 5
    qq = a.qq_csv("test").splitlines()
    assert qq[0] == "node,theoretical,empirical"
    assert sum(1 for r in qq if r.startswith("all,")) == len(a.pooled("test"))
    summary = summary_table([b, a])
    assert summary["models"] == ["SMEP", "GBMEP"]
    assert set(summary["train"]) == set(summary["test"]) == {"SMEP", "GBMEP"}
    box = boxplot_csv([b, a], "test").splitlines()
    assert box[0] == "node,SMEP,GBMEP" and len(box) == 5
    diff = ks_differences(b, a)
    assert diff[0] == pytest.approx(b.ks_test[0] - a.ks_test[0])
