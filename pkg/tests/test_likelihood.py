import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from gbmep import EventStore, ModelSpec, NodeParams, cif, compensator_node, loglik_node
from gbmep.errors import DomainError, InvariantError
from gbmep.fit import loglik_unconstrained, to_unconstrained
from gbmep.likelihood import NodeData, RecursionState, advance_recursion, init_recursion

from conftest import SIM_PARAMS, grid_sim, random_params
from oracles import direct_A, fd_gradient, naive_compensator, naive_loglik

VARIANTS = list(ModelSpec)
# finite differences of a sum of ~1e3 terms carry ~1e-7 absolute noise, so
# relative error is measured against max(|g|, GRAD_FLOOR)
GRAD_FLOOR = 1e-2


def test_first_state_is_zero_without_prior_neighbour_events():
    s = EventStore([0], [0], [1.0], [1.5], 1, 3.0)
    state = init_recursion(SIM_PARAMS, "SEP", 0, s)
    assert state.A.tolist() == [0.0]


def test_two_event_recursion_gives_exp_minus_one():
    s = EventStore([0, 0], [0, 0], [1.0, 2.0], [1.5, 2.5], 1, 3.0)
    p = NodeParams(0.1, 0.5, 1.0)
    state = advance_recursion(init_recursion(p, "SEP", 0, s), p, 2, s, "SEP")
    assert state.A[0] == pytest.approx(math.exp(-1), rel=1e-15)
    assert state.cursor.tolist() == [1]


def test_recursion_rejects_skipped_event():
    s = EventStore([0, 0, 0], [0, 0, 0], [1.0, 2.0, 3.0], [1.5, 2.5, 3.5], 1, 4.0)
    state = init_recursion(SIM_PARAMS, "SEP", 0, s)
    with pytest.raises(InvariantError):
        advance_recursion(state, SIM_PARAMS, 3, s, "SEP")


def test_recursion_matches_direct_sums_on_long_stream():
    reg, nbhd, store = grid_sim(side=2, horizon=250.0, seed=5)
    node = 0
    own = store.starts_of(node)
    assert len(own) >= 150
    p = SIM_PARAMS
    state = init_recursion(p, "GBMEP", node, store, nbhd)
    worst = 0.0
    cursors = [state.cursor.copy()]
    for k in range(1, len(own) + 1):
        if k > 1:
            state = advance_recursion(state, p, k, store, "GBMEP")
            assert (state.cursor >= cursors[-1]).all()
            cursors.append(state.cursor.copy())
        t = own[k - 1]
        for pos, j in enumerate(state.neighbors.tolist()):
            a = direct_A([t], store.starts_of(j), p.beta)[0]
            ap = direct_A([t], store.ends_of(j), p.beta_prime)[0]
            for got, want in ((state.A[pos], a), (state.A_prime[pos], ap)):
                if want > 0:
                    worst = max(worst, abs(got - want) / want)
                else:
                    assert got == 0.0
    assert worst < 1e-10


@pytest.mark.parametrize("spec", VARIANTS, ids=lambda s: s.value)
def test_loglik_matches_naive(spec, small_network):
    _, nbhd, store = small_network
    sub, _ = store.split_at(60.0)
    for node in range(sub.n_nodes):
        got = loglik_node(SIM_PARAMS, spec, node, sub, nbhd).loglik
        want = naive_loglik(SIM_PARAMS.neutralize(spec), spec, node, sub, nbhd)
        assert got == pytest.approx(want, rel=1e-10)


def test_poisson_closed_form():
    s = EventStore([0] * 5, [0] * 5, [1.0, 2.0, 3.0, 4.0, 5.0], [1.5, 2.5, 3.5, 4.5, 5.5], 1, 10.0)
    res = loglik_node(NodeParams(0.4), "Poisson", 0, s)
    assert res.loglik == pytest.approx(5 * math.log(0.4) - 4.0, rel=1e-15)


def test_no_own_events_gives_minus_compensator(small_network):
    _, nbhd, store = small_network
    # node 0 sends nothing in this copy but still receives excitation
    keep = store.sources != 0
    s = EventStore(store.sources[keep], store.destinations[keep], store.starts[keep], store.ends[keep],
                   store.n_nodes, store.horizon)
    res = loglik_node(SIM_PARAMS, "GBMEP", 0, s, nbhd)
    assert res.loglik == pytest.approx(-compensator_node(SIM_PARAMS, "GBMEP", 0, s.horizon, s, nbhd), rel=1e-12)
    assert len(res.increments) == 0


def test_increments_plus_tail_equal_compensator(small_network):
    _, nbhd, store = small_network
    for spec in VARIANTS:
        res = loglik_node(SIM_PARAMS, spec, 1, store, nbhd)
        assert res.increments.sum() + res.tail_increment == pytest.approx(res.compensator_at_T, rel=1e-12)
        direct = compensator_node(SIM_PARAMS, spec, 1, store.horizon, store, nbhd)
        assert res.compensator_at_T == pytest.approx(direct, rel=1e-12)


def test_domain_errors():
    s = EventStore([0], [0], [1.0], [2.0], 1, 3.0)
    with pytest.raises(DomainError):
        loglik_node(NodeParams(0.1, 1.0, 0.5), "SEP", 0, s)
    with pytest.raises(DomainError):
        loglik_node(NodeParams(-0.1), "Poisson", 0, s)


def test_compensator_basics(worked):
    store, nbhd, params = worked
    assert compensator_node(params[0], "GBMEP", 0, 0.0, store, nbhd) == 0.0
    assert compensator_node(NodeParams(0.3), "Poisson", 0, 7.0, store) == pytest.approx(2.1, rel=1e-15)


def test_compensator_matches_quadrature(worked):
    store, nbhd, params = worked
    br = sorted(set(store.starts.tolist() + store.ends.tolist()))
    f = lambda t: cif(params[0], "GBMEP", 0, t, store, nbhd)
    pts = [0.0] + [b for b in br if b < 5.0] + [5.0]
    total = sum(quad(f, a, b, epsabs=1e-14, epsrel=1e-13)[0] for a, b in zip(pts, pts[1:]))
    got = compensator_node(params[0], "GBMEP", 0, 5.0, store, nbhd)
    assert got == pytest.approx(total, rel=1e-6)
    assert got == pytest.approx(naive_compensator(params[0], "GBMEP", 0, 5.0, store, nbhd), rel=1e-13)


def test_compensator_derivative_is_intensity(small_network):
    _, nbhd, store = small_network
    ev = np.unique(np.concatenate([store.starts, store.ends]))
    rng = np.random.default_rng(1)
    for k in rng.choice(len(ev) - 1, 20, replace=False):
        a, b = ev[k], ev[k + 1]
        if b - a < 1e-3:
            continue
        t, h = 0.5 * (a + b), 1e-5 * (b - a)
        d = (compensator_node(SIM_PARAMS, "GBMEP", 2, t + h, store, nbhd)
             - compensator_node(SIM_PARAMS, "GBMEP", 2, t - h, store, nbhd)) / (2 * h)
        assert d == pytest.approx(cif(SIM_PARAMS, "GBMEP", 2, t, store, nbhd), rel=1e-5)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 400.0), min_size=2, max_size=30), st.integers(0, 3))
def test_compensator_non_decreasing(ts, node):
    _, nbhd, store = _net()
    ts = np.sort(ts)
    vals = compensator_node(SIM_PARAMS, "GBMEP", node, ts, store, nbhd)
    assert (np.diff(vals) >= -1e-9 * np.abs(vals[1:])).all()


def test_work_scales_linearly_in_events():
    ops = []
    sizes = []
    for horizon in (100.0, 200.0, 400.0, 800.0):
        _, nbhd, store = grid_sim(side=2, horizon=horizon, seed=2)
        res = loglik_node(SIM_PARAMS, "GBMEP", 0, store, nbhd)
        m = nbhd.size(0)
        n_nb = sum(len(store.starts_of(j)) + len(store.ends_of(j)) for j in nbhd.neighbors(0)[0])
        ops.append(res.ops)
        sizes.append(len(store.starts_of(0)) * m + n_nb)
    ratio = np.array(ops) / np.array(sizes)
    assert ratio.max() / ratio.min() < 1.5
    assert ratio.max() <= 4


@pytest.mark.parametrize("spec", VARIANTS, ids=lambda s: s.value)
def test_gradient_matches_finite_differences(spec, small_network):
    _, nbhd, store = small_network
    sub, _ = store.split_at(150.0)
    rng = np.random.default_rng(100 + VARIANTS.index(spec))
    for _ in range(5):
        p = random_params(rng, spec)
        data = NodeData(spec, int(rng.integers(4)), sub, nbhd)
        u = to_unconstrained(p, spec)
        _, g = loglik_unconstrained(u, data)
        fd = fd_gradient(lambda v: loglik_unconstrained(v, data, with_gradient=False), u)
        assert np.all(np.abs(g - fd) <= 1e-5 * np.maximum(np.abs(fd), GRAD_FLOOR))


_cache = {}


def _net():
    if "net" not in _cache:
        _cache["net"] = grid_sim()
    return _cache["net"]
