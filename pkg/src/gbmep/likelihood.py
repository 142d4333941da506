"""Recursive log-likelihood, compensator and analytic gradient for one node.

The per-neighbour sums

    A_j(k)  = sum_{s_j < t_k} exp(-beta  (t_k - s_j))
    A'_j(k) = sum_{e_j < t_k} exp(-beta' (t_k - e_j))

are advanced from one own event to the next by decaying the previous
value and adding only the neighbour events that arrived in between, so a
full evaluation costs O(N_i (M_i + 1) + neighbour events). Gradients use
companion recursions for dA/dbeta; spatial derivatives reuse A weighted
by distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from gbmep._kernels import component_pass
from gbmep.errors import DomainError, InvariantError, NumericalError
from gbmep.events import EventStore
from gbmep.geometry import NeighborhoodGraph
from gbmep.model import ModelSpec, NodeParams, effective_neighbors

LOG_FLOOR = 1e-300


@dataclass
class LogLikResult:
    loglik: float
    gradient: np.ndarray | None
    compensator_at_T: float
    increments: np.ndarray
    tail_increment: float
    n_floored: int = 0
    ops: int = 0
    names: tuple[str, ...] = field(default=())

    def grad_dict(self) -> dict[str, float]:
        if self.gradient is None:
            return {}
        return dict(zip(self.names, self.gradient.tolist()))


@dataclass(frozen=True)
class _Component:
    ptr: np.ndarray
    times: np.ndarray


class NodeData:
    """Pre-gathered event arrays for one node under one variant.

    Built once per node and reused across optimizer iterations.
    """

    def __init__(self, spec: ModelSpec, node: int, store: EventStore, nbhd: NeighborhoodGraph | None):
        self.spec = ModelSpec.parse(spec)
        self.node = int(node)
        self.own = np.ascontiguousarray(store.starts_of(node))
        idx, dist = effective_neighbors(self.spec, nbhd, node)
        self.neighbors = np.asarray(idx, dtype=np.int64)
        self.gammas = np.ascontiguousarray(dist, dtype=np.float64)
        self.horizon = store.horizon
        self.start = self._gather(store.starts_of) if self.spec.starts_excite else None
        self.end = self._gather(store.ends_of) if self.spec.ends_excite else None

    def _gather(self, getter) -> _Component:
        chunks = [getter(j) for j in self.neighbors.tolist()]
        ptr = np.zeros(len(chunks) + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(c) for c in chunks])
        times = np.concatenate(chunks) if chunks else np.zeros(0)
        return _Component(ptr, np.ascontiguousarray(times, dtype=np.float64))

    @property
    def n_events(self) -> int:
        return len(self.own)


def _run(comp: _Component | None, data: NodeData, beta: float, theta: float, horizon: float, need_grad: bool):
    weights = np.exp(-theta * data.gammas)
    out = component_pass(data.own, comp.ptr, comp.times, weights, data.gammas, beta, horizon, need_grad)
    if out[7] < 0:
        raise InvariantError(f"node {data.node}: own event times out of order at position {-out[7] - 1}")
    return out


def loglik_from_data(params: NodeParams, data: NodeData, horizon: float | None = None,
                     with_gradient: bool = False, check: bool = True) -> LogLikResult:
    spec = data.spec
    T = data.horizon if horizon is None else float(horizon)
    if check:
        params.validate(spec)
    p = params.neutralize(spec)
    own = data.own
    n = len(own)
    if n and own[-1] > T:
        raise ValueError(f"horizon {T} precedes the last event at {own[-1]}")

    x = np.full(n, p.lam)
    comp = p.lam * T
    incr = np.zeros(n)
    prev_t = np.concatenate(([0.0], own[:-1])) if n else own
    incr += p.lam * (own - prev_t)
    lam_at_last = p.lam * (own[-1] if n else 0.0)
    grads = {}
    ops = 0
    parts = []
    for active, alpha, beta, theta, cmp, suffix in (
        (spec.starts_excite, p.alpha, p.beta, p.theta, data.start, ""),
        (spec.ends_excite, p.alpha_prime, p.beta_prime, p.theta_prime, data.end, "_prime"),
    ):
        if not active:
            continue
        S, G, Dv, Nw, C, Cg, E, n_ops = _run(cmp, data, beta, theta, T, with_gradient)
        ops += n_ops
        x += alpha * S
        ratio = alpha / beta
        comp += ratio * C
        dN = np.diff(Nw, prepend=0.0)
        dS = np.diff(S, prepend=0.0)
        incr += ratio * (dN - dS)
        if n:
            lam_at_last += ratio * (Nw[-1] - S[-1])
        parts.append((alpha, beta, suffix, S, G, Dv, C, Cg, E))

    if not math.isfinite(comp) or not np.isfinite(x).all():
        raise NumericalError("non-finite intensity or compensator", node=data.node)
    floored = x < LOG_FLOOR
    n_floored = int(floored.sum())
    if n_floored:
        x = np.where(floored, LOG_FLOOR, x)
    ll = float(np.log(x).sum()) - comp
    if not math.isfinite(ll):
        raise NumericalError("non-finite log-likelihood", node=data.node)

    gradient = None
    if with_gradient:
        inv = 1.0 / x
        grads["lam"] = inv.sum() - T
        for alpha, beta, suffix, S, G, Dv, C, Cg, E in parts:
            grads["alpha" + suffix] = inv @ S - C / beta
            grads["beta" + suffix] = alpha * (inv @ Dv) + alpha * C / (beta * beta) - alpha * E / beta
            if spec.spatial:
                grads["theta" + suffix] = -alpha * (inv @ G) + alpha / beta * Cg
        gradient = np.array([grads[name] for name in spec.active])
        if not np.isfinite(gradient).all():
            raise NumericalError("non-finite gradient", node=data.node)

    return LogLikResult(
        loglik=ll,
        gradient=gradient,
        compensator_at_T=float(comp),
        increments=incr,
        tail_increment=float(comp - lam_at_last),
        n_floored=n_floored,
        ops=int(ops),
        names=spec.active,
    )


def loglik_node(
    params: NodeParams,
    spec: ModelSpec,
    node: int,
    store: EventStore,
    nbhd: NeighborhoodGraph | None = None,
    T: float | None = None,
    with_gradient: bool = False,
) -> LogLikResult:
    """Log-likelihood of ``node``'s start-time process on ``[0, T]``.

    ``T`` defaults to the store horizon. With ``with_gradient`` the
    result carries exact partial derivatives with respect to the active
    parameters of ``spec`` (natural scale, ordered as ``spec.active``).
    ``increments[k]`` is the compensator gained between the (k-1)-th and
    k-th own events; ``tail_increment`` covers the last event up to ``T``.
    """
    data = NodeData(ModelSpec.parse(spec), node, store, nbhd)
    return loglik_from_data(params, data, T, with_gradient)


def compensator_node(
    params: NodeParams,
    spec: ModelSpec,
    node: int,
    t,
    store: EventStore,
    nbhd: NeighborhoodGraph | None = None,
):
    """Integrated intensity Lambda_i(t), evaluated directly from the history.

    Each past event contributes ``(alpha / beta) * w * (1 - exp(-beta (t - s)))``.
    Accepts a scalar or an array of times.
    """
    spec = ModelSpec.parse(spec)
    params.validate(spec)
    p = params.neutralize(spec)
    ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if (ts < 0).any():
        raise ValueError("compensator is defined for t >= 0")
    idx, dist = effective_neighbors(spec, nbhd, node)
    out = p.lam * ts
    for active, alpha, beta, theta, getter in (
        (spec.starts_excite, p.alpha, p.beta, p.theta, store.starts_of),
        (spec.ends_excite, p.alpha_prime, p.beta_prime, p.theta_prime, store.ends_of),
    ):
        if not active:
            continue
        for j, d in zip(idx.tolist(), dist.tolist()):
            ev = getter(j)
            if not len(ev):
                continue
            lag = ts[:, None] - ev[None, :]
            contrib = np.where(lag > 0, -np.expm1(-beta * np.maximum(lag, 0.0)), 0.0).sum(axis=1)
            out = out + alpha / beta * math.exp(-theta * d) * contrib
    return float(out[0]) if np.ndim(t) == 0 else out


@dataclass
class RecursionState:
    """Per-neighbour sufficient statistics after own event ``k`` (1-based)."""

    node: int
    neighbors: np.ndarray
    k: int
    prev_time: float
    A: np.ndarray
    A_prime: np.ndarray
    cursor: np.ndarray
    cursor_prime: np.ndarray


def init_recursion(params: NodeParams, spec: ModelSpec, node: int, store: EventStore,
                   nbhd: NeighborhoodGraph | None = None) -> RecursionState:
    """State at the node's first own event, ``A_j(1)`` from the defining sums."""
    spec = ModelSpec.parse(spec)
    own = store.starts_of(node)
    if not len(own):
        raise ValueError(f"node {node} has no start events")
    idx, _ = effective_neighbors(spec, nbhd, node)
    m = len(idx)
    state = RecursionState(node, idx, 0, 0.0, np.zeros(m), np.zeros(m),
                           np.zeros(m, dtype=np.int64), np.zeros(m, dtype=np.int64))
    return advance_recursion(state, params, 1, store, spec)


def advance_recursion(state: RecursionState, params: NodeParams, k: int, store: EventStore,
                      spec: ModelSpec = ModelSpec.GBMEP) -> RecursionState:
    """Advance ``state`` from own event ``k - 1`` to own event ``k``.

    Pure-Python reference for the compiled kernel; exposes the cursors
    into each neighbour's start and end indices.
    """
    spec = ModelSpec.parse(spec)
    p = params.neutralize(spec)
    own = store.starts_of(state.node)
    if k != state.k + 1:
        raise InvariantError(f"state holds event {state.k}; cannot advance to {k}")
    t = float(own[k - 1])
    if t < state.prev_time:
        raise InvariantError(f"own event times out of order: {t} < {state.prev_time}")
    dt = t - state.prev_time
    A = state.A * math.exp(-p.beta * dt)
    Ap = state.A_prime * math.exp(-p.beta_prime * dt)
    cur = state.cursor.copy()
    curp = state.cursor_prime.copy()
    for pos, j in enumerate(state.neighbors.tolist()):
        starts = store.starts_of(j)
        hi = store.count_starts(j, t)
        A[pos] += np.exp(-p.beta * (t - starts[cur[pos]:hi])).sum()
        cur[pos] = hi
        ends = store.ends_of(j)
        hi = store.count_ends(j, t)
        Ap[pos] += np.exp(-p.beta_prime * (t - ends[curp[pos]:hi])).sum()
        curp[pos] = hi
    return RecursionState(state.node, state.neighbors, k, t, A, Ap, cur, curp)
