"""Per-node maximum-likelihood estimation with L-BFGS.

Positivity and the stability constraint ``alpha < beta`` are enforced by
optimizing on an unconstrained scale:

    lam = e^u1, alpha = e^u2, beta = e^u2 + e^u3, theta = e^u4

(and likewise for the end-time component). The cascade initialization
fits SEP and MEP from a fixed starting point, feeds both into SMEP, and
SMEP into SpMEP and GBMEP.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize

from gbmep.errors import DomainError, NumericalError
from gbmep.events import EventStore
from gbmep.geometry import NeighborhoodGraph
from gbmep.likelihood import NodeData, loglik_from_data
from gbmep.model import INIT_ALPHA, INIT_BETA, INIT_LAMBDA, ModelSpec, NodeParams, restrict

log = logging.getLogger(__name__)

THETA_INIT = 1.0
# alpha an embedded (switched-off) component starts at; small enough that
# adding it changes no floating-point result
TINY = 1e-300
# unconstrained coordinates are clipped to keep exp() finite
_U_MAX = 700.0

CASCADE_ORDER = (
    ModelSpec.POISSON,
    ModelSpec.SEP,
    ModelSpec.MEP,
    ModelSpec.SMEP,
    ModelSpec.SPMEP,
    ModelSpec.GBMEP,
)
_DEPENDS = {
    ModelSpec.POISSON: (),
    ModelSpec.SEP: (),
    ModelSpec.MEP: (),
    ModelSpec.SMEP: (ModelSpec.SEP, ModelSpec.MEP),
    ModelSpec.SPMEP: (ModelSpec.SMEP, ModelSpec.SEP),
    ModelSpec.GBMEP: (ModelSpec.SMEP,),
}

OK_STATUSES = ("converged", "converged_ftol", "closed_form")


@dataclass
class FitConfig:
    variant: ModelSpec = ModelSpec.GBMEP
    max_iterations: int = 1000
    gradient_tolerance: float = 1e-6
    relative_tolerance: float = 1e-12
    initialization: object = "cascade"
    worker_count: int = 1
    min_events: int = 1

    def __post_init__(self):
        self.variant = ModelSpec.parse(self.variant)
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.gradient_tolerance > 0 and self.relative_tolerance > 0):
            raise ValueError("tolerances must be positive")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if isinstance(self.initialization, str) and self.initialization not in ("cascade", "default"):
            raise ValueError("initialization must be 'cascade', 'default', NodeParams or a per-node list")


@dataclass
class NodeFit:
    node: int
    params: NodeParams
    loglik: float
    init_loglik: float
    status: str
    iterations: int = 0
    grad_norm: float = 0.0
    n_events: int = 0
    start_index: int = 0

    @property
    def ok(self) -> bool:
        return self.status in OK_STATUSES

    def to_dict(self) -> dict:
        return {
            "node": self.node,
            "params": self.params.to_dict(),
            "loglik": self.loglik,
            "init_loglik": self.init_loglik,
            "status": self.status,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "n_events": self.n_events,
            "start_index": self.start_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> NodeFit:
        return cls(
            node=int(d["node"]),
            params=NodeParams.from_dict(d["params"]),
            loglik=float(d["loglik"]),
            init_loglik=float(d["init_loglik"]),
            status=str(d["status"]),
            iterations=int(d.get("iterations", 0)),
            grad_norm=float(d.get("grad_norm", 0.0)),
            n_events=int(d.get("n_events", 0)),
            start_index=int(d.get("start_index", 0)),
        )


@dataclass
class FitResult:
    variant: ModelSpec
    nodes: list[NodeFit]
    horizon: float
    meta: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def params(self) -> list[NodeParams]:
        return [nf.params for nf in self.nodes]

    @property
    def loglik(self) -> np.ndarray:
        return np.array([nf.loglik for nf in self.nodes])

    @property
    def total_loglik(self) -> float:
        return float(sum(nf.loglik for nf in self.nodes))

    def flagged(self) -> list[int]:
        return [nf.node for nf in self.nodes if not nf.ok]

    def to_json(self, path: str | Path | None = None) -> str:
        # elapsed time is deliberately left out so output files are reproducible
        doc = {
            "variant": self.variant.value,
            "horizon": self.horizon,
            "meta": self.meta,
            "total_loglik": self.total_loglik,
            "nodes": [nf.to_dict() for nf in self.nodes],
        }
        text = json.dumps(doc, indent=1) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, path_or_text) -> FitResult:
        text = str(path_or_text)
        if not text.lstrip().startswith("{"):
            text = Path(path_or_text).read_text()
        doc = json.loads(text)
        return cls(
            variant=ModelSpec.parse(doc["variant"]),
            nodes=[NodeFit.from_dict(d) for d in doc["nodes"]],
            horizon=float(doc["horizon"]),
            meta=doc.get("meta", {}),
        )


# -- reparametrization ----------------------------------------------------------


def to_unconstrained(params: NodeParams, spec: ModelSpec) -> np.ndarray:
    spec = ModelSpec.parse(spec)
    p = params.validate(spec)
    u = []
    for name in spec.active:
        if name == "beta":
            u.append(math.log(p.beta - p.alpha))
        elif name == "beta_prime":
            u.append(math.log(p.beta_prime - p.alpha_prime))
        else:
            u.append(math.log(getattr(p, name)))
    return np.array(u)


def from_unconstrained(u, spec: ModelSpec) -> NodeParams:
    spec = ModelSpec.parse(spec)
    u = np.clip(np.asarray(u, dtype=np.float64), -_U_MAX, _U_MAX)
    vals = dict(zip(spec.active, np.exp(u).tolist()))
    if "beta" in vals:
        vals["beta"] = vals["alpha"] + vals["beta"]
    if "beta_prime" in vals:
        vals["beta_prime"] = vals["alpha_prime"] + vals["beta_prime"]
    return NodeParams(**vals).neutralize(spec)


def unconstrained_gradient(params: NodeParams, spec: ModelSpec, grad) -> np.ndarray:
    """Chain rule from a natural-scale gradient (ordered as ``spec.active``)."""
    g = dict(zip(spec.active, np.asarray(grad, dtype=np.float64).tolist()))
    out = []
    for name in spec.active:
        if name == "lam":
            out.append(params.lam * g["lam"])
        elif name == "alpha":
            out.append(params.alpha * (g["alpha"] + g["beta"]))
        elif name == "beta":
            out.append((params.beta - params.alpha) * g["beta"])
        elif name == "alpha_prime":
            out.append(params.alpha_prime * (g["alpha_prime"] + g["beta_prime"]))
        elif name == "beta_prime":
            out.append((params.beta_prime - params.alpha_prime) * g["beta_prime"])
        else:
            out.append(getattr(params, name) * g[name])
    return np.array(out)


def loglik_unconstrained(u, data: NodeData, with_gradient: bool = True):
    """Log-likelihood and its gradient on the unconstrained scale."""
    params = from_unconstrained(u, data.spec)
    res = loglik_from_data(params, data, with_gradient=with_gradient)
    if not with_gradient:
        return res.loglik
    return res.loglik, unconstrained_gradient(params, data.spec, res.gradient)


def default_init(spec: ModelSpec) -> NodeParams:
    return NodeParams(
        lam=INIT_LAMBDA,
        alpha=INIT_ALPHA,
        beta=INIT_BETA,
        theta=THETA_INIT,
        alpha_prime=INIT_ALPHA,
        beta_prime=INIT_BETA,
        theta_prime=THETA_INIT,
    ).neutralize(ModelSpec.parse(spec))


# -- single node ------------------------------------------------------------------------


def _run_lbfgs(u0: np.ndarray, data: NodeData, config: FitConfig):
    def objective(u):
        try:
            # overflow while probing extreme steps surfaces as a rejected point below
            with np.errstate(over="ignore", invalid="ignore"):
                ll, g = loglik_unconstrained(u, data)
        except (DomainError, NumericalError, ArithmeticError):
            return 1e300, np.zeros_like(u)
        if not (np.isfinite(ll) and np.isfinite(g).all()):
            return 1e300, np.zeros_like(u)
        return -ll, -g

    res = minimize(
        objective,
        u0,
        jac=True,
        method="L-BFGS-B",
        options={
            "maxcor": 10,
            "maxiter": config.max_iterations,
            "gtol": config.gradient_tolerance,
            "ftol": config.relative_tolerance,
            "maxls": 50,
        },
    )
    return res


def fit_node(
    node: int,
    config: FitConfig,
    store: EventStore,
    nbhd: NeighborhoodGraph | None = None,
    starts: Sequence[NodeParams] | None = None,
) -> NodeFit:
    """Fit one node; with several ``starts`` the best final log-likelihood wins.

    Poisson has the closed form ``N / T``. Nodes with fewer than
    ``config.min_events`` events get ``lam = max(N, 1) / T`` with every
    other parameter at its start value and are flagged ``insufficient_data``.
    """
    spec = config.variant
    data = NodeData(spec, node, store, nbhd)
    n = data.n_events
    T = store.horizon
    if starts is None or len(starts) == 0:
        starts = [default_init(spec)]
    starts = [s.neutralize(spec) for s in starts]

    if spec is ModelSpec.POISSON or n < config.min_events:
        lam = max(n, 1) / T if T > 0 else 1.0
        params = replace(starts[0], lam=lam)
        status = "closed_form" if spec is ModelSpec.POISSON and n >= config.min_events else "insufficient_data"
        try:
            ll = loglik_from_data(params, data).loglik
        except (DomainError, NumericalError):
            ll = math.nan
            status = "numerical_error"
        return NodeFit(node, params, ll, ll, status, 0, 0.0, n)

    best = None
    for idx, start in enumerate(starts):
        try:
            u0 = to_unconstrained(start, spec)
            ll0, _ = loglik_unconstrained(u0, data)
        except (DomainError, NumericalError, ValueError) as exc:
            log.warning("node %d: start %d unusable: %s", node, idx, exc)
            continue
        res = _run_lbfgs(u0, data, config)
        params = from_unconstrained(res.x, spec)
        try:
            ll, g = loglik_unconstrained(res.x, data)
        except (DomainError, NumericalError):
            ll, g = -math.inf, np.full_like(u0, math.inf)
        if not ll >= ll0:
            # never return anything worse than where we started
            params, ll, g = from_unconstrained(u0, spec), ll0, loglik_unconstrained(u0, data)[1]
        grad_norm = float(np.max(np.abs(g))) if len(g) else 0.0
        if grad_norm < config.gradient_tolerance:
            status = "converged"
        elif res.nit >= config.max_iterations:
            status = "max_iterations"
        elif res.success:
            status = "converged_ftol"
        else:
            status = "not_converged"
        cand = NodeFit(node, params, ll, ll0, status, int(res.nit), grad_norm, n, idx)
        if best is None or cand.loglik > best.loglik:
            best = cand
    if best is None:
        params = starts[0]
        return NodeFit(node, params, math.nan, math.nan, "numerical_error", 0, math.nan, n)
    return best


# -- all nodes ------------------------------------------------------------------------------


def fit_all(
    config: FitConfig,
    store: EventStore,
    nbhd: NeighborhoodGraph | None = None,
    starts: Sequence[Sequence[NodeParams]] | None = None,
) -> FitResult:
    """Fit every node of ``store``; parallel over nodes, deterministic output.

    ``starts[i]`` lists the starting points for node ``i``. When omitted the
    configured initialization is used; ``"cascade"`` fits the nested
    variants first (see :func:`fit_cascade`).
    """
    spec = config.variant
    if starts is None:
        init = config.initialization
        if isinstance(init, str) and init == "cascade" and _DEPENDS[spec]:
            return fit_cascade(config, store, nbhd, [spec])[spec]
        starts = [_starts_from_init(init, spec, i) for i in range(store.n_nodes)]
    if len(starts) != store.n_nodes:
        raise ValueError("need one list of starting points per node")
    t0 = time.perf_counter()
    jobs = (delayed(fit_node)(i, config, store, nbhd, starts[i]) for i in range(store.n_nodes))
    if config.worker_count == 1:
        fits = [fit_node(i, config, store, nbhd, starts[i]) for i in range(store.n_nodes)]
    else:
        fits = Parallel(n_jobs=config.worker_count, prefer="threads")(jobs)
    elapsed = time.perf_counter() - t0
    result = FitResult(spec, list(fits), store.horizon, _meta(config, nbhd), elapsed)
    bad = result.flagged()
    if bad:
        log.info("%s: %d of %d nodes flagged", spec.value, len(bad), store.n_nodes)
    return result


def _meta(config: FitConfig, nbhd: NeighborhoodGraph | None) -> dict:
    meta = {
        "max_iterations": config.max_iterations,
        "gradient_tolerance": config.gradient_tolerance,
        "relative_tolerance": config.relative_tolerance,
        "min_events": config.min_events,
        "initialization": config.initialization if isinstance(config.initialization, str) else "explicit",
    }
    if nbhd is not None and config.variant.spatial:
        meta["epsilon"] = nbhd.epsilon
        meta["rho"] = nbhd.rho
    return meta


def _starts_from_init(init, spec: ModelSpec, node: int) -> list[NodeParams]:
    if isinstance(init, NodeParams):
        return [init]
    if isinstance(init, str):
        return [default_init(spec)]
    return [init[node]]


def _embed_theta(nbhd: NeighborhoodGraph | None, node: int) -> float:
    # large enough that exp(-theta * d) underflows to 0 for every d > 0
    if nbhd is None:
        return THETA_INIT
    d = nbhd.distances[node]
    d = d[d > 0]
    return 1000.0 / float(d.min()) if len(d) else THETA_INIT


def cascade_starts(
    spec: ModelSpec,
    node: int,
    fitted: dict[ModelSpec, FitResult],
    nbhd: NeighborhoodGraph | None,
) -> list[NodeParams]:
    """Starting points for ``spec`` at ``node`` built from nested fits.

    The first entry is the informative start. Later entries embed a nested
    optimum exactly (a switched-off component at ``TINY`` or spatial decay so
    large that only the node itself contributes), which guarantees the
    richer model cannot end below the nested one on training data.
    """
    spec = ModelSpec.parse(spec)
    if spec in (ModelSpec.POISSON, ModelSpec.SEP, ModelSpec.MEP):
        return [default_init(spec)]
    if spec is ModelSpec.SMEP:
        sep = fitted[ModelSpec.SEP].nodes[node].params
        mep = fitted[ModelSpec.MEP].nodes[node].params
        combined = NodeParams(lam=sep.lam, alpha=sep.alpha, beta=sep.beta,
                              alpha_prime=mep.alpha_prime, beta_prime=mep.beta_prime)
        only_sep = replace(sep, alpha_prime=TINY, beta_prime=1.0)
        only_mep = replace(mep, alpha=TINY, beta=1.0)
        return [combined, only_sep, only_mep]

    big = _embed_theta(nbhd, node)
    smep = fitted[ModelSpec.SMEP].nodes[node].params
    if spec is ModelSpec.SPMEP:
        out = [replace(restrict(smep, ModelSpec.SMEP, spec), theta=THETA_INIT),
               replace(restrict(smep, ModelSpec.SMEP, spec), theta=big)]
        if ModelSpec.SEP in fitted:
            out.append(replace(fitted[ModelSpec.SEP].nodes[node].params, theta=big))
        return out
    # GBMEP
    base = restrict(smep, ModelSpec.SMEP, spec)
    out = [replace(base, theta=THETA_INIT, theta_prime=THETA_INIT),
           replace(base, theta=big, theta_prime=big)]
    if ModelSpec.SPMEP in fitted:
        sp = fitted[ModelSpec.SPMEP].nodes[node].params
        out.append(replace(base, lam=sp.lam, alpha=sp.alpha, beta=sp.beta, theta=sp.theta,
                           theta_prime=THETA_INIT))
    return out


def fit_cascade(
    config: FitConfig,
    store: EventStore,
    nbhd: NeighborhoodGraph | None = None,
    variants: Sequence[ModelSpec] | None = None,
) -> dict[ModelSpec, FitResult]:
    """Fit ``variants`` plus every variant they are initialised from.

    Order: Poisson, SEP, MEP, SMEP, SpMEP, GBMEP. Returns every variant fitted.
    """
    wanted = set(ModelSpec.parse(v) for v in (variants or CASCADE_ORDER))
    frontier = list(wanted)
    while frontier:
        for dep in _DEPENDS[frontier.pop()]:
            if dep not in wanted:
                wanted.add(dep)
                frontier.append(dep)
    # SpMEP and SEP only feed the optional extra starts; they are fitted
    # when requested, but SpMEP is not forced in by GBMEP
    out: dict[ModelSpec, FitResult] = {}
    for spec in CASCADE_ORDER:
        if spec not in wanted:
            continue
        cfg = replace(config, variant=spec)
        starts = [cascade_starts(spec, i, out, nbhd) for i in range(store.n_nodes)]
        out[spec] = fit_all(cfg, store, nbhd, starts)
        out[spec].meta["initialization"] = "cascade"
        log.info("%s fitted: total loglik %.6f (%.2fs)", spec.value, out[spec].total_loglik,
                 out[spec].elapsed)
    return out
