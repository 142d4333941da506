"""Model variants and direct evaluation of the conditional intensity.

Every variant is a restriction of the full graph-based model

    lambda_i(t) = lam + sum_{j in nbhd(i)} exp(-theta * d_ij) * alpha * sum_{s_j < t} exp(-beta (t - s_j))
                      + exp(-theta' * d_ij) * alpha' * sum_{e_j < t} exp(-beta' (t - e_j))

where ``s_j`` are start times at node j and ``e_j`` end times. Non-spatial
variants use the self-only neighbourhood. :func:`cif` is a deliberately
naive O(history) evaluator and serves as the oracle for the recursive
likelihood engine.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from gbmep.errors import DomainError
from gbmep.events import EventStore
from gbmep.geometry import NeighborhoodGraph

PARAM_NAMES = ("lam", "alpha", "beta", "theta", "alpha_prime", "beta_prime", "theta_prime")
JSON_NAMES = {
    "lam": "lambda",
    "alpha": "alpha",
    "beta": "beta",
    "theta": "theta",
    "alpha_prime": "alpha_prime",
    "beta_prime": "beta_prime",
    "theta_prime": "theta_prime",
}

# initialisation used for the SEP / MEP fits and for newly activated components
INIT_LAMBDA = math.exp(-4)
INIT_ALPHA = math.exp(-4)
INIT_BETA = 2 * math.exp(-4)


class ModelSpec(str, enum.Enum):
    POISSON = "Poisson"
    MEP = "MEP"
    SEP = "SEP"
    SMEP = "SMEP"
    SPMEP = "SpMEP"
    GBMEP = "GBMEP"

    @classmethod
    def parse(cls, value) -> ModelSpec:
        if isinstance(value, ModelSpec):
            return value
        key = str(value).replace("-", "").replace("_", "").lower()
        for spec in cls:
            if spec.value.lower() == key:
                return spec
        raise ValueError(f"unknown model variant {value!r}; choose from {[s.value for s in cls]}")

    @property
    def starts_excite(self) -> bool:
        return self in (ModelSpec.SEP, ModelSpec.SMEP, ModelSpec.SPMEP, ModelSpec.GBMEP)

    @property
    def ends_excite(self) -> bool:
        return self in (ModelSpec.MEP, ModelSpec.SMEP, ModelSpec.GBMEP)

    @property
    def spatial(self) -> bool:
        return self in (ModelSpec.SPMEP, ModelSpec.GBMEP)

    @property
    def active(self) -> tuple[str, ...]:
        names = ["lam"]
        if self.starts_excite:
            names += ["alpha", "beta"]
            if self.spatial:
                names.append("theta")
        if self.ends_excite:
            names += ["alpha_prime", "beta_prime"]
            if self.spatial:
                names.append("theta_prime")
        return tuple(names)

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class NodeParams:
    """Parameters of one node's intensity.

    Inactive components are neutral: ``alpha = 0`` removes an excitation
    term and ``theta = 0`` removes spatial decay.
    """

    lam: float
    alpha: float = 0.0
    beta: float = 1.0
    theta: float = 0.0
    alpha_prime: float = 0.0
    beta_prime: float = 1.0
    theta_prime: float = 0.0

    def validate(self, spec: ModelSpec) -> NodeParams:
        spec = ModelSpec.parse(spec)
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise DomainError(f"baseline rate must be positive, got {self.lam}")
        if spec.starts_excite:
            _check_pair(self.alpha, self.beta, "alpha", "beta")
            if spec.spatial and not self.theta >= 0:
                raise DomainError(f"theta must be >= 0, got {self.theta}")
        if spec.ends_excite:
            _check_pair(self.alpha_prime, self.beta_prime, "alpha_prime", "beta_prime")
            if spec.spatial and not self.theta_prime >= 0:
                raise DomainError(f"theta_prime must be >= 0, got {self.theta_prime}")
        return self

    def neutralize(self, spec: ModelSpec) -> NodeParams:
        """Set every parameter outside ``spec``'s active set to its neutral value."""
        spec = ModelSpec.parse(spec)
        changes = {}
        if not spec.starts_excite:
            changes.update(alpha=0.0, beta=1.0)
        if not (spec.starts_excite and spec.spatial):
            changes["theta"] = 0.0
        if not spec.ends_excite:
            changes.update(alpha_prime=0.0, beta_prime=1.0)
        if not (spec.ends_excite and spec.spatial):
            changes["theta_prime"] = 0.0
        return replace(self, **changes)

    def to_dict(self, spec: ModelSpec | None = None) -> dict:
        out = {JSON_NAMES[k]: float(v) for k, v in asdict(self).items()}
        if spec is not None:
            out = {"variant": ModelSpec.parse(spec).value, **out}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> NodeParams:
        inverse = {v: k for k, v in JSON_NAMES.items()}
        kwargs = {inverse[k]: float(v) for k, v in d.items() if k in inverse}
        if "lam" not in kwargs:
            raise ValueError("parameter document lacks 'lambda'")
        return cls(**kwargs)


def _check_pair(alpha, beta, a_name, b_name):
    # alpha = 0 is the neutral value that switches a component off
    if not (math.isfinite(alpha) and alpha >= 0):
        raise DomainError(f"{a_name} must be non-negative, got {alpha}")
    if not (math.isfinite(beta) and alpha < beta):
        raise DomainError(f"{a_name} < {b_name} required, got {alpha} >= {beta}")


def effective_neighbors(spec: ModelSpec, nbhd: NeighborhoodGraph | None, node: int):
    """Neighbour indices and distances that excite ``node`` under ``spec``."""
    if spec.spatial:
        if nbhd is None:
            raise ValueError(f"{spec.value} requires a neighbourhood graph")
        return nbhd.neighbors(node)
    return np.array([node], dtype=np.int64), np.zeros(1)


def _excitation(times: np.ndarray, t: float, decay: float, inclusive: bool) -> float:
    past = times[times <= t] if inclusive else times[times < t]
    return float(np.exp(-decay * (t - past)).sum())


def cif(
    params: NodeParams,
    spec: ModelSpec,
    node: int,
    t: float,
    store: EventStore,
    nbhd: NeighborhoodGraph | None = None,
    inclusive: bool = False,
) -> float:
    """Intensity of ``node`` at time ``t`` by direct summation over the history.

    Only events strictly before ``t`` contribute (left limit); with
    ``inclusive=True`` events at ``t`` are added, giving the right limit.
    """
    spec = ModelSpec.parse(spec)
    p = params.neutralize(spec)
    idx, dist = effective_neighbors(spec, nbhd, node)
    total = p.lam
    for j, d in zip(idx.tolist(), dist.tolist()):
        if spec.starts_excite:
            total += math.exp(-p.theta * d) * p.alpha * _excitation(store.starts_of(j), t, p.beta, inclusive)
        if spec.ends_excite:
            total += math.exp(-p.theta_prime * d) * p.alpha_prime * _excitation(
                store.ends_of(j), t, p.beta_prime, inclusive
            )
    return total


def intensity_path(
    params: NodeParams,
    spec: ModelSpec,
    node: int,
    times,
    store: EventStore,
    nbhd: NeighborhoodGraph | None = None,
) -> np.ndarray:
    """Left-limit intensity of ``node`` on an ascending grid of ``times``.

    A single sweep over the merged event stream with exponentially decayed
    running sums; O(len(times) + events in the neighbourhood).
    """
    spec = ModelSpec.parse(spec)
    p = params.neutralize(spec)
    times = np.asarray(times, dtype=np.float64)
    if np.any(np.diff(times) < 0):
        raise ValueError("times must be ascending")
    idx, dist = effective_neighbors(spec, nbhd, node)
    out = np.full(len(times), p.lam)
    for active, alpha, beta, theta, getter in (
        (spec.starts_excite, p.alpha, p.beta, p.theta, store.starts_of),
        (spec.ends_excite, p.alpha_prime, p.beta_prime, p.theta_prime, store.ends_of),
    ):
        if not active:
            continue
        ev = np.concatenate([getter(j) for j in idx.tolist()])
        w = np.concatenate([np.full(len(getter(j)), math.exp(-theta * d)) for j, d in zip(idx.tolist(), dist.tolist())])
        order = np.argsort(ev, kind="stable")
        ev, w = ev[order], w[order]
        acc = 0.0
        last = 0.0
        cur = 0
        n_ev = len(ev)
        for g, t in enumerate(times.tolist()):
            while cur < n_ev and ev[cur] < t:
                acc = acc * math.exp(-beta * (ev[cur] - last)) + w[cur]
                last = ev[cur]
                cur += 1
            out[g] += alpha * acc * math.exp(-beta * (t - last))
    return out


def restrict(params: NodeParams, spec_from: ModelSpec, spec_to: ModelSpec) -> NodeParams:
    """Move parameters between nested variants.

    Shared active parameters are copied. Newly activated excitation
    components start at the default initialisation; newly activated
    spatial decays start at 0. Deactivated parameters become neutral.
    """
    spec_from = ModelSpec.parse(spec_from)
    spec_to = ModelSpec.parse(spec_to)
    src = params.neutralize(spec_from)
    out = {"lam": src.lam}
    if spec_to.starts_excite:
        if spec_from.starts_excite:
            out.update(alpha=src.alpha, beta=src.beta)
        else:
            out.update(alpha=INIT_ALPHA, beta=INIT_BETA)
        out["theta"] = src.theta if spec_from.spatial and spec_from.starts_excite else 0.0
    if spec_to.ends_excite:
        if spec_from.ends_excite:
            out.update(alpha_prime=src.alpha_prime, beta_prime=src.beta_prime)
        else:
            out.update(alpha_prime=INIT_ALPHA, beta_prime=INIT_BETA)
        out["theta_prime"] = src.theta_prime if spec_from.spatial and spec_from.ends_excite else 0.0
    return NodeParams(**out).neutralize(spec_to)
