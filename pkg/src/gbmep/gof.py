"""Time-rescaling p-values and Kolmogorov-Smirnov scores.

Under the correct intensity the compensator increments between a node's
consecutive start events are unit exponentials, so ``exp(-increment)`` is
uniform on (0, 1).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from gbmep.events import EventStore, merge
from gbmep.fit import FitResult
from gbmep.geometry import NeighborhoodGraph
from gbmep.likelihood import NodeData, loglik_from_data
from gbmep.model import ModelSpec, NodeParams


def pvalues_node(
    params: NodeParams,
    spec: ModelSpec,
    node: int,
    store: EventStore,
    nbhd: NeighborhoodGraph | None = None,
    window: tuple[float, float] | None = None,
) -> np.ndarray:
    """Upper-tail p-values of ``node``'s start events with time in ``[lo, hi)``.

    The compensator is accumulated over the whole history of ``store``, so
    the first event of a window is measured from the node's previous start
    event (or 0), whether that event lies inside the window or not.
    """
    spec = ModelSpec.parse(spec)
    data = NodeData(spec, node, store, nbhd)
    res = loglik_from_data(params, data)
    p = np.exp(-res.increments)
    if window is not None:
        lo, hi = window
        own = data.own
        p = p[(own >= lo) & (own < hi)]
    return p


def ks_score(pvals) -> float | None:
    """sup_p |p - F_n(p)| against the uniform CDF; ``None`` for an empty sample."""
    x = np.sort(np.asarray(pvals, dtype=np.float64))
    n = len(x)
    if n == 0:
        return None
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - x), np.max(x - (i - 1) / n)))


def ks_critical(n: int, level: float = 0.01) -> float:
    """Asymptotic one-sample KS critical value ``c(level) / sqrt(n)``."""
    c = math.sqrt(-0.5 * math.log(level / 2.0))
    return c / math.sqrt(n)


@dataclass
class GofReport:
    variant: ModelSpec
    pvals_train: list[np.ndarray]
    pvals_test: list[np.ndarray]
    ks_train: list[float | None] = field(default_factory=list)
    ks_test: list[float | None] = field(default_factory=list)
    pooled_ks_train: float | None = None
    pooled_ks_test: float | None = None
    skipped: list[int] = field(default_factory=list)

    @property
    def n_train(self) -> list[int]:
        return [len(p) for p in self.pvals_train]

    @property
    def n_test(self) -> list[int]:
        return [len(p) for p in self.pvals_test]

    def pooled(self, split: str) -> np.ndarray:
        seqs = self.pvals_train if split == "train" else self.pvals_test
        return np.concatenate(seqs) if seqs else np.zeros(0)

    def node_rows(self) -> list[dict]:
        return [
            {"node": i, "n_train": a, "n_test": b, "ks_train": c, "ks_test": d}
            for i, (a, b, c, d) in enumerate(zip(self.n_train, self.n_test, self.ks_train, self.ks_test))
        ]

    def node_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "n_train", "n_test", "ks_train", "ks_test"])
        for r in self.node_rows():
            w.writerow([r["node"], r["n_train"], r["n_test"], _fmt(r["ks_train"]), _fmt(r["ks_test"])])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def qq_csv(self, split: str, path: str | Path | None = None) -> str:
        """Uniform Q-Q data: per-node curves plus the pooled curve (node ``all``)."""
        seqs = self.pvals_train if split == "train" else self.pvals_test
        buf = io.StringIO()
        buf.write("node,theoretical,empirical\n")
        for label, seq in [*((str(i), s) for i, s in enumerate(seqs)), ("all", self.pooled(split))]:
            x = np.sort(seq)
            n = len(x)
            theo = (np.arange(1, n + 1) - 0.5) / n if n else x
            for a, b in zip(theo.tolist(), x.tolist()):
                buf.write(f"{label},{a!r},{b!r}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _fmt(v):
    return "" if v is None else repr(float(v))


def evaluate(
    fit: FitResult,
    train: EventStore,
    test: EventStore | None = None,
    nbhd: NeighborhoodGraph | None = None,
    nodes: Sequence[int] | None = None,
) -> GofReport:
    """Train- and test-window p-values and KS scores for one fitted variant.

    Training p-values come from ``train`` (start times in ``[0, T*)``). Test
    p-values are events of the merged history with start time in
    ``[T*, T)``, conditioning on everything observed before them.
    """
    spec = fit.variant
    t_star = train.horizon
    full = merge(train, test) if test is not None else train
    by_node = {nf.node: nf for nf in fit.nodes}
    nodes = range(train.n_nodes) if nodes is None else nodes
    tr, te, skipped = [], [], []
    for i in nodes:
        nf = by_node.get(i)
        if nf is None or not all(math.isfinite(v) for v in nf.params.to_dict().values()):
            skipped.append(i)
            tr.append(np.zeros(0))
            te.append(np.zeros(0))
            continue
        tr.append(pvalues_node(nf.params, spec, i, train, nbhd, (0.0, t_star)))
        if test is not None:
            te.append(pvalues_node(nf.params, spec, i, full, nbhd, (t_star, full.horizon)))
        else:
            te.append(np.zeros(0))
    report = GofReport(spec, tr, te, skipped=skipped)
    report.ks_train = [ks_score(p) for p in tr]
    report.ks_test = [ks_score(p) for p in te]
    report.pooled_ks_train = ks_score(report.pooled("train"))
    report.pooled_ks_test = ks_score(report.pooled("test"))
    return report


def summary_table(reports: Sequence[GofReport]) -> dict:
    """Pooled KS scores laid out as rows train/test by model columns."""
    return {
        "models": [r.variant.value for r in reports],
        "train": {r.variant.value: r.pooled_ks_train for r in reports},
        "test": {r.variant.value: r.pooled_ks_test for r in reports},
        "median_node_ks": {
            r.variant.value: {
                "train": _median(r.ks_train),
                "test": _median(r.ks_test),
            }
            for r in reports
        },
    }


def _median(values):
    vals = [v for v in values if v is not None]
    return float(np.median(vals)) if vals else None


def write_summary(reports: Sequence[GofReport], path: str | Path) -> str:
    text = json.dumps(summary_table(reports), indent=1) + "\n"
    Path(path).write_text(text)
    return text


def boxplot_csv(reports: Sequence[GofReport], split: str, path: str | Path | None = None) -> str:
    """Per-node KS scores, one column per model."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", *[r.variant.value for r in reports]])
    n = max((len(r.ks_train) for r in reports), default=0)
    for i in range(n):
        row = [i]
        for r in reports:
            ks = r.ks_train if split == "train" else r.ks_test
            row.append(_fmt(ks[i]))
        w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def ks_differences(base: GofReport, other: GofReport, split: str = "test") -> list[float | None]:
    """Per-node ``KS(base) - KS(other)``; positive where ``other`` fits better."""
    a = base.ks_train if split == "train" else base.ks_test
    b = other.ks_train if split == "train" else other.ks_test
    return [None if x is None or y is None else x - y for x, y in zip(a, b)]
