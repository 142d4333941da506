"""Command-line entry point: ingest, simulate, fit, evaluate, report.

Every subcommand takes ``--config FILE`` (JSON) plus flag overrides and
writes the fully resolved configuration next to its outputs as
``config.resolved.json``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from pathlib import Path

from gbmep.errors import GbmepError
from gbmep.events import EventStore
from gbmep.fit import CASCADE_ORDER, FitConfig, FitResult, fit_all, fit_cascade
from gbmep.geometry import EARTH_RADIUS_KM, StationRegistry, build_neighborhoods
from gbmep.gof import boxplot_csv, evaluate, ks_differences, summary_table
from gbmep.ingest import ColumnMap, StationColumns, ingest, summarize
from gbmep.model import ModelSpec, NodeParams
from gbmep.simulate import SimConfig, make_grid_network, manifest, simulate

log = logging.getLogger("gbmep")

NEIGHBORHOOD_DEFAULTS = {"epsilon": 0.5, "min_neighbors": 3, "rho": EARTH_RADIUS_KM}

DEFAULTS = {
    "ingest": {
        "journeys": [],
        "stations": None,
        "columns": {},
        "station_columns": {},
        "window": {"start": "2022-03-02", "split": "2022-06-22", "end": "2022-10-10"},
        "out_dir": "data",
    },
    "simulate": {
        "out_dir": "data",
        "seed": 0,
        "variant": "GBMEP",
        "horizon": 500.0,
        "t_star": None,
        "network": {"grid_side": 3, "spacing_km": 0.3, "center": [51.5074, -0.1278]},
        **NEIGHBORHOOD_DEFAULTS,
        "params": {"lambda": 0.2, "alpha": 0.2, "beta": 1.5, "theta": 3.0,
                   "alpha_prime": 0.15, "beta_prime": 1.2, "theta_prime": 3.0},
        "duration": {"dist": "lognormal", "mu": -1.0, "sigma": 0.5},
        "destination_weights": None,
        "max_events": 1_000_000,
    },
    "fit": {
        "data_dir": "data",
        "out_dir": "fits",
        "variants": [s.value for s in CASCADE_ORDER],
        **NEIGHBORHOOD_DEFAULTS,
        "max_iterations": 1000,
        "gradient_tolerance": 1e-6,
        "relative_tolerance": 1e-12,
        "initialization": "cascade",
        "min_events": 1,
        "workers": 1,
    },
    "evaluate": {
        "data_dir": "data",
        "fit_dir": "fits",
        "out_dir": "evaluation",
        "variants": None,
    },
    "report": {
        "data_dir": "data",
        "out_dir": None,
    },
}


class CliError(Exception):
    pass


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(command: str, config_path: str | None, overrides: dict) -> dict:
    cfg = DEFAULTS[command]
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {config_path}: {exc}") from exc
        cfg = _merge(cfg, doc.get(command, doc))
    return _merge(cfg, {k: v for k, v in overrides.items() if v is not None})


def _echo(cfg: dict, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")


def _load_store(path: Path) -> EventStore:
    if not path.exists():
        raise CliError(f"missing event store {path}")
    try:
        return EventStore.from_csv(path)
    except (GbmepError, ValueError) as exc:
        raise CliError(f"corrupt event store {path}: {exc}") from exc


def _load_registry(path: Path) -> StationRegistry:
    if not path.exists():
        raise CliError(f"missing stations file {path}")
    return StationRegistry.from_csv(path)


# -- subcommands ----------------------------------------------------------------


def cmd_ingest(cfg: dict) -> int:
    if not cfg["journeys"] or not cfg["stations"]:
        raise CliError("ingest needs 'journeys' (list of CSV files) and 'stations'")
    w = cfg["window"]
    files = []
    for entry in cfg["journeys"]:
        # a plain path uses the shared column map; {"path", "columns"} overrides it
        if isinstance(entry, dict):
            files.append((entry["path"], ColumnMap(**{**cfg["columns"], **entry.get("columns", {})})))
        else:
            files.append(entry)
    train, test, reg, report = ingest(
        files,
        cfg["stations"],
        ColumnMap(**cfg["columns"]),
        (w["start"], w["split"], w["end"]),
        StationColumns(**cfg["station_columns"]),
    )
    out = Path(cfg["out_dir"])
    _echo(cfg, out)
    train.to_csv(out / "train.csv")
    test.to_csv(out / "test.csv")
    reg.to_csv(out / "stations.csv")
    report.to_json(out / "ingest_report.json")
    print(f"accepted {report.rows_accepted} of {report.rows_read} rows: "
          f"{report.n_train} train, {report.n_test} test, {report.n_stations} stations")
    return 0


def _sim_registry(cfg: dict) -> StationRegistry:
    net = cfg["network"]
    if net.get("stations"):
        return _load_registry(Path(net["stations"]))
    return make_grid_network(int(net["grid_side"]), float(net["spacing_km"]), tuple(net["center"]), cfg["rho"])


def cmd_simulate(cfg: dict) -> int:
    reg = _sim_registry(cfg)
    spec = ModelSpec.parse(cfg["variant"])
    nbhd = build_neighborhoods(reg, cfg["epsilon"], min(cfg["min_neighbors"], len(reg)), cfg["rho"])
    raw = cfg["params"]
    per_node = raw if isinstance(raw, list) else [raw] * len(reg)
    params = [NodeParams.from_dict(d) for d in per_node]
    sim = SimConfig(reg, nbhd, params, float(cfg["horizon"]), spec, cfg["duration"],
                    cfg["destination_weights"], int(cfg["seed"]), int(cfg["max_events"]))
    store = simulate(sim)
    out = Path(cfg["out_dir"])
    _echo(cfg, out)
    store.to_csv(out / "events.csv")
    reg.to_csv(out / "stations.csv")
    man = manifest(sim, store)
    if cfg.get("t_star"):
        train, test = store.split_at(float(cfg["t_star"]))
        train.to_csv(out / "train.csv")
        test.to_csv(out / "test.csv")
        man.update(t_star=float(cfg["t_star"]), n_train=len(train), n_test=len(test))
    (out / "manifest.json").write_text(json.dumps(man, indent=1, sort_keys=True) + "\n")
    print(f"simulated {len(store)} journeys on {len(reg)} stations")
    return 0


def cmd_fit(cfg: dict) -> int:
    data = Path(cfg["data_dir"])
    train = _load_store(data / "train.csv")
    reg = _load_registry(data / "stations.csv")
    if len(reg) != train.n_nodes:
        raise CliError(f"stations file has {len(reg)} stations but the store has {train.n_nodes} nodes")
    nbhd = build_neighborhoods(reg, cfg["epsilon"], cfg["min_neighbors"], cfg["rho"])
    variants = [ModelSpec.parse(v) for v in cfg["variants"]]
    base = FitConfig(
        variant=variants[0],
        max_iterations=int(cfg["max_iterations"]),
        gradient_tolerance=float(cfg["gradient_tolerance"]),
        relative_tolerance=float(cfg["relative_tolerance"]),
        initialization=cfg["initialization"],
        worker_count=int(cfg["workers"]),
        min_events=int(cfg["min_events"]),
    )
    if base.initialization == "cascade":
        results = fit_cascade(base, train, nbhd, variants)
    else:
        results = {}
        for v in variants:
            results[v] = fit_all(FitConfig(**{**base.__dict__, "variant": v}), train, nbhd)
    out = Path(cfg["out_dir"])
    _echo(cfg, out)
    nbhd.to_lines(out / "neighborhoods.csv")
    for v in variants:
        res = results[v]
        res.meta.update(epsilon=cfg["epsilon"], min_neighbors=cfg["min_neighbors"], rho=cfg["rho"])
        res.to_json(out / f"fit_{v.value}.json")
        flagged = res.flagged()
        print(f"{v.value}: total loglik {res.total_loglik:.6f}, {len(flagged)} flagged nodes")
    return 0


def cmd_evaluate(cfg: dict) -> int:
    data = Path(cfg["data_dir"])
    fit_dir = Path(cfg["fit_dir"])
    train = _load_store(data / "train.csv")
    test = _load_store(data / "test.csv")
    reg = _load_registry(data / "stations.csv")
    if cfg["variants"]:
        variants = [ModelSpec.parse(v) for v in cfg["variants"]]
    else:
        variants = [s for s in CASCADE_ORDER if (fit_dir / f"fit_{s.value}.json").exists()]
        if not variants:
            raise CliError(f"no fit files found in {fit_dir}")
    reports = []
    for v in variants:
        path = fit_dir / f"fit_{v.value}.json"
        if not path.exists():
            raise CliError(f"missing fit file for model {v.value}: {path}")
        res = FitResult.from_json(path)
        meta = {**NEIGHBORHOOD_DEFAULTS, **{k: res.meta[k] for k in NEIGHBORHOOD_DEFAULTS if k in res.meta}}
        nbhd = build_neighborhoods(reg, meta["epsilon"], meta["min_neighbors"], meta["rho"])
        reports.append(evaluate(res, train, test, nbhd))
    out = Path(cfg["out_dir"])
    _echo(cfg, out)
    summary = summary_table(reports)
    by = {r.variant: r for r in reports}
    if ModelSpec.SMEP in by and ModelSpec.GBMEP in by:
        diff = ks_differences(by[ModelSpec.SMEP], by[ModelSpec.GBMEP], "test")
        valid = [d for d in diff if d is not None]
        summary["gbmep_beats_smep_test_fraction"] = (sum(d > 0 for d in valid) / len(valid)) if valid else None
        with open(out / "ks_difference_test.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", "id", "lat", "lon", "ks_smep", "ks_gbmep", "difference"])
            for i, d in enumerate(diff):
                w.writerow([i, reg.ids[i], repr(float(reg.lat[i])), repr(float(reg.lon[i])),
                            _fmt(by[ModelSpec.SMEP].ks_test[i]), _fmt(by[ModelSpec.GBMEP].ks_test[i]), _fmt(d)])
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    for r in reports:
        r.node_csv(out / f"ks_nodes_{r.variant.value}.csv")
        for split in ("train", "test"):
            r.qq_csv(split, out / f"qq_{r.variant.value}_{split}.csv")
    for split in ("train", "test"):
        boxplot_csv(reports, split, out / f"boxplot_{split}.csv")
    _print_table(summary)
    return 0


def _fmt(v):
    return "" if v is None else repr(float(v))


def _print_table(summary: dict):
    models = summary["models"]
    print("split  " + "  ".join(f"{m:>8}" for m in models))
    for split in ("train", "test"):
        cells = [summary[split][m] for m in models]
        print(f"{split:<6} " + "  ".join("    n/a " if c is None else f"{c:8.4f}" for c in cells))


def cmd_report(cfg: dict) -> int:
    data = Path(cfg["data_dir"])
    reg = _load_registry(data / "stations.csv") if (data / "stations.csv").exists() else None
    doc = {}
    for name in ("train", "test", "events"):
        path = data / f"{name}.csv"
        if path.exists():
            doc[name] = summarize(_load_store(path), reg)
    if not doc:
        raise CliError(f"no event stores found in {data}")
    for name, s in doc.items():
        print(f"{name}: {s['n_records']} journeys, {s['n_nodes']} stations, horizon {s['horizon']:.4f} h")
    if cfg.get("out_dir"):
        out = Path(cfg["out_dir"])
        _echo(cfg, out)
        (out / "report.json").write_text(json.dumps(doc, indent=1) + "\n")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gbmep", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out-dir", dest="out_dir")
        if name in ("fit", "evaluate", "report"):
            p.add_argument("--data-dir", dest="data_dir")
        if name == "evaluate":
            p.add_argument("--fit-dir", dest="fit_dir")
        if name in ("fit", "evaluate"):
            p.add_argument("--variants", nargs="+")
        if name in ("fit", "simulate"):
            p.add_argument("--epsilon", type=float)
            p.add_argument("--min-neighbors", dest="min_neighbors", type=int)
        if name == "fit":
            p.add_argument("--workers", type=int)
            p.add_argument("--max-iterations", dest="max_iterations", type=int)
            p.add_argument("--gradient-tolerance", dest="gradient_tolerance", type=float)
            p.add_argument("--initialization", choices=["cascade", "default"])
        if name == "simulate":
            p.add_argument("--seed", type=int)
            p.add_argument("--horizon", type=float)
            p.add_argument("--t-star", dest="t_star", type=float)
            p.add_argument("--variant")
        if name == "ingest":
            p.add_argument("--journeys", nargs="+")
            p.add_argument("--stations")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = resolve_config(args.command, args.config, overrides)
        return COMMANDS[args.command](cfg)
    except (CliError, GbmepError, ValueError, OSError, KeyError, TypeError) as exc:
        print(f"gbmep {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
