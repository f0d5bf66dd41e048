"""Command-line entry point: ``cvcollect <command> [options]``.

Every command writes into ``--out`` and finishes by writing ``manifest.json``
there with the resolved configuration and a sha256 of each output file.
Settings resolve as command-line flag, then config file, then built-in default.
A manifest is itself accepted as ``--config``, which re-runs the recorded
configuration.

Exit status: 0 success, 1 finished but flagged (non-converged l1 blocks,
partial-order inversions, manifest mismatch), 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from ._compat import load_toml
from .baselines import BpSolverConfig, cs_decode, cs_select, uniform_decode, uniform_encode
from .ingest import (SchemaError, parse_bsm_csv, read_trips, segment_trips,
                     synth_corpus, write_trips)
from .metrics import (REFERENCE_RATIOS, error_report, partial_order_inversions, speed_error,
                      sweep_scenarios, trajectory_error, relative_l2)
from .mpla import mpla_decode, mpla_encode
from .sim import (FreewayConfig, Strategy, run_sim, simulate_physics, speed_field,
                  write_trajectories, write_uploads)
from .traveltime import (STRATEGIES, capacity_experiment, estimate_travel_time,
                         exact_travel_time, penetration_experiment, reconstruct,
                         reference_travel_time, relative_error)
from .types import ThresholdConfig

log = logging.getLogger("cvcollect")

EXIT_OK, EXIT_FLAGGED, EXIT_USAGE = 0, 1, 2

DEFAULTS: dict[str, dict] = {
    "ingest": {"input": None, "synthetic": None, "n": None, "trips": 100, "gap": 0.1,
               "tolerance": 1e-6, "column_map": None, "seed": 0},
    "compress": {"trips": None, "strategy": "mpla", "eps": [2.0, 2e-4, 2e-4], "k": 50,
                 "stride": None, "ratio": None, "solver": "simplex", "seed": 0},
    "sweep": {"trips": None, "synthetic": "random_walk", "n_trips": 200, "k": 50,
              "scenarios": None, "seed": 0, "jobs": 1},
    "simulate": {"strategy": "mpla", "penetration": 1.0, "capacity": None,
                 "eps": [2.0, 2e-4, 2e-4], "k": 50, "stride": None, "ratio": None,
                 "every": 10, "seed": 0},
    "experiment": {"kind": "capacity", "capacities": [30, 50, 100, 300],
                   "penetrations": [0.25, 0.5, 0.75, 1.0], "capacity": 50, "penetration": 0.5,
                   "seeds": None, "n_seeds": 5, "k": 50, "strategies": list(STRATEGIES),
                   "seed": 1, "jobs": 1},
}


class UsageError(Exception):
    pass


# --- argument parsing ----------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _capacity(text: str):
    if text.lower() in ("none", "inf", "unbounded"):
        return "none"
    return int(text)


def _global_flags(default) -> argparse.ArgumentParser:
    # accepted before or after the command; the sub-parser copies use SUPPRESS
    # so they do not overwrite a value given before the command
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int, default=default, help="base random seed")
    g.add_argument("--jobs", type=int, default=default, help="worker processes for independent work")
    g.add_argument("--out", type=Path, default=default, help="output directory (default out/<command>)")
    g.add_argument("--config", type=Path, default=default,
                   help="JSON/TOML config file, or a manifest.json to re-run")
    g.add_argument("-v", "--verbose", action="store_true", default=default)
    return g


def build_parser() -> argparse.ArgumentParser:
    g = _global_flags(argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="cvcollect", parents=[_global_flags(None)],
                                description="Connected-vehicle data collection: codecs, sweeps, "
                                            "freeway simulation and travel-time experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[g], help="parse a BSM CSV or generate synthetic trips")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--input", type=Path, help="BSM-style CSV with a header row")
    src.add_argument("--synthetic", choices=["constant", "linear", "random_walk", "step"])
    s.add_argument("--n", type=int, help="synthetic trip length (default: drawn per trip)")
    s.add_argument("--trips", type=int, help="number of synthetic trips")
    s.add_argument("--gap", type=float, help="trip-splitting gap in seconds")
    s.add_argument("--tolerance", type=float)
    s.add_argument("--column-map", dest="column_map",
                   help="comma list col=role, roles: vehicle_id,timestamp,speed,latitude,longitude")

    s = sub.add_parser("compress", parents=[g], help="encode/decode a trip directory and report errors")
    s.add_argument("--trips", type=Path, help="directory written by 'ingest'")
    s.add_argument("--strategy", choices=["mpla", "uniform", "cs"])
    s.add_argument("--eps", type=_floats, help="thresholds speed,lat,lon")
    s.add_argument("--k", type=int, help="maximum segment length")
    s.add_argument("--stride", type=int)
    s.add_argument("--ratio", type=float)
    s.add_argument("--solver", choices=["simplex", "admm"])

    s = sub.add_parser("sweep", parents=[g], help="collection ratios over the 16 threshold scenarios")
    s.add_argument("--trips", type=Path, help="trip directory (default: synthetic corpus)")
    s.add_argument("--synthetic", choices=["constant", "linear", "random_walk", "step"])
    s.add_argument("--n-trips", dest="n_trips", type=int)
    s.add_argument("--k", type=int)
    s.add_argument("--scenarios", type=_ints)

    s = sub.add_parser("simulate", parents=[g], help="one freeway run with data collection")
    s.add_argument("--strategy", choices=["mpla", "uniform", "compressive", "conventional"])
    s.add_argument("--penetration", type=float)
    s.add_argument("--capacity", type=_capacity, help="OBU capacity, or 'none'")
    s.add_argument("--eps", type=_floats)
    s.add_argument("--k", type=int)
    s.add_argument("--stride", type=int)
    s.add_argument("--ratio", type=float)
    s.add_argument("--every", type=int, help="trajectory dump every n steps")
    s.add_argument("--no-incident", dest="incident", action="store_false", default=None)

    s = sub.add_parser("experiment", parents=[g], help="travel-time error vs capacity or penetration")
    s.add_argument("kind", nargs="?", choices=["capacity", "penetration"])
    s.add_argument("--capacities", type=_ints)
    s.add_argument("--penetrations", type=_floats)
    s.add_argument("--capacity", type=int, help="fixed capacity for the penetration experiment")
    s.add_argument("--penetration", type=float, help="fixed penetration for the capacity experiment")
    s.add_argument("--seeds", type=_ints, help="explicit seeds (default: --seed .. --seed+n-1)")
    s.add_argument("--n-seeds", dest="n_seeds", type=int)
    s.add_argument("--k", type=int)
    s.add_argument("--strategies", type=lambda t: t.split(","))

    s = sub.add_parser("report", parents=[g], help="summarise an output directory")
    s.add_argument("directory", type=Path)
    s.add_argument("--verify", action="store_true", default=None,
                   help="re-hash outputs against the manifest")
    return p


# --- config resolution ---------------------------------------------------------

def _load_config(path: Path | None, command: str) -> tuple[dict, dict]:
    """Returns (command section, freeway section)."""
    if path is None:
        return {}, {}
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    text = path.read_text()
    try:
        data = load_toml(text) if path.suffix == ".toml" else json.loads(text)
    except Exception as exc:
        raise UsageError(f"cannot parse config {path}: {exc}")
    if "command" in data and "config" in data:       # a manifest
        if data["command"] != command:
            raise UsageError(f"manifest {path} records command {data['command']!r}, not {command!r}")
        cfg = dict(data["config"])
        return cfg, dict(cfg.pop("freeway", {}) or {})
    section = dict(data.get(command, {}))
    for key in ("seed", "jobs"):
        if key in data and key not in section:
            section[key] = data[key]
    return section, dict(data.get("freeway", {}))


def resolve(command: str, args: argparse.Namespace) -> tuple[dict, FreewayConfig | None]:
    file_cfg, fw_file = _load_config(args.config, command)
    defaults = DEFAULTS.get(command, {})
    unknown = set(file_cfg) - set(defaults) - {"freeway", "out"}
    if unknown:
        raise UsageError(f"unknown {command} config keys {sorted(unknown)}")
    cli = {k: v for k, v in vars(args).items()
           if v is not None and k in defaults}
    cfg = {**defaults, **file_cfg, **cli}
    fw = None
    if command in ("simulate", "experiment"):
        fw_dict = {**FreewayConfig().to_dict(), **fw_file}
        if getattr(args, "incident", None) is not None:
            fw_dict["incident"] = args.incident
        try:
            fw = FreewayConfig.from_dict(fw_dict)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad freeway config: {exc}")
        cfg["freeway"] = fw.to_dict()
    return cfg, fw


def _thresholds(cfg) -> ThresholdConfig:
    try:
        return ThresholdConfig(tuple(cfg["eps"]), cfg["k"])
    except ValueError as exc:
        raise UsageError(str(exc))


# --- commands --------------------------------------------------------------------

def cmd_ingest(cfg, out: Path) -> tuple[int, list]:
    if cfg["input"] is None and cfg["synthetic"] is None:
        raise UsageError("ingest needs --input or --synthetic")
    summary = {}
    inputs = []
    if cfg["input"] is not None:
        path = Path(cfg["input"])
        if not path.exists():
            raise UsageError(f"input file not found: {path}")
        cmap = None
        if cfg["column_map"]:
            try:
                cmap = dict(item.split("=", 1) for item in cfg["column_map"].split(","))
            except ValueError:
                raise UsageError(f"bad --column-map {cfg['column_map']!r}")
        try:
            parsed = parse_bsm_csv(path, cmap)
        except SchemaError as exc:
            raise UsageError(f"{path}: {exc}")
        seg = segment_trips(parsed.records, cfg["gap"], cfg["tolerance"])
        trips = seg.trips
        summary.update(records=len(parsed.records), skipped_rows=parsed.skipped,
                       dropped_short=seg.dropped_short, duplicates=seg.duplicates)
        inputs.append(path)
    else:
        n = cfg["n"]
        rng = (n, n) if n else (200, 9163)
        trips = synth_corpus(cfg["synthetic"], cfg["trips"], cfg["seed"], n_range=rng)
    write_trips(out / "trips", trips)
    summary["trips"] = len(trips)
    summary["samples"] = int(sum(t.N for t in trips))
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"wrote {len(trips)} trips to {out / 'trips'}")
    return EXIT_OK, inputs


def _trip_dir(path) -> Path:
    path = Path(path)
    if (path / "trips" / "trips.json").exists():
        return path / "trips"
    if not (path / "trips.json").exists():
        raise UsageError(f"no trips.json under {path}")
    return path


def cmd_compress(cfg, out: Path) -> tuple[int, list]:
    if cfg["trips"] is None:
        raise UsageError("compress needs --trips")
    tdir = _trip_dir(cfg["trips"])
    trips = read_trips(tdir)
    strategy = cfg["strategy"]
    th = _thresholds(cfg) if strategy == "mpla" else None
    if strategy == "uniform" and not cfg["stride"]:
        raise UsageError("uniform needs --stride")
    if strategy == "cs" and not cfg["ratio"]:
        raise UsageError("cs needs --ratio")
    bp = BpSolverConfig(method=cfg["solver"])

    approxes, rows = [], []
    sent = nonconv = empty = 0
    for i, trip in enumerate(trips):
        if strategy == "mpla":
            tx = mpla_encode(trip, th)
            rec = mpla_decode(tx, trip.N, th, trip.vehicle_id)
        elif strategy == "uniform":
            tx = uniform_encode(trip, cfg["stride"])
            rec = uniform_decode(tx, trip.N, trip.vehicle_id)
        else:
            tx = cs_select(trip, cfg["ratio"], cfg["seed"] + i).tx
            rec, info = cs_decode(tx, trip.N, bp, vehicle_id=trip.vehicle_id)
            nonconv += info.nonconverged
            empty += info.empty_blocks
        io.write_transmission(out / "transmissions" / trip.vehicle_id, tx, th, trip.vehicle_id)
        sent += len(tx)
        approxes.append(rec)
        sp, tr = speed_error(trip, rec), trajectory_error(trip, rec)
        rows.append({"trip_id": trip.vehicle_id, "N": trip.N, "transmitted": len(tx),
                     "collection_ratio": tx.collection_ratio, "speed_median": sp.median,
                     "speed_linf": sp.linf, "traj_median_m": tr.median, "traj_linf_m": tr.linf,
                     "speed_rel_l2": relative_l2(trip.values[:, 0], rec.values[:, 0])})
    report = error_report(trips, approxes, sent)
    io.write_rows(out / "per_trip.csv", rows)
    row = {"strategy": strategy, "trips": len(trips), **report.row(),
           "nonconverged_blocks": nonconv, "empty_blocks": empty, "flags": ";".join(report.flags)}
    io.write_rows(out / "report.csv", [row])
    print(_table([row]))
    if nonconv:
        log.warning("%d l1 blocks did not converge", nonconv)
        return EXIT_FLAGGED, [tdir]
    return EXIT_OK, [tdir]


def cmd_sweep(cfg, out: Path) -> tuple[int, list]:
    inputs = []
    if cfg["trips"] is not None:
        tdir = _trip_dir(cfg["trips"])
        corpus = read_trips(tdir)
        inputs.append(tdir)
    else:
        corpus = synth_corpus(cfg["synthetic"], cfg["n_trips"], cfg["seed"])
    table = sweep_scenarios(corpus, cfg["k"], cfg["scenarios"], jobs=cfg["jobs"])
    rows = [{"scenario": r.scenario, "eps_speed": r.eps_speed, "eps_lat": r.eps_lat,
             "eps_lon": r.eps_lon, "K": table.K, "mean_ratio": r.mean_ratio,
             "reference_ratio": REFERENCE_RATIOS.get(r.scenario)} for r in table.rows]
    io.write_rows(out / "table.csv", rows)
    edges = np.linspace(0.0, 1.0, len(table.rows[0].histogram) + 1)
    hist = [{"scenario": r.scenario, "bin_lo": float(edges[b]), "bin_hi": float(edges[b + 1]),
             "count": c} for r in table.rows for b, c in enumerate(r.histogram)]
    io.write_rows(out / "histogram.csv", hist)
    (out / "histogram.json").write_text(json.dumps(
        {str(r.scenario): r.histogram for r in table.rows}, indent=2) + "\n")
    io.write_rows(out / "time_of_day.csv", table.time_of_day,
                  ["scenario", "hour", "trips", "mean_ratio"])
    inv = partial_order_inversions(table)
    (out / "inversions.json").write_text(json.dumps(inv) + "\n")
    print(_table(rows, ["scenario", "eps_speed", "eps_lat", "mean_ratio"]))
    if inv:
        log.warning("%d partial-order inversions", len(inv))
        return EXIT_FLAGGED, inputs
    return EXIT_OK, inputs


def _sim_strategy(cfg) -> Strategy:
    kind = cfg["strategy"]
    try:
        if kind == "mpla":
            return Strategy.mpla(_thresholds(cfg))
        if kind == "uniform":
            return Strategy.uniform(cfg["stride"] or 0)
        if kind == "compressive":
            return Strategy.compressive(cfg["ratio"] or 0.0, cfg["seed"])
        return Strategy.conventional()
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_simulate(cfg, fw: FreewayConfig, out: Path) -> tuple[int, list]:
    strategy = _sim_strategy(cfg)
    cap = None if cfg["capacity"] in (None, "none") else int(cfg["capacity"])
    if not 0 <= cfg["penetration"] <= 1:
        raise UsageError("penetration must be in [0, 1]")
    truth = simulate_physics(fw, cfg["seed"])
    res = run_sim(fw, cfg["penetration"], strategy, cap, cfg["seed"], truth=truth)
    write_trajectories(truth, out / "trajectories.csv", every=max(1, cfg["every"]))
    write_uploads(res, out / "uploads")
    io.write_rows(out / "speed_field.csv", speed_field(truth), ["t", "x", "speed", "n"])
    cov = reconstruct(res)
    est = estimate_travel_time(cov, fw).grid
    exact, ref = exact_travel_time(truth), reference_travel_time(truth)
    first = int(round(fw.warmup / fw.period))
    rows = []
    for i in range(fw.n_sections):
        for j in range(est.values.shape[1]):
            rows.append({"section": i + 1, "period": first + j + 1,
                         "exact": exact.values[i, j], "reference": ref.values[i, j],
                         "estimate": est.values[i, j]})
    io.write_rows(out / "travel_time.csv", rows)
    er, ev = relative_error(est, ref), relative_error(est, exact)
    summary = {"vehicles": truth.n_vehicles, "connected": int(res.connected.sum()),
               "collection_ratio": res.collection_ratio, "uploads": len(res.uploads),
               "e_r": er.value, "flagged_cells": er.flagged, "e_r_vs_vehicle_mean": ev.value,
               "min_gap_m": truth.min_gap_seen, "nonconverged_blocks": cov.nonconverged}
    (out / "summary.json").write_text(json.dumps(io._jsonable(summary), indent=2) + "\n")
    print(_table([summary]))
    return (EXIT_FLAGGED if cov.nonconverged else EXIT_OK), []


def cmd_experiment(cfg, fw: FreewayConfig, out: Path) -> tuple[int, list]:
    seeds = cfg["seeds"] or list(range(cfg["seed"], cfg["seed"] + cfg["n_seeds"]))
    cfg["seeds"] = seeds
    bad = set(cfg["strategies"]) - set(STRATEGIES)
    if bad:
        raise UsageError(f"unknown strategies {sorted(bad)}")
    if cfg["kind"] == "capacity":
        res = capacity_experiment(fw, cfg["capacities"], seeds, cfg["penetration"],
                                  cfg["strategies"], cfg["k"], jobs=cfg["jobs"])
    else:
        res = penetration_experiment(fw, cfg["penetrations"], seeds, cfg["capacity"],
                                     cfg["strategies"], cfg["k"], jobs=cfg["jobs"])
    io.write_rows(out / "results.csv", [r.as_dict() for r in res.rows])
    means = res.mean_rows()
    io.write_rows(out / "mean.csv", means)
    io.write_rows(out / "matched.csv", res.matched)
    print(_table(means, ["strategy", "value", "e_r", "ratio", "seeds"]))
    if res.nonconverged:
        log.warning("%d l1 blocks did not converge", res.nonconverged)
        return EXIT_FLAGGED, []
    return EXIT_OK, []


def cmd_report(args) -> int:
    d = args.directory
    if not (d / io.MANIFEST).exists():
        raise UsageError(f"no {io.MANIFEST} in {d}")
    man = io.read_manifest(d)
    print(f"command: {man['command']}  seeds: {man['seeds']}  files: {len(man['outputs'])}")
    for name in ("report.csv", "table.csv", "mean.csv", "summary.json"):
        p = d / name
        if p.exists():
            print(f"\n{name}")
            if p.suffix == ".csv":
                print(_table(io.read_rows(p)))
            else:
                print(p.read_text().rstrip())
    if args.verify:
        bad = io.verify_manifest(d)
        if bad:
            print(f"\nmanifest mismatch: {', '.join(bad)}")
            return EXIT_FLAGGED
        print("\nmanifest verified")
    return EXIT_OK


def _table(rows, cols=None) -> str:
    if not rows:
        return "(empty)"
    cols = cols or list(rows[0])

    def fmt(v):
        if isinstance(v, float):
            return f"{v:.4g}"
        if isinstance(v, str):
            try:
                return f"{float(v):.4g}"
            except ValueError:
                return v
        return str(v)

    cells = [[fmt(r.get(c)) for c in cols] for r in rows]
    w = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.rjust(w[i]) for i, c in enumerate(cols))]
    lines += ["  ".join(v.rjust(w[i]) for i, v in enumerate(row)) for row in cells]
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args)
        cfg, fw = resolve(args.command, args)
        out = args.out or Path("out") / args.command
        out.mkdir(parents=True, exist_ok=True)
        started = time.time()
        if args.command == "ingest":
            status, inputs = cmd_ingest(cfg, out)
        elif args.command == "compress":
            status, inputs = cmd_compress(cfg, out)
        elif args.command == "sweep":
            status, inputs = cmd_sweep(cfg, out)
        elif args.command == "simulate":
            status, inputs = cmd_simulate(cfg, fw, out)
        else:
            status, inputs = cmd_experiment(cfg, fw, out)
        seeds = cfg.get("seeds") or [cfg.get("seed", 0)]
        io.write_manifest(out, args.command, cfg, seeds, inputs, started, status)
        return status
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
