"""Transmission files, tidy CSV helpers and run manifests.

A transmission is stored as two files sharing a stem: ``<stem>.csv`` with
columns ``index,t,v1..vd`` and ``<stem>.json`` holding the header (N, d,
thresholds, K, collection ratio and any codec metadata such as the mask seed).
Floats are written with ``repr`` and timestamps as exact deciseconds, so a
write/read cycle reproduces every array bit for bit.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import time
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import _fmt_tick
from .types import ThresholdConfig, Transmission, seconds_to_ticks

TOOL_VERSION = "0.1.0"
MANIFEST = "manifest.json"


def write_transmission(stem, tx: Transmission, cfg: ThresholdConfig | None = None,
                       trip_id: str | None = None) -> tuple[Path, Path]:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path = stem.with_suffix(".csv")
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "t"] + [f"v{j + 1}" for j in range(tx.d)])
        for i, tick, row in zip(tx.indices, tx.ticks, tx.values):
            w.writerow([int(i), _fmt_tick(tick), *(repr(float(v)) for v in row)])
    header = {
        "trip_id": trip_id,
        "N": tx.N,
        "d": tx.d,
        "epsilons": list(cfg.epsilons) if cfg else None,
        "K": cfg.K if cfg else None,
        "collection_ratio": tx.collection_ratio,
        "meta": _jsonable(tx.meta),
    }
    json_path = stem.with_suffix(".json")
    json_path.write_text(json.dumps(header, indent=2) + "\n")
    return csv_path, json_path


def read_transmission(stem) -> tuple[Transmission, dict]:
    stem = Path(stem)
    header = json.loads(stem.with_suffix(".json").read_text())
    d = int(header["d"])
    idx, ticks, vals = [], [], []
    with stem.with_suffix(".csv").open(newline="") as fh:
        r = csv.reader(fh)
        cols = next(r)
        if cols[:2] != ["index", "t"] or len(cols) != d + 2:
            raise ValueError(f"{stem}: unexpected columns {cols}")
        for row in r:
            idx.append(int(row[0]))
            ticks.append(seconds_to_ticks(float(row[1])))
            vals.append([float(v) for v in row[2:]])
    values = np.array(vals, dtype=np.float64).reshape(len(vals), d)
    tx = Transmission(np.array(idx, dtype=np.int64), np.array(ticks, dtype=np.int64), values,
                      header["N"], dict(header.get("meta") or {}))
    return tx, header


def threshold_config(header: Mapping) -> ThresholdConfig | None:
    if header.get("epsilons") is None:
        return None
    return ThresholdConfig(tuple(header["epsilons"]), header["K"])


def write_rows(path, rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> Path:
    """Tidy CSV, one dict per row; floats as repr so files are bit-stable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns or (rows[0].keys() if rows else []))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])
    return path


def read_rows(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if v is None:
        return ""
    return v


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def output_hashes(out_dir) -> dict[str, str]:
    out_dir = Path(out_dir)
    return {str(p.relative_to(out_dir)): sha256(p)
            for p in sorted(out_dir.rglob("*")) if p.is_file() and p.name != MANIFEST}


def write_manifest(out_dir, command: str, config: Mapping, seeds: Iterable[int],
                   inputs: Iterable = (), started: float | None = None, status: int = 0) -> Path:
    """One manifest per output directory; records the resolved config and output hashes."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": _jsonable(dict(config)),
        "seeds": [int(s) for s in seeds],
        "tool_version": TOOL_VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "inputs": [str(p) for p in inputs],
        "outputs": output_hashes(out_dir),
        "exit_status": int(status),
        "duration_s": round(time.time() - started, 3) if started else None,
    }
    path = out_dir / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(out_dir) -> dict:
    return json.loads((Path(out_dir) / MANIFEST).read_text())


def verify_manifest(out_dir) -> list[str]:
    """Files whose current hash differs from the manifest (missing/extra included)."""
    recorded = read_manifest(out_dir)["outputs"]
    current = output_hashes(out_dir)
    bad = [k for k in sorted(set(recorded) | set(current)) if recorded.get(k) != current.get(k)]
    return bad
