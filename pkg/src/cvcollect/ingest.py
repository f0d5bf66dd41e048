"""BSM-style CSV ingestion, trip segmentation and synthetic trip corpora."""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .types import TICKS_PER_SECOND, Sample, Trip, seconds_to_ticks

ROLES = ("vehicle_id", "timestamp", "speed", "latitude", "longitude")
DEFAULT_COLUMN_MAP = {
    "device_id": "vehicle_id",
    "timestamp": "timestamp",
    "speed": "speed",
    "latitude": "latitude",
    "longitude": "longitude",
}
VALUE_ROLES = ("speed", "latitude", "longitude")

# synthetic corpora sit near Ann Arbor, MI
ORIGIN_LAT = 42.2808
ORIGIN_LON = -83.7430
METERS_PER_DEGREE = 111_111.0


class SchemaError(ValueError):
    """A mapped column is missing from the CSV header."""

    def __init__(self, column):
        super().__init__(f"missing column {column!r}")
        self.column = column


@dataclass
class ParseResult:
    records: list[tuple[str, Sample]]
    skipped: int = 0


@dataclass
class SegmentResult:
    trips: list[Trip]
    dropped_short: int = 0
    duplicates: int = 0


def parse_bsm_csv(path, column_map: Mapping[str, str] | None = None) -> ParseResult:
    """Read ``(vehicle_id, Sample)`` records in file order.

    ``column_map`` maps CSV column names to roles (see ``ROLES``). Rows whose
    mapped fields do not parse as finite decimals are skipped and counted.
    """
    column_map = dict(DEFAULT_COLUMN_MAP if column_map is None else column_map)
    by_role = {role: col for col, role in column_map.items()}
    missing_roles = [r for r in ROLES if r not in by_role]
    if missing_roles:
        raise ValueError(f"column map lacks roles {missing_roles}")

    path = Path(path)
    records: list[tuple[str, Sample]] = []
    skipped = 0
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for role in ROLES:
            if by_role[role] not in header:
                raise SchemaError(by_role[role])
        for row in reader:
            try:
                t = float(row[by_role["timestamp"]])
                vals = tuple(float(row[by_role[r]]) for r in VALUE_ROLES)
            except (TypeError, ValueError):
                skipped += 1
                continue
            if not (math.isfinite(t) and all(math.isfinite(v) for v in vals)):
                skipped += 1
                continue
            records.append((row[by_role["vehicle_id"]], Sample(seconds_to_ticks(t), vals)))
    return ParseResult(records, skipped)


def _fmt_tick(tick: int) -> str:
    sign = "-" if tick < 0 else ""
    q, r = divmod(abs(int(tick)), TICKS_PER_SECOND)
    return f"{sign}{q}.{r}"


def write_bsm_csv(path, records: Iterable[tuple[str, Sample]]) -> None:
    """Write records in the default BSM layout (inverse of ``parse_bsm_csv``)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(DEFAULT_COLUMN_MAP))
        for vid, s in records:
            w.writerow([vid, _fmt_tick(s.tick), *(repr(float(v)) for v in s.values)])


def segment_trips(records: Sequence[tuple[str, Sample]], gap_threshold: float = 0.1,
                  tolerance: float = 1e-6) -> SegmentResult:
    """Split each vehicle's records into trips wherever the gap exceeds ``gap_threshold``.

    Records are grouped by vehicle id (first-appearance order) and sorted by
    time within a vehicle. Repeated timestamps keep the first record. Trips
    shorter than 2 samples are dropped.
    """
    groups: dict[str, list[Sample]] = defaultdict(list)
    for vid, s in records:
        groups[vid].append(s)

    out = SegmentResult([])
    for vid, samples in groups.items():
        samples = sorted(samples, key=lambda s: s.tick)
        runs: list[list[Sample]] = [[samples[0]]]
        for prev, cur in zip(samples, samples[1:]):
            gap = (cur.tick - prev.tick) / TICKS_PER_SECOND
            if gap == 0:
                out.duplicates += 1
                continue
            if gap > gap_threshold + tolerance:
                runs.append([cur])
            else:
                runs[-1].append(cur)
        k = 0
        for run in runs:
            if len(run) < 2:
                out.dropped_short += 1
                continue
            if len({s.d for s in run}) != 1:
                raise ValueError(f"vehicle {vid}: dimension changes within a trip")
            ticks = np.array([s.tick for s in run], dtype=np.int64)
            values = np.array([s.values for s in run], dtype=np.float64)
            out.trips.append(Trip(f"{vid}-{k}", ticks, values))
            k += 1
    return out


def synth_trip(kind: str, N: int, seed: int = 0, params: Mapping | None = None) -> Trip:
    """Deterministic 3-dimensional (speed, lat, lon) trip for test corpora.

    kinds: ``constant``, ``linear``, ``random_walk``, ``step``.
    """
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    p = dict(params or {})
    rng = np.random.default_rng(seed)
    start = seconds_to_ticks(p.get("start", 0.0))
    ticks = start + np.arange(N, dtype=np.int64)
    dt = 1.0 / TICKS_PER_SECOND
    k = np.arange(N, dtype=np.float64)

    if kind == "constant":
        speed = np.full(N, float(p.get("speed", 15.0)))
        lat = np.full(N, ORIGIN_LAT)
        lon = np.full(N, ORIGIN_LON)
    elif kind == "linear":
        speed = float(p.get("speed0", 0.0)) + float(p.get("slope", 1.0)) * k
        lat = ORIGIN_LAT + float(p.get("lat_slope", 1e-5)) * k
        lon = ORIGIN_LON + float(p.get("lon_slope", 1e-5)) * k
    elif kind == "random_walk":
        speed, lat, lon = _random_walk(rng, N, dt, p)
    elif kind == "step":
        n_steps = int(p.get("n_steps", max(1, N // 200)))
        cuts = np.sort(rng.choice(np.arange(1, N), size=min(n_steps, N - 1), replace=False))
        levels = rng.uniform(0.0, 35.0, size=len(cuts) + 1)
        speed = levels[np.searchsorted(cuts, np.arange(N), side="right")]
        heading = rng.uniform(0, 2 * np.pi)
        lat, lon = _integrate_position(speed, np.full(N, heading), dt)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")

    vid = str(p.get("vehicle_id", f"{kind}-{seed}"))
    return Trip(vid, ticks, np.column_stack([speed, lat, lon]))


def _integrate_position(speed, heading, dt):
    step = speed * dt / METERS_PER_DEGREE
    north = np.concatenate([[0.0], np.cumsum(step[:-1] * np.cos(heading[:-1]))])
    east = np.concatenate([[0.0], np.cumsum(step[:-1] * np.sin(heading[:-1]))])
    return ORIGIN_LAT + north, ORIGIN_LON + east


def _random_walk(rng, N, dt, p):
    # accel is a damped random walk driven by jerk noise; heading drifts slowly
    jerk = float(p.get("jerk_sigma", 0.15))
    accel_max = float(p.get("accel_max", 3.0))
    turn = float(p.get("heading_sigma", 0.004))
    gps = float(p.get("gps_sigma", 0.0))
    v = float(p.get("speed0", rng.uniform(5.0, 30.0)))
    a = 0.0
    speed = np.empty(N)
    dj = rng.normal(0.0, jerk, size=N)
    for i in range(N):
        speed[i] = v
        a = min(max(0.98 * a + dj[i], -accel_max), accel_max)
        v = min(max(v + a * dt, 0.0), 35.0)
    heading = rng.uniform(0, 2 * np.pi) + np.cumsum(rng.normal(0.0, turn, size=N))
    lat, lon = _integrate_position(speed, heading, dt)
    if gps > 0:
        lat = lat + rng.normal(0.0, gps, size=N)
        lon = lon + rng.normal(0.0, gps, size=N)
    return speed, lat, lon


def synth_corpus(kind: str, n_trips: int, seed: int, n_range=(200, 9163), params=None) -> list[Trip]:
    """``n_trips`` trips with lengths drawn uniformly from ``n_range``; trip i uses seed (seed, i)."""
    rng = np.random.default_rng(seed)
    lengths = rng.integers(n_range[0], n_range[1] + 1, size=n_trips)
    sub = rng.integers(0, 2**31 - 1, size=n_trips)
    trips = []
    for i, (n, s) in enumerate(zip(lengths, sub)):
        pp = dict(params or {})
        pp.setdefault("vehicle_id", f"{kind}-{seed}-{i}")
        trips.append(synth_trip(kind, int(n), int(s), pp))
    return trips


# --- trip files ------------------------------------------------------------

def write_trips(out_dir, trips: Sequence[Trip]) -> list[Path]:
    """One CSV per trip plus a ``manifest.json`` sidecar listing them."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    entries = []
    for trip in trips:
        fname = f"trip_{_safe(trip.vehicle_id)}.csv"
        vid = trip.vehicle_id.rsplit("-", 1)[0] if "-" in trip.vehicle_id else trip.vehicle_id
        write_bsm_csv(out_dir / fname, ((vid, trip.sample(i)) for i in range(trip.N)))
        paths.append(out_dir / fname)
        entries.append({
            "trip_id": trip.vehicle_id,
            "file": fname,
            "N": trip.N,
            "d": trip.d,
            "start": _fmt_tick(trip.ticks[0]),
            "end": _fmt_tick(trip.ticks[-1]),
        })
    with (out_dir / "trips.json").open("w") as fh:
        json.dump({"trips": entries}, fh, indent=2)
    return paths


def read_trips(trip_dir) -> list[Trip]:
    trip_dir = Path(trip_dir)
    with (trip_dir / "trips.json").open() as fh:
        entries = json.load(fh)["trips"]
    trips = []
    for e in entries:
        res = parse_bsm_csv(trip_dir / e["file"])
        ticks = np.array([s.tick for _, s in res.records], dtype=np.int64)
        values = np.array([s.values for _, s in res.records], dtype=np.float64)
        trips.append(Trip(e["trip_id"], ticks, values))
    return trips


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)
