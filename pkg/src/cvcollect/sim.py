"""Two-lane freeway microsimulation with a lane-closure incident, OBU buffers and RSUs.

Longitudinal motion is a Newell-style rule: every vehicle targets the minimum
of its desired speed, the (anticipated) speed limit and a safe speed derived
from the gap to its leader, subject to bounded acceleration. The hard cap
``v <= (gap - min_gap) / headway`` is applied after the deceleration bound,
which keeps every follower gap at or above ``min_gap`` by induction.

Data collection never feeds back into the physics, so it is run as a
per-vehicle replay over the recorded trajectory: each connected vehicle's
strategy filters its 0.1 s samples, a FIFO OBU holds the survivors and the
buffer is emptied into the RSU the vehicle crosses.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ._compat import load_toml
from .baselines import bernoulli_mask, uniform_indices
from .mpla import encode_flags, segment_openings
from .types import ThresholdConfig

METERS_PER_DEGREE = 111_111.0
ORIGIN_LAT = 42.2808
ORIGIN_LON = -83.7430
LANE_WIDTH = 3.5


@dataclass(frozen=True)
class FreewayConfig:
    section_length: float = 1609.34
    n_sections: int = 5
    lanes: int = 2
    sim_duration: float = 1800.0
    demand: int = 1100
    free_speed: float = 29.06
    incident: bool = True
    incident_section: int = 3          # 1-based
    incident_start: float = 600.0
    incident_end: float = 1200.0
    incident_speed: float = 8.94
    closed_lane: int = 2
    time_step: float = 0.1
    warmup: float = 300.0
    period: float = 300.0
    accel: float = 1.5
    decel: float = 3.0
    min_gap: float = 2.0
    headway: float = 1.0
    vehicle_length: float = 5.0
    desired_spread: float = 0.05       # desired speed ~ free_speed * U(1 - spread, 1)
    merge_zone: float = 1609.34        # closed-lane vehicles try to merge this far upstream
    drain: float = 1200.0              # extra seconds without arrivals so late data reaches RSUs

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                continue
            if f.name in ("drain", "warmup", "desired_spread") and v >= 0:
                continue
            if not v > 0:
                raise ValueError(f"{f.name} must be positive, got {v}")
        if not 0 <= self.incident_start < self.incident_end <= self.sim_duration:
            raise ValueError("incident window must lie within the horizon")
        if self.lanes != 2:
            raise ValueError("only the two-lane layout is modelled")
        if not 1 <= self.incident_section <= self.n_sections:
            raise ValueError("incident section out of range")
        if abs(self.time_step - 0.1) > 1e-12:
            raise ValueError("time_step is fixed at 0.1 s")

    @property
    def length(self) -> float:
        return self.section_length * self.n_sections

    @property
    def n_periods(self) -> int:
        return int(round(self.sim_duration / self.period))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown freeway config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".toml":
            data = load_toml(text)
        else:
            data = json.loads(text)
        return cls.from_dict(data.get("freeway", data))


# --- physics ---------------------------------------------------------------

@dataclass
class GroundTruth:
    """All vehicle states, sorted by (vehicle id, tick)."""

    cfg: FreewayConfig
    seed: int
    vid: np.ndarray
    tick: np.ndarray
    lane: np.ndarray
    pos: np.ndarray
    speed: np.ndarray
    n_arrivals: int
    entered: int
    exited: int
    min_gap_seen: float
    starts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ids = np.unique(self.vid)
        self.starts = np.searchsorted(self.vid, np.append(ids, ids[-1] + 1 if len(ids) else 0))
        self.ids = ids

    @property
    def n_vehicles(self) -> int:
        return len(self.ids)

    def vehicle(self, k: int) -> slice:
        """Row slice of the k-th vehicle (k indexes ``ids``)."""
        return slice(int(self.starts[k]), int(self.starts[k + 1]))

    def samples(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(ticks, values) with values = (speed m/s, lat deg, lon deg)."""
        s = self.vehicle(k)
        return self.tick[s], to_samples(self.pos[s], self.speed[s], self.lane[s])

    def mean_speed(self, lo: float, hi: float, t0: float, t1: float) -> float:
        """Sample-weighted mean speed over positions [lo, hi) and times [t0, t1)."""
        t = self.tick * self.cfg.time_step
        sel = (self.pos >= lo) & (self.pos < hi) & (t >= t0) & (t < t1)
        return float(self.speed[sel].mean()) if sel.any() else math.nan


def to_samples(pos, speed, lane) -> np.ndarray:
    """Map road coordinates to (speed, lat, lon); the road runs due east."""
    lat = ORIGIN_LAT + (np.asarray(lane, dtype=np.float64) - 1) * LANE_WIDTH / METERS_PER_DEGREE
    lon = ORIGIN_LON + np.asarray(pos, dtype=np.float64) / METERS_PER_DEGREE
    return np.column_stack([np.asarray(speed, dtype=np.float64), lat, lon])


def position_from_lon(lon) -> np.ndarray:
    return (np.asarray(lon, dtype=np.float64) - ORIGIN_LON) * METERS_PER_DEGREE


def _arrivals(cfg: FreewayConfig, rng) -> list[list[float]]:
    rate = cfg.demand / cfg.sim_duration
    times = []
    t = rng.exponential(1 / rate)
    while t < cfg.sim_duration:
        times.append(t)
        t += rng.exponential(1 / rate)
    per_lane = [[], []]
    for i, t in enumerate(times):
        per_lane[i % 2].append(t)
    return per_lane


def simulate_physics(cfg: FreewayConfig, seed: int) -> GroundTruth:
    rng = np.random.default_rng([seed, 0])
    dt = cfg.time_step
    arrivals = _arrivals(cfg, rng)
    n_arr = sum(len(a) for a in arrivals)
    desired = cfg.free_speed * rng.uniform(1 - cfg.desired_spread, 1.0, size=n_arr)
    queues = [deque(a) for a in arrivals]

    L = cfg.length
    s3_lo = (cfg.incident_section - 1) * cfg.section_length
    s3_hi = s3_lo + cfg.section_length
    s0, tau, vlen = cfg.min_gap, cfg.headway, cfg.vehicle_length
    b = cfg.decel

    ids = np.empty(0, dtype=np.int64)
    x = np.empty(0)
    v = np.empty(0)
    lane = np.empty(0, dtype=np.int8)
    vdes = np.empty(0)
    next_id = 0
    exited = 0
    min_gap_seen = math.inf

    rec_id, rec_tick, rec_lane, rec_x, rec_v = [], [], [], [], []

    n_main = int(round(cfg.sim_duration / dt))
    n_max = n_main + int(round(cfg.drain / dt))
    k = 0
    while k < n_max:
        t = k * dt
        incident = cfg.incident and cfg.incident_start <= t < cfg.incident_end

        # entries: the queue head enters when the lane has room at its speed
        if k < n_main:
            for ln in (1, 2):
                q = queues[ln - 1]
                if not q or q[0] > t:
                    continue
                in_lane = lane == ln
                vd = desired[next_id]
                if in_lane.any():
                    j = np.flatnonzero(in_lane)[np.argmin(x[in_lane])]
                    gap = x[j] - vlen
                    v_in = min(vd, v[j])
                    if gap < s0 + tau * v_in:
                        continue
                else:
                    v_in = vd
                q.popleft()
                ids = np.append(ids, next_id)
                x = np.append(x, 0.0)
                v = np.append(v, v_in)
                lane = np.append(lane, np.int8(ln))
                vdes = np.append(vdes, vd)
                next_id += 1
        elif len(ids) == 0:
            break

        rec_id.append(ids.copy())
        rec_tick.append(np.full(len(ids), k, dtype=np.int64))
        rec_lane.append(lane.copy())
        rec_x.append(x.copy())
        rec_v.append(v.copy())

        n = len(ids)
        if n == 0:
            k += 1
            continue

        order = np.lexsort((x, lane))
        xs, ls = x[order], lane[order]
        has_leader = np.zeros(n, dtype=bool)
        has_leader[:-1] = ls[:-1] == ls[1:]
        gap = np.full(n, np.inf)
        vlead = np.zeros(n)
        gap[:-1] = np.where(has_leader[:-1], xs[1:] - xs[:-1] - vlen, np.inf)
        vlead[:-1] = np.where(has_leader[:-1], v[order][1:], 0.0)
        g = np.empty(n)
        vl = np.empty(n)
        g[order] = gap
        vl[order] = vlead
        if n > 1:
            finite = np.isfinite(g)
            if finite.any():
                min_gap_seen = min(min_gap_seen, float(g[finite].min()))

        # closed lane: the start of the incident section acts as a standing obstacle
        limit = np.full(n, cfg.free_speed)
        if incident:
            blocked = (lane == cfg.closed_lane) & (x < s3_lo)
            gobs = np.where(blocked, s3_lo - x, np.inf)
            vl = np.where(gobs < g, 0.0, vl)
            g = np.minimum(g, gobs)
            in_zone = (x >= s3_lo) & (x < s3_hi)
            limit = np.where(in_zone, cfg.incident_speed, limit)
            ahead = x < s3_lo
            lim_ahead = np.sqrt(cfg.incident_speed ** 2 + 2 * b * 0.5 * np.maximum(s3_lo - x, 0.0))
            limit_soft = np.where(ahead, np.minimum(limit, lim_ahead), limit)
        else:
            limit_soft = limit

        room = np.maximum(g - s0, 0.0)
        v_hard = room / tau
        v_brake = np.sqrt(vl ** 2 + 2 * b * room)
        v_new = np.minimum.reduce([v + cfg.accel * dt, vdes, limit_soft, v_brake])
        v_new = np.maximum(v_new, v - b * dt)
        v_new = np.minimum.reduce([v_new, limit, v_hard])
        v_new = np.maximum(v_new, 0.0)
        x = x + v_new * dt
        v = v_new

        if incident:
            _merge(x, v, lane, cfg, s3_lo)

        done = x >= L
        if done.any():
            rec_id.append(ids[done].copy())
            rec_tick.append(np.full(int(done.sum()), k + 1, dtype=np.int64))
            rec_lane.append(lane[done].copy())
            rec_x.append(x[done].copy())
            rec_v.append(v[done].copy())
            exited += int(done.sum())
            keep = ~done
            ids, x, v, lane, vdes = ids[keep], x[keep], v[keep], lane[keep], vdes[keep]
        k += 1

    vid = np.concatenate(rec_id)
    tick = np.concatenate(rec_tick)
    order = np.lexsort((tick, vid))
    return GroundTruth(
        cfg, seed, vid[order], tick[order], np.concatenate(rec_lane)[order],
        np.concatenate(rec_x)[order], np.concatenate(rec_v)[order],
        n_arrivals=n_arr, entered=next_id, exited=exited, min_gap_seen=min_gap_seen,
    )


def _merge(x, v, lane, cfg: FreewayConfig, s3_lo: float):
    """Closed-lane vehicles move to the open lane when both gaps are acceptable (in place)."""
    open_lane = 3 - cfg.closed_lane
    cand = np.flatnonzero((lane == cfg.closed_lane) & (x < s3_lo) & (x >= s3_lo - cfg.merge_zone))
    if len(cand) == 0:
        return
    s0, tau, vlen = cfg.min_gap, cfg.headway, cfg.vehicle_length
    for i in cand[np.argsort(-x[cand])]:
        target = np.flatnonzero(lane == open_lane)
        xt = x[target]
        ahead = xt >= x[i]
        if ahead.any():
            j = target[ahead][np.argmin(xt[ahead])]
            if x[j] - x[i] - vlen < s0 + 0.5 * tau * v[i]:
                continue
        behind = ~ahead
        if behind.any():
            j = target[behind][np.argmax(xt[behind])]
            if x[i] - x[j] - vlen < s0 + 0.5 * tau * v[j]:
                continue
        lane[i] = open_lane


# --- data collection -------------------------------------------------------

@dataclass(frozen=True)
class Strategy:
    """One of ``conventional``, ``uniform(stride)``, ``compressive(ratio, seed)``, ``mpla(cfg)``."""

    kind: str
    stride: int | None = None
    ratio: float | None = None
    seed: int = 0
    thresholds: ThresholdConfig | None = None

    def __post_init__(self):
        if self.kind == "uniform" and (self.stride is None or self.stride < 1):
            raise ValueError("uniform strategy needs stride >= 1")
        if self.kind == "compressive" and not (self.ratio and 0 < self.ratio <= 1):
            raise ValueError("compressive strategy needs ratio in (0, 1]")
        if self.kind == "mpla" and self.thresholds is None:
            raise ValueError("mpla strategy needs thresholds")
        if self.kind not in ("conventional", "uniform", "compressive", "mpla"):
            raise ValueError(f"unknown strategy {self.kind!r}")

    @classmethod
    def conventional(cls):
        return cls("conventional")

    @classmethod
    def uniform(cls, stride: int):
        return cls("uniform", stride=int(stride))

    @classmethod
    def compressive(cls, ratio: float, seed: int = 0):
        return cls("compressive", ratio=float(ratio), seed=int(seed))

    @classmethod
    def mpla(cls, thresholds: ThresholdConfig):
        return cls("mpla", thresholds=thresholds)

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.stride is not None:
            out["stride"] = self.stride
        if self.ratio is not None:
            out["ratio"] = self.ratio
            out["seed"] = self.seed
        if self.thresholds is not None:
            out["epsilons"] = list(self.thresholds.epsilons)
            out["K"] = self.thresholds.K
        return out

    def select(self, values: np.ndarray, vehicle_id: int) -> tuple[np.ndarray, np.ndarray]:
        """Emitted row positions (0-based) and their segment-opening flags."""
        n = len(values)
        if self.kind == "conventional" or n < 2:
            idx = np.arange(n)
        elif self.kind == "uniform":
            idx = uniform_indices(n, self.stride) - 1
        elif self.kind == "compressive":
            idx = np.flatnonzero(bernoulli_mask(n, self.ratio, [self.seed, int(vehicle_id)]))
        else:
            idx = np.flatnonzero(encode_flags(values, self.thresholds))
            return idx, segment_openings(idx)
        return idx, np.ones(len(idx), dtype=bool)


class Obu:
    """FIFO on-board buffer; the oldest record is dropped when full."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.buf: deque = deque()
        self.evicted = 0

    def record(self, item) -> None:
        if len(self.buf) == self.capacity:
            self.buf.popleft()
            self.evicted += 1
        self.buf.append(item)

    def flush(self) -> tuple[list, int]:
        out, ev = list(self.buf), self.evicted
        self.buf.clear()
        self.evicted = 0
        return out, ev


def obu_record(obu: Obu, sample) -> Obu:
    obu.record(sample)
    return obu


@dataclass
class Upload:
    """Contents of one OBU flush at an RSU."""

    vehicle: int
    rsu: int                 # 1-based mile marker
    tick: int                # crossing tick
    ticks: np.ndarray
    values: np.ndarray
    opens: np.ndarray
    evicted: int


@dataclass
class SimResult:
    truth: GroundTruth
    connected: np.ndarray            # bool per vehicle (aligned with truth.ids)
    strategy: Strategy
    capacity: int | None
    uploads: list[Upload]
    recorded: int                    # samples seen by connected vehicles
    emitted: int                     # samples passed by the strategy into the OBU

    @property
    def collection_ratio(self) -> float:
        return self.emitted / self.recorded if self.recorded else math.nan

    def rsu_logs(self) -> dict[int, list[Upload]]:
        logs: dict[int, list[Upload]] = {r: [] for r in range(1, self.truth.cfg.n_sections + 1)}
        for u in self.uploads:
            logs[u.rsu].append(u)
        return logs


def assign_connected(truth: GroundTruth, penetration: float, seed: int) -> np.ndarray:
    """Connected iff a per-vehicle uniform draw is below ``penetration``.

    The draws depend only on the seed, so connected sets are nested across
    penetration levels.
    """
    if not 0 <= penetration <= 1:
        raise ValueError("penetration must be in [0, 1]")
    u = np.random.default_rng([seed, 1]).random(truth.n_vehicles)
    return u < penetration


def rsu_crossings(pos: np.ndarray, cfg: FreewayConfig) -> list[tuple[int, int]]:
    """(rsu number, row index of the first sample at or past it)."""
    out = []
    for r in range(1, cfg.n_sections + 1):
        hit = np.flatnonzero(pos >= r * cfg.section_length - 1e-9)
        if len(hit):
            out.append((r, int(hit[0])))
    return out


def collect(truth: GroundTruth, connected: np.ndarray, strategy: Strategy,
            capacity: int | None) -> SimResult:
    """Replay each connected vehicle's samples through its strategy and OBU."""
    if capacity is not None and capacity < 1:
        raise ValueError("obu capacity must be >= 1")
    cfg = truth.cfg
    uploads: list[Upload] = []
    recorded = emitted = 0
    for k in np.flatnonzero(connected):
        vid = int(truth.ids[k])
        ticks, vals = truth.samples(k)
        pos = truth.pos[truth.vehicle(k)]
        idx, opens = strategy.select(vals, vid)
        recorded += len(ticks)
        emitted += len(idx)
        lo = 0
        for rsu, c in rsu_crossings(pos, cfg):
            hi = int(np.searchsorted(idx, c, side="right"))
            n_win = hi - lo
            keep0 = hi - n_win if capacity is None else max(lo, hi - capacity)
            sel = idx[keep0:hi]
            uploads.append(Upload(vid, rsu, int(ticks[c]), ticks[sel], vals[sel],
                                  opens[keep0:hi], keep0 - lo))
            lo = hi
    return SimResult(truth, connected, strategy, capacity, uploads, recorded, emitted)


def run_sim(cfg: FreewayConfig, penetration: float, strategy: Strategy,
            obu_capacity: int | None, seed: int, truth: GroundTruth | None = None) -> SimResult:
    """Simulate (or reuse) the physics for ``seed`` and collect data with ``strategy``."""
    if truth is None:
        truth = simulate_physics(cfg, seed)
    connected = assign_connected(truth, penetration, seed)
    return collect(truth, connected, strategy, obu_capacity)


# --- outputs -----------------------------------------------------------------

def write_trajectories(truth: GroundTruth, path, every: int = 1) -> None:
    """Ground-truth dump (t, vehicle id, lane, position m, speed m/s)."""
    sel = truth.tick % every == 0
    with open(path, "w") as fh:
        fh.write("t,vehicle_id,lane,position_m,speed_mps\n")
        for t, i, ln, p, s in zip(truth.tick[sel], truth.vid[sel], truth.lane[sel],
                                  truth.pos[sel], truth.speed[sel]):
            fh.write(f"{t / 10:.1f},{i},{ln},{p!r},{s!r}\n")


def write_uploads(res: SimResult, out_dir) -> list[Path]:
    """One CSV per RSU: upload time, vehicle, sample time, values, segment-opening flag."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for rsu, ups in res.rsu_logs().items():
        p = out_dir / f"rsu_{rsu}.csv"
        with p.open("w") as fh:
            fh.write("upload_t,vehicle_id,t,speed,latitude,longitude,opens,evicted\n")
            for u in ups:
                for tk, row, op in zip(u.ticks, u.values, u.opens):
                    fh.write(f"{u.tick / 10:.1f},{u.vehicle},{tk / 10:.1f},"
                             f"{row[0]!r},{row[1]!r},{row[2]!r},{int(op)},{u.evicted}\n")
        paths.append(p)
    return paths


def speed_field(truth: GroundTruth, dx: float = 100.0, dt_s: float = 10.0) -> list[dict]:
    """Time-space mean-speed grid (one row per cell) for a time-space diagram."""
    cfg = truth.cfg
    t = truth.tick * cfg.time_step
    inside = truth.pos < cfg.length
    xi = (truth.pos[inside] // dx).astype(np.int64)
    ti = (t[inside] // dt_s).astype(np.int64)
    nx = int(math.ceil(cfg.length / dx))
    key = ti * nx + xi
    sums = np.bincount(key, weights=truth.speed[inside])
    cnt = np.bincount(key)
    rows = []
    for kk in np.flatnonzero(cnt):
        rows.append({"t": float((kk // nx) * dt_s), "x": float((kk % nx) * dx),
                     "speed": float(sums[kk] / cnt[kk]), "n": int(cnt[kk])})
    return rows
