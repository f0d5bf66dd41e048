"""Error measures, collection-ratio accounting and the threshold-scenario sweep."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mpla import encode_flags
from .types import ThresholdConfig, Trip

METERS_PER_DEGREE = 111_111.0

SPEED_THRESHOLDS = (0.5, 1.0, 1.5, 2.0)           # m/s
COORD_THRESHOLDS = (0.5e-4, 1e-4, 1.5e-4, 2e-4)   # degrees, lat and lon alike

# published ratios from 10,000 field trips; shown beside sweep output, never asserted
REFERENCE_RATIOS = {
    1: 0.181, 2: 0.151, 3: 0.142, 4: 0.137, 5: 0.130, 6: 0.096, 7: 0.085, 8: 0.079,
    9: 0.114, 10: 0.078, 11: 0.067, 12: 0.061, 13: 0.106, 14: 0.070, 15: 0.057, 16: 0.052,
}


def scenario_grid() -> list[tuple[int, tuple[float, float, float]]]:
    """Scenario ids 1..16; speed threshold varies fastest."""
    out = []
    sid = 1
    for c in COORD_THRESHOLDS:
        for v in SPEED_THRESHOLDS:
            out.append((sid, (v, c, c)))
            sid += 1
    return out


def scenario_thresholds(sid: int, K: int) -> ThresholdConfig:
    return ThresholdConfig(dict(scenario_grid())[sid], K)


@dataclass
class ErrorSummary:
    series: np.ndarray
    median: float
    linf: float

    @classmethod
    def of(cls, series) -> "ErrorSummary":
        s = np.asarray(series, dtype=np.float64)
        if len(s) == 0:
            return cls(s, math.nan, math.nan)
        return cls(s, float(np.median(s)), float(np.max(s)))


@dataclass
class ErrorReport:
    speed: ErrorSummary
    trajectory: ErrorSummary
    relative_l2: float
    collection_ratio: float
    flags: list[str] = field(default_factory=list)

    def row(self) -> dict:
        return {
            "collection_ratio": self.collection_ratio,
            "speed_median": self.speed.median,
            "speed_linf": self.speed.linf,
            "traj_median_m": self.trajectory.median,
            "traj_linf_m": self.trajectory.linf,
            "speed_rel_l2": self.relative_l2,
        }


def _check(original, approx):
    a = original.values if isinstance(original, Trip) else np.asarray(original, dtype=np.float64)
    b = approx.values if isinstance(approx, Trip) else np.asarray(approx, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def speed_error(original, approx, dim: int = 0) -> ErrorSummary:
    a, b = _check(original, approx)
    return ErrorSummary.of(np.abs(a[:, dim] - b[:, dim]))


def trajectory_error(original, approx, lat_dim: int = 1, lon_dim: int = 2,
                     meters_per_degree: float = METERS_PER_DEGREE) -> ErrorSummary:
    """Euclidean location error in meters, using one fixed factor on both axes."""
    a, b = _check(original, approx)
    dlat = (a[:, lat_dim] - b[:, lat_dim]) * meters_per_degree
    dlon = (a[:, lon_dim] - b[:, lon_dim]) * meters_per_degree
    return ErrorSummary.of(np.hypot(dlat, dlon))


def relative_l2(original, approx) -> float:
    """||x - x~|| / ||x||; NaN when the original has zero norm."""
    x = np.asarray(original, dtype=np.float64).ravel()
    y = np.asarray(approx, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError("length mismatch")
    nx = np.linalg.norm(x)
    if nx == 0:
        return math.nan
    return float(np.linalg.norm(x - y) / nx)


def error_report(originals: Sequence[Trip], approxes: Sequence[Trip], n_transmitted: int) -> ErrorReport:
    """Corpus-level report; error series are concatenated across trips."""
    sp = np.concatenate([speed_error(o, a).series for o, a in zip(originals, approxes)])
    tr = np.concatenate([trajectory_error(o, a).series for o, a in zip(originals, approxes)])
    x = np.concatenate([o.values[:, 0] for o in originals])
    y = np.concatenate([a.values[:, 0] for a in approxes])
    rl2 = relative_l2(x, y)
    total = sum(o.N for o in originals)
    flags = ["relative_l2_undefined"] if math.isnan(rl2) else []
    return ErrorReport(ErrorSummary.of(sp), ErrorSummary.of(tr), rl2, n_transmitted / total, flags)


# --- scenario sweep ----------------------------------------------------------

HIST_BINS = np.linspace(0.0, 1.0, 51)


@dataclass
class ScenarioRow:
    scenario: int
    eps_speed: float
    eps_lat: float
    eps_lon: float
    mean_ratio: float
    histogram: list[int]
    ratios: np.ndarray = field(repr=False, default=None)


@dataclass
class ScenarioTable:
    K: int
    rows: list[ScenarioRow]
    time_of_day: list[dict] = field(default_factory=list)

    def mean_ratios(self) -> dict[int, float]:
        return {r.scenario: r.mean_ratio for r in self.rows}


def trip_ratios(trips: Sequence[Trip], cfg: ThresholdConfig) -> np.ndarray:
    return np.array([encode_flags(t.values, cfg).sum() / t.N for t in trips])


def sweep_scenarios(corpus: Sequence[Trip], K: int, scenarios=None, jobs: int = 1) -> ScenarioTable:
    """Run the encoder on every trip under every threshold scenario.

    The mean ratio is the mean of per-trip ratios. Trips whose first
    timestamp falls in hour h of the day also feed a ratio-by-hour table.
    """
    if not corpus:
        raise ValueError("empty corpus")
    grid = [(sid, eps) for sid, eps in scenario_grid() if scenarios is None or sid in scenarios]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as ex:
            all_ratios = list(ex.map(trip_ratios, [corpus] * len(grid),
                                     [ThresholdConfig(eps, K) for _, eps in grid]))
    else:
        all_ratios = [trip_ratios(corpus, ThresholdConfig(eps, K)) for _, eps in grid]

    rows = []
    for (sid, eps), ratios in zip(grid, all_ratios):
        hist, _ = np.histogram(ratios, bins=HIST_BINS)
        rows.append(ScenarioRow(sid, *eps, float(np.mean(ratios)), hist.tolist(), ratios))

    hours = np.array([(int(t.ticks[0]) // 10 // 3600) % 24 for t in corpus])
    tod = []
    for row in rows:
        for h in np.unique(hours):
            sel = hours == h
            tod.append({"scenario": row.scenario, "hour": int(h), "trips": int(sel.sum()),
                        "mean_ratio": float(row.ratios[sel].mean())})
    return ScenarioTable(K, rows, tod)


def dominates(a: tuple, b: tuple) -> bool:
    """True when every threshold of ``a`` is at least as loose as ``b``."""
    return all(x >= y for x, y in zip(a, b))


def partial_order_inversions(table: ScenarioTable) -> list[tuple[int, int]]:
    """Pairs (A, B) where A's thresholds dominate B's yet A collects more."""
    bad = []
    for ra in table.rows:
        for rb in table.rows:
            ea = (ra.eps_speed, ra.eps_lat, ra.eps_lon)
            eb = (rb.eps_speed, rb.eps_lat, rb.eps_lon)
            if ra is not rb and dominates(ea, eb) and ra.mean_ratio > rb.mean_ratio:
                bad.append((ra.scenario, rb.scenario))
    return bad
