"""Section travel times: ground truth, estimation from uploaded data, relative error.

The estimator averages, over the 0.1 s steps of a period, the mean speed of
the connected vehicles located in a section, and converts it to a travel time
as section length / mean speed. Steps with no vehicle in the section are
skipped. Section membership comes from the reconstructed position, never
from ground truth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import BLOCK_LEN, BpSolverConfig, bp_masked_dct, block_bounds
from .mpla import decode_values
from .sim import (FreewayConfig, GroundTruth, SimResult, Strategy, assign_connected, collect,
                  position_from_lon, simulate_physics, to_samples)
from .transforms import dct_matrix
from .types import ThresholdConfig


@dataclass
class SectionPeriodGrid:
    """``values[i, j]`` is section i+1, analysis period j+2; NaN marks a flagged cell."""

    values: np.ndarray
    counts: np.ndarray

    @property
    def flagged(self) -> np.ndarray:
        return ~np.isfinite(self.values)


def _analysis_periods(cfg: FreewayConfig):
    first = int(round(cfg.warmup / cfg.period))
    return first, cfg.n_periods - first


def exact_travel_time(truth: GroundTruth) -> SectionPeriodGrid:
    """Mean over vehicles of (section exit - entry time), attributed by entry period."""
    cfg = truth.cfg
    first, n_per = _analysis_periods(cfg)
    S = cfg.n_sections
    sums = np.zeros((S, n_per))
    cnt = np.zeros((S, n_per), dtype=np.int64)
    dt = cfg.time_step
    for k in range(truth.n_vehicles):
        s = truth.vehicle(k)
        pos = truth.pos[s]
        t = truth.tick[s] * dt
        bounds = np.arange(S + 1) * cfg.section_length
        cross = _crossing_times(pos, t, bounds)
        for i in range(S):
            t_in, t_out = cross[i], cross[i + 1]
            if math.isnan(t_in) or math.isnan(t_out):
                continue
            j = int(t_in // cfg.period) - first
            if 0 <= j < n_per:
                sums[i, j] += t_out - t_in
                cnt[i, j] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(cnt > 0, sums / np.maximum(cnt, 1), np.nan)
    return SectionPeriodGrid(vals, cnt)


def _crossing_times(pos, t, bounds):
    """Time at which ``pos`` (non-decreasing) first reaches each bound, linearly
    interpolated between steps; NaN if never reached."""
    out = np.full(len(bounds), np.nan)
    for bi, b in enumerate(bounds):
        hit = int(np.searchsorted(pos, b, side="left"))
        if hit >= len(pos):
            continue
        if hit == 0:
            out[bi] = t[0]
            continue
        p0, p1 = pos[hit - 1], pos[hit]
        out[bi] = t[hit - 1] + (b - p0) / (p1 - p0) * (t[hit] - t[hit - 1])
    return out


# --- operation-center reconstruction -----------------------------------------

@dataclass
class Coverage:
    """Reconstructed per-step state of connected vehicles, concatenated by vehicle."""

    vehicle: np.ndarray
    tick: np.ndarray
    speed: np.ndarray
    position: np.ndarray
    nonconverged: int = 0
    empty_blocks: int = 0


def _runs(uploads):
    """Group a vehicle's uploads into runs of contiguous emission streams."""
    runs = []
    for u in uploads:
        if not runs or u.evicted > 0:
            runs.append([u])
        else:
            runs[-1].append(u)
    return runs


def reconstruct(res: SimResult, bp_cfg: BpSolverConfig | None = None) -> Coverage:
    """Rebuild what the operation center knows about every connected vehicle."""
    kind = res.strategy.kind
    by_vehicle: dict[int, list] = {}
    for u in res.uploads:
        by_vehicle.setdefault(u.vehicle, []).append(u)

    pieces = []          # (vehicle, ticks, values (n, 3)) in vehicle order
    cs_jobs = []         # (piece index, observed mask, values)
    for vid in sorted(by_vehicle):
        ups = sorted(by_vehicle[vid], key=lambda u: u.rsu)
        for run in _runs(ups):
            ticks = np.concatenate([u.ticks for u in run])
            vals = np.concatenate([u.values for u in run]).reshape(len(ticks), -1)
            opens = np.concatenate([u.opens for u in run])
            if len(ticks) == 0:
                continue
            if kind == "conventional":
                pieces.append((vid, ticks, vals))
            elif kind == "uniform":
                grid = np.arange(ticks[0], ticks[-1] + 1)
                rec = np.column_stack([np.interp(grid, ticks, vals[:, j]) for j in range(vals.shape[1])])
                pieces.append((vid, grid, rec))
            elif kind == "compressive":
                grid = np.arange(ticks[0], ticks[-1] + 1)
                observed = np.zeros(len(grid), dtype=bool)
                observed[ticks - ticks[0]] = True
                cs_jobs.append((len(pieces), observed, vals))
                pieces.append((vid, grid, None))
            else:
                first_open = np.flatnonzero(opens)
                if len(first_open) == 0:
                    continue
                f = first_open[0]
                ticks, vals = ticks[f:], vals[f:]
                end = run[-1].tick
                grid = np.arange(ticks[0], end + 1)
                rec = decode_values(ticks - ticks[0] + 1, vals, len(grid))
                pieces.append((vid, grid, rec))

    nonconv = empty = 0
    if cs_jobs:
        recs, nonconv, empty = _cs_many([(o, v) for _, o, v in cs_jobs],
                                        bp_cfg or BpSolverConfig())
        for (pi, _, _), rec in zip(cs_jobs, recs):
            vid, grid, _ = pieces[pi]
            pieces[pi] = (vid, grid, rec)

    if not pieces:
        z = np.empty(0)
        return Coverage(z.astype(np.int64), z.astype(np.int64), z, z, nonconv, empty)
    return Coverage(
        np.concatenate([np.full(len(g), v, dtype=np.int64) for v, g, _ in pieces]),
        np.concatenate([g for _, g, _ in pieces]).astype(np.int64),
        np.concatenate([r[:, 0] for _, _, r in pieces]),
        position_from_lon(np.concatenate([r[:, 2] for _, _, r in pieces])),
        nonconv, empty,
    )


def _cs_many(signals, cfg: BpSolverConfig, block_len: int = BLOCK_LEN):
    """Basis-pursuit recovery for many (observed mask, observed values) signals at once."""
    outs = [np.zeros((len(o), v.shape[1])) for o, v in signals]
    jobs: dict[int, list] = {}
    empty = 0
    for si, (obs, vals) in enumerate(signals):
        full = np.zeros((len(obs), vals.shape[1]))
        full[obs] = vals
        for a, b in block_bounds(len(obs), block_len):
            if not obs[a:b].any():
                empty += 1
                continue
            jobs.setdefault(b - a, []).append((si, a, b, obs[a:b], full[a:b]))
    nonconv = 0
    for n, items in jobs.items():
        d = items[0][4].shape[1]
        masks = np.repeat(np.stack([it[3] for it in items]), d, axis=0)
        yhat = np.concatenate([it[4].T for it in items])
        alpha, conv = bp_masked_dct(masks, yhat, cfg)
        nonconv += int((~conv).sum())
        sig = alpha @ dct_matrix(n)
        for k, (si, a, b, _, _) in enumerate(items):
            outs[si][a:b] = sig[k * d:(k + 1) * d].T
    return outs, nonconv, empty


def ground_truth_coverage(truth: GroundTruth) -> Coverage:
    """Every vehicle's exact per-step state, in the same layout as ``reconstruct``."""
    speed = truth.speed.astype(np.float64)
    vals = to_samples(truth.pos, truth.speed, truth.lane)
    return Coverage(truth.vid.astype(np.int64), truth.tick.astype(np.int64), speed,
                    position_from_lon(vals[:, 2]))


# --- estimation --------------------------------------------------------------

@dataclass
class Estimate:
    grid: SectionPeriodGrid
    mean_speed: np.ndarray


def estimate_travel_time(cov: Coverage, cfg: FreewayConfig) -> Estimate:
    first, n_per = _analysis_periods(cfg)
    S = cfg.n_sections
    steps_per_period = int(round(cfg.period / cfg.time_step))
    k0 = first * steps_per_period
    n_steps = n_per * steps_per_period
    sec = np.floor(cov.position / cfg.section_length)
    sel = (cov.position >= 0) & (sec < S) & (cov.tick >= k0) & (cov.tick < k0 + n_steps)
    sec = sec[sel].astype(np.int64)
    step = cov.tick[sel] - k0
    key = sec * n_steps + step
    sums = np.bincount(key, weights=cov.speed[sel], minlength=S * n_steps)
    cnt = np.bincount(key, minlength=S * n_steps)
    hit = cnt > 0
    step_mean = np.zeros_like(sums)
    step_mean[hit] = sums[hit] / cnt[hit]
    cell = (np.arange(S * n_steps) // n_steps) * n_per + (np.arange(S * n_steps) % n_steps) // steps_per_period
    csum = np.bincount(cell[hit], weights=step_mean[hit], minlength=S * n_per).reshape(S, n_per)
    ccnt = np.bincount(cell[hit], minlength=S * n_per).reshape(S, n_per)
    with np.errstate(invalid="ignore", divide="ignore"):
        vbar = np.where(ccnt > 0, csum / np.maximum(ccnt, 1), np.nan)
        tt = np.where(vbar > 0, cfg.section_length / vbar, np.nan)
    return Estimate(SectionPeriodGrid(tt, ccnt), vbar)


@dataclass
class RelativeError:
    value: float
    used: int
    flagged: int

    @property
    def undefined(self) -> bool:
        return self.used == 0


def relative_error(estimate: SectionPeriodGrid | np.ndarray, exact: SectionPeriodGrid | np.ndarray) -> RelativeError:
    """Mean of |est - exact| / exact over cells where both are defined."""
    est = np.asarray(getattr(estimate, "values", estimate), dtype=np.float64)
    ref = np.asarray(getattr(exact, "values", exact), dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError("grids are not aligned")
    ok = np.isfinite(est) & np.isfinite(ref) & (ref > 0)
    if not ok.any():
        return RelativeError(math.nan, 0, int(est.size))
    e = np.abs(est[ok] - ref[ok]) / ref[ok]
    return RelativeError(float(e.mean()), int(ok.sum()), int(est.size - ok.sum()))


def reference_travel_time(truth: GroundTruth) -> SectionPeriodGrid:
    """The speed-based estimator applied to every vehicle's exact trajectory."""
    return estimate_travel_time(ground_truth_coverage(truth), truth.cfg).grid


# --- experiments ---------------------------------------------------------------

SCENARIO_16 = (2.0, 2e-4, 2e-4)
STRATEGIES = ("mpla", "uniform", "compressive", "conventional")


@dataclass
class ExperimentRow:
    strategy: str
    parameter: str
    value: float
    seed: int
    e_r: float
    flagged: int
    e_r_vs_vehicle_mean: float
    ratio: float
    nonconverged: int = 0

    def as_dict(self):
        return self.__dict__.copy()


@dataclass
class Matched:
    mpla_ratio: float
    stride: int
    cs_ratio: float

    @property
    def uniform_ratio_target_gap(self) -> float:
        return 1 / self.stride - self.mpla_ratio


def matched_strategies(truth: GroundTruth, connected: np.ndarray, K: int, seed: int,
                       eps=SCENARIO_16):
    """MPLA at the given thresholds, baselines matched to its realised ratio."""
    th = ThresholdConfig(eps, K)
    mp = Strategy.mpla(th)
    probe = collect(truth, connected, mp, None)
    ratio = probe.collection_ratio
    stride = max(1, int(round(1 / ratio)))
    strategies = {
        "mpla": mp,
        "uniform": Strategy.uniform(stride),
        "compressive": Strategy.compressive(ratio, seed),
        "conventional": Strategy.conventional(),
    }
    return strategies, Matched(ratio, stride, ratio)


@dataclass
class ExperimentResult:
    rows: list[ExperimentRow] = field(default_factory=list)
    matched: list[dict] = field(default_factory=list)

    def mean_table(self) -> dict[tuple[str, float], float]:
        acc: dict[tuple[str, float], list[float]] = {}
        for r in self.rows:
            acc.setdefault((r.strategy, r.value), []).append(r.e_r)
        return {k: float(np.mean(v)) for k, v in acc.items()}

    def mean_rows(self) -> list[dict]:
        """Tidy per-(strategy, value) means over seeds, in first-seen order."""
        acc: dict[tuple[str, float], list[ExperimentRow]] = {}
        for r in self.rows:
            acc.setdefault((r.strategy, r.value), []).append(r)
        return [{"strategy": k[0], "parameter": rs[0].parameter, "value": k[1],
                 "e_r": float(np.mean([r.e_r for r in rs])),
                 "e_r_vs_vehicle_mean": float(np.mean([r.e_r_vs_vehicle_mean for r in rs])),
                 "ratio": float(np.mean([r.ratio for r in rs])),
                 "flagged": sum(r.flagged for r in rs), "seeds": len(rs)}
                for k, rs in acc.items()]

    @property
    def nonconverged(self) -> int:
        return sum(r.nonconverged for r in self.rows)


def _score(truth, connected, strat, capacity, refs):
    res = collect(truth, connected, strat, capacity)
    cov = reconstruct(res)
    est = estimate_travel_time(cov, truth.cfg).grid
    ref, exact = refs
    return relative_error(est, ref), relative_error(est, exact), res.collection_ratio, cov.nonconverged


def _seed_cells(cfg, seed, cells, strategies, K, truth=None):
    truth = truth if truth is not None else simulate_physics(cfg, seed)
    refs = (reference_travel_time(truth), exact_travel_time(truth))
    rows, matched = [], []
    for pname, value, pen, cap in cells:
        connected = assign_connected(truth, pen, seed)
        strats, m = matched_strategies(truth, connected, K, seed)
        matched.append({"seed": seed, "parameter": pname, "value": value,
                        "mpla_ratio": m.mpla_ratio, "stride": m.stride,
                        "uniform_ratio": 1 / m.stride, "cs_ratio": m.cs_ratio})
        for name in strategies:
            er, ev, ratio, nonconv = _score(truth, connected, strats[name], cap, refs)
            rows.append(ExperimentRow(name, pname, value, seed, er.value, er.flagged,
                                      ev.value, ratio, nonconv))
    return rows, matched


def _run_cells(cfg, seeds, cells, strategies, K, physics_cache=None, jobs=1):
    """cells: list of (parameter name, value, penetration, capacity).

    Seeds run independently; results are merged in seed order whatever ``jobs`` is.
    """
    cache = physics_cache or {}
    if jobs > 1 and len(seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(min(jobs, len(seeds))) as ex:
            parts = list(ex.map(_seed_cells, [cfg] * len(seeds), seeds, [cells] * len(seeds),
                                [strategies] * len(seeds), [K] * len(seeds),
                                [cache.get(s) for s in seeds]))
    else:
        parts = [_seed_cells(cfg, s, cells, strategies, K, cache.get(s)) for s in seeds]
    out = ExperimentResult()
    for rows, matched in parts:
        out.rows.extend(rows)
        out.matched.extend(matched)
    return out


def capacity_experiment(cfg: FreewayConfig, capacities=(30, 50, 100, 300), seeds=(1, 2, 3, 4, 5),
                        penetration: float = 0.5, strategies=STRATEGIES, K: int = 50,
                        physics_cache=None, jobs: int = 1) -> ExperimentResult:
    cells = [("capacity", c, penetration, c) for c in capacities]
    return _run_cells(cfg, seeds, cells, strategies, K, physics_cache, jobs)


def penetration_experiment(cfg: FreewayConfig, penetrations=(0.25, 0.5, 0.75, 1.0),
                           seeds=(1, 2, 3, 4, 5), capacity: int = 50, strategies=STRATEGIES,
                           K: int = 50, physics_cache=None, jobs: int = 1) -> ExperimentResult:
    cells = [("penetration", p, p, capacity) for p in penetrations]
    return _run_cells(cfg, seeds, cells, strategies, K, physics_cache, jobs)
