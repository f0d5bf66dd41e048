"""Online multidimensional piecewise linear approximation (online-MPLA).

Vehicle side: a linear filter with disjoint segments. Each segment is opened
by a pair of exact samples (X_t, X_t+1) whose difference is the slope; later
samples are skipped while the extrapolation stays within the per-dimension
thresholds and the segment is no longer than K. Operation-center side:
rebuild the skipped samples by the same extrapolation.

Both sides run the recurrence ``approx = approx + delta`` in float64 in the
same order, so the decoded value at a skipped index is bit-identical to the
value the encoder tested against the threshold.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._compat import njit
from .types import Sample, ThresholdConfig, Transmission, Trip



class CorruptTransmission(ValueError):
    pass


class EncoderStateError(RuntimeError):
    pass


@njit(cache=True)
def _encode_flags(X, eps, K):
    N, d = X.shape
    flags = np.zeros(N, dtype=np.bool_)
    flags[0] = True
    flags[1] = True
    approx = X[1].copy()
    delta = X[1] - X[0]
    L = 2
    pred = np.empty(d)
    t = 2
    while t < N:
        violated = L > K
        for i in range(d):
            pred[i] = approx[i] + delta[i]
            if abs(pred[i] - X[t, i]) > eps[i]:
                violated = True
        if violated:
            flags[t] = True
            if t + 1 < N:
                flags[t + 1] = True
                for i in range(d):
                    approx[i] = X[t + 1, i]
                    delta[i] = X[t + 1, i] - X[t, i]
                L = 2
                t += 2
            else:
                t += 1
        else:
            for i in range(d):
                approx[i] = pred[i]
            L += 1
            t += 1
    flags[N - 1] = True
    return flags


@njit(cache=True)
def _decode_kernel(received, payload, N):
    # returns (out, status); status 0 ok, 1 first sample missing, 2 unpaired opening
    d = payload.shape[1]
    out = np.empty((N, d))
    delta = np.zeros(d)
    awaiting = False
    k = 0
    for t in range(N):
        if received[t]:
            for i in range(d):
                out[t, i] = payload[k, i]
            k += 1
            if awaiting:
                for i in range(d):
                    delta[i] = out[t, i] - out[t - 1, i]
                awaiting = False
            else:
                awaiting = True
        else:
            if t == 0:
                return out, 1
            if awaiting:
                return out, 2
            for i in range(d):
                out[t, i] = out[t - 1, i] + delta[i]
    return out, 0


def encode_flags(values: np.ndarray, cfg: ThresholdConfig) -> np.ndarray:
    """Boolean transmit mask over the rows of an (N, d) array."""
    X = np.ascontiguousarray(values, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need an (N, d) array with N >= 2")
    if X.shape[1] != cfg.d:
        raise ValueError(f"trip has d={X.shape[1]} but thresholds have d={cfg.d}")
    return _encode_flags(X, np.asarray(cfg.epsilons, dtype=np.float64), cfg.K)


def mpla_encode(trip: Trip, cfg: ThresholdConfig) -> Transmission:
    flags = encode_flags(trip.values, cfg)
    idx = np.flatnonzero(flags) + 1
    return Transmission.from_trip(trip, idx, codec="mpla",
                                  epsilons=list(cfg.epsilons), K=cfg.K)


def decode_values(indices, payload, N: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if len(idx) and (idx[0] < 1 or idx[-1] > N):
        raise CorruptTransmission(f"indices outside 1..{N}")
    if len(idx) and np.any(np.diff(idx) <= 0):
        raise CorruptTransmission("indices not strictly increasing")
    received = np.zeros(N, dtype=np.bool_)
    received[idx - 1] = True
    out, status = _decode_kernel(received, np.ascontiguousarray(payload, dtype=np.float64), N)
    if status == 1:
        raise CorruptTransmission("first sample of the trip was not received")
    if status == 2:
        raise CorruptTransmission("segment opening without its paired sample")
    return out


def mpla_decode(tx: Transmission, N: int | None = None, cfg: ThresholdConfig | None = None,
                vehicle_id: str = "approx") -> Trip:
    """Rebuild all N samples. Timestamps are reconstructed on the 0.1 s grid."""
    N = tx.N if N is None else int(N)
    if cfg is not None and tx.d != cfg.d:
        raise ValueError(f"transmission has d={tx.d} but thresholds have d={cfg.d}")
    values = decode_values(tx.indices, tx.values, N)
    if len(tx.indices) == 0:
        raise CorruptTransmission("empty transmission")
    t0 = int(tx.ticks[0]) - (int(tx.indices[0]) - 1)
    return Trip(vehicle_id, t0 + np.arange(N, dtype=np.int64), values)


def segment_openings(indices) -> np.ndarray:
    """For a complete MPLA transmission, mark which indices open a segment.

    Every segment is opened by an index whose successor is the paired sample;
    the only exception is a lone final sample.
    """
    idx = np.asarray(indices, dtype=np.int64)
    opens = np.zeros(len(idx), dtype=bool)
    awaiting = False
    prev = None
    for k, i in enumerate(idx):
        if awaiting and i == prev + 1:
            awaiting = False
        else:
            opens[k] = True
            awaiting = True
        prev = i
    return opens


# --- streaming ---------------------------------------------------------------

@dataclass(frozen=True)
class EncoderState:
    cfg: ThresholdConfig
    delta: tuple[float, ...]
    last_approx: tuple[float, ...]
    L: int
    pending: Sample | None = None   # violating sample still waiting for its successor
    last: Sample | None = None
    last_emitted: bool = True

    @classmethod
    def initial(cls, cfg: ThresholdConfig, x1: Sample, x2: Sample):
        """State after the mandatory first pair; returns ``(state, [x1, x2])``."""
        if x1.d != cfg.d or x2.d != cfg.d:
            raise ValueError("sample dimension does not match thresholds")
        delta = tuple(b - a for a, b in zip(x1.values, x2.values))
        return cls(cfg, delta, x2.values, 2, None, x2, True), [x1, x2]


def mpla_stream_step(state: EncoderState | None, x: Sample):
    """Feed one sample; returns ``(new_state, emitted_samples)``."""
    if state is None:
        raise EncoderStateError("encoder not initialised with the first two samples")
    cfg = state.cfg
    if x.d != cfg.d:
        raise ValueError("sample dimension does not match thresholds")

    if state.pending is not None:
        delta = tuple(b - a for a, b in zip(state.pending.values, x.values))
        return replace(state, delta=delta, last_approx=x.values, L=2, pending=None,
                       last=x, last_emitted=True), [x]

    pred = tuple(a + dl for a, dl in zip(state.last_approx, state.delta))
    violated = state.L > cfg.K or any(
        abs(p - v) > e for p, v, e in zip(pred, x.values, cfg.epsilons))
    if violated:
        return replace(state, last_approx=x.values, pending=x, last=x,
                       last_emitted=True), [x]
    return replace(state, last_approx=pred, L=state.L + 1, last=x,
                   last_emitted=False), []


def mpla_stream_finish(state: EncoderState | None):
    """Trip-end rule: the final sample goes out if it has not already."""
    if state is None:
        raise EncoderStateError("encoder not initialised")
    if state.last_emitted:
        return state, []
    return replace(state, last_emitted=True), [state.last]


class MplaEncoder:
    """Push-style wrapper around ``mpla_stream_step`` for one trip."""

    def __init__(self, cfg: ThresholdConfig):
        self.cfg = cfg
        self.state: EncoderState | None = None
        self._first: Sample | None = None

    def push(self, x: Sample) -> list[Sample]:
        if self.state is None:
            if self._first is None:
                self._first = x
                return []
            self.state, out = EncoderState.initial(self.cfg, self._first, x)
            return out
        self.state, out = mpla_stream_step(self.state, x)
        return out

    def finish(self) -> list[Sample]:
        if self.state is None:
            raise EncoderStateError("a trip needs at least two samples")
        self.state, out = mpla_stream_finish(self.state)
        return out


def stream_encode(trip: Trip, cfg: ThresholdConfig) -> Transmission:
    """Fold the streaming encoder over a trip and collect its emissions."""
    enc = MplaEncoder(cfg)
    emitted: list[Sample] = []
    for s in trip.samples():
        emitted.extend(enc.push(s))
    emitted.extend(enc.finish())
    pos = {int(t): i + 1 for i, t in enumerate(trip.ticks)}
    idx = np.array([pos[s.tick] for s in emitted], dtype=np.int64)
    return Transmission(idx, [s.tick for s in emitted],
                        np.array([s.values for s in emitted], dtype=np.float64).reshape(len(emitted), -1),
                        trip.N, {"codec": "mpla", "epsilons": list(cfg.epsilons), "K": cfg.K})
