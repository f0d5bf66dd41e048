"""Uniform sampling and compressive sampling (Bernoulli selection + basis pursuit).

Basis pursuit,

    min ||a||_1  s.t.  Theta a = y,

has two solvers. The default is a two-phase tableau simplex on the split form
a = p - q, p, q >= 0, which is exact and fast when Theta has few rows (a
handful of samples per block). The alternative is ADMM: a projection onto the
affine constraint set, soft thresholding and a scaled dual update, followed by
an optional polish that re-fits the detected support by least squares and is
kept only if feasible and no worse in l1. Both normalise by ||y|| first.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._compat import njit
from .transforms import dct_matrix
from .types import Transmission, Trip

log = logging.getLogger(__name__)

BLOCK_LEN = 200


# --- uniform -----------------------------------------------------------------

def uniform_indices(N: int, stride: int) -> np.ndarray:
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    idx = np.arange(1, N + 1, stride, dtype=np.int64)
    if idx[-1] != N:
        idx = np.append(idx, N)
    return idx


def uniform_encode(trip: Trip, stride: int) -> Transmission:
    return Transmission.from_trip(trip, uniform_indices(trip.N, int(stride)),
                                  codec="uniform", stride=int(stride))


def interpolate(indices, values, N: int) -> np.ndarray:
    """Per-dimension linear interpolation on 1..N; holds the edge values outside."""
    idx = np.asarray(indices, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    grid = np.arange(1, N + 1, dtype=np.float64)
    return np.column_stack([np.interp(grid, idx, vals[:, j]) for j in range(vals.shape[1])])


def uniform_decode(tx: Transmission, N: int | None = None, vehicle_id: str = "approx") -> Trip:
    N = tx.N if N is None else int(N)
    if len(tx) == 0:
        raise ValueError("empty transmission")
    if tx.indices[0] != 1:
        raise ValueError("uniform transmission must include index 1")
    values = interpolate(tx.indices, tx.values, N)
    return Trip(vehicle_id, tx.ticks[0] + np.arange(N, dtype=np.int64), values)


# --- compressive selection ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class SelectionMask:
    selected: np.ndarray   # 1-based positions inside the block
    block_len: int
    seed: int


@dataclass
class CsSelection:
    blocks: list[tuple[int, int]]     # 0-based half-open [start, stop) over the trip
    masks: list[SelectionMask]
    tx: Transmission


def block_bounds(N: int, block_len: int = BLOCK_LEN) -> list[tuple[int, int]]:
    return [(s, min(s + block_len, N)) for s in range(0, N, block_len)]


def bernoulli_mask(N: int, ratio: float, seed) -> np.ndarray:
    if not 0 < ratio <= 1:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    return np.random.default_rng(seed).random(N) < ratio


def cs_select(trip: Trip, ratio: float, seed: int, block_len: int = BLOCK_LEN) -> CsSelection:
    keep = bernoulli_mask(trip.N, ratio, seed)
    blocks = block_bounds(trip.N, block_len)
    masks = [SelectionMask(np.flatnonzero(keep[a:b]) + 1, b - a, seed) for a, b in blocks]
    tx = Transmission.from_trip(trip, np.flatnonzero(keep) + 1, codec="cs",
                                ratio=float(ratio), seed=int(seed), block_len=block_len)
    return CsSelection(blocks, masks, tx)


# --- basis pursuit -----------------------------------------------------------

SOLVERS = ("simplex", "admm")


@dataclass(frozen=True)
class BpSolverConfig:
    method: str = "simplex"
    max_iters: int = 5000        # ADMM iterations, or simplex pivots per phase
    abs_tol: float = 1e-8
    rel_tol: float = 1e-6
    penalty: float = 1.0
    polish: bool = True

    def __post_init__(self):
        if self.method not in SOLVERS:
            raise ValueError(f"unknown solver {self.method!r}; choose from {SOLVERS}")
        if self.max_iters <= 0 or self.abs_tol <= 0 or self.rel_tol <= 0 or self.penalty <= 0:
            raise ValueError("solver settings must all be positive")


@dataclass
class BpResult:
    alpha: np.ndarray
    converged: bool
    iterations: int
    residual: float


def _soft(v, k):
    return np.sign(v) * np.maximum(np.abs(v) - k, 0.0)



# Tableau layout: rows 0..M-1 are constraints, row M holds reduced costs;
# columns are p (n), q (n), artificials (M), rhs.
_PIVOT_TOL = 1e-9
_COST_TOL = 1e-10
_PERTURBATIONS = (1e-9, 1e-12, 0.0)


@njit(cache=True)
def _pivot(T, basis, r, c):
    m1, w = T.shape
    piv = T[r, c]
    for k in range(w):
        T[r, k] /= piv
    for i in range(m1):
        if i != r:
            f = T[i, c]
            if f != 0.0:
                for k in range(w):
                    T[i, k] -= f * T[r, k]
    basis[r] = c


@njit(cache=True)
def _run_simplex(T, basis, ncols, max_pivots):
    # Dantzig pricing, smallest basic index on ratio ties
    M = T.shape[0] - 1
    rhs = T.shape[1] - 1
    for it in range(max_pivots):
        c = -1
        best = -_COST_TOL
        for j in range(ncols):
            if T[M, j] < best:
                c = j
                best = T[M, j]
        if c < 0:
            return 0, it
        r = -1
        ratio = np.inf
        for i in range(M):
            if T[i, c] > _PIVOT_TOL:
                q = T[i, rhs] / T[i, c]
                if q < ratio - 1e-14 or (q <= ratio + 1e-14 and r >= 0 and basis[i] < basis[r]):
                    ratio = q
                    r = i
        if r < 0:
            return 2, it
        _pivot(T, basis, r, c)
    return 1, max_pivots


@njit(cache=True)
def _simplex_once(A, b, max_pivots, perturb):
    # one attempt at a given rhs perturbation
    M, n = A.shape
    W = 2 * n + M
    T = np.zeros((M + 1, W + 1))
    basis = np.empty(M, dtype=np.int64)
    sign = np.empty(M)
    for i in range(M):
        sign[i] = 1.0 if b[i] >= 0 else -1.0
        for j in range(n):
            T[i, j] = sign[i] * A[i, j]
            T[i, n + j] = -sign[i] * A[i, j]
        T[i, 2 * n + i] = 1.0
        # a small fixed perturbation of the rhs keeps vertices non-degenerate
        T[i, W] = sign[i] * b[i] + perturb * (0.5 + (0.6180339887498949 * (i + 1)) % 1.0)
        basis[i] = 2 * n + i
    for j in range(W + 1):
        if j < 2 * n or j == W:
            acc = 0.0
            for i in range(M):
                acc += T[i, j]
            T[M, j] = -acc
    status, p1 = _run_simplex(T, basis, 2 * n, max_pivots)
    alpha = np.zeros(n)
    if status != 0:
        return alpha, status, p1
    if -T[M, W] > 1e-9:
        return alpha, 3, p1
    # drive artificials left at zero level out of the basis
    for i in range(M):
        if basis[i] >= 2 * n:
            for j in range(2 * n):
                if abs(T[i, j]) > _PIVOT_TOL:
                    _pivot(T, basis, i, j)
                    break
    # phase 2 reduced costs for unit cost on p and q
    for j in range(W + 1):
        acc = 0.0
        for i in range(M):
            if basis[i] < 2 * n:
                acc += T[i, j]
        T[M, j] = (1.0 if j < 2 * n else 0.0) - acc
    status, p2 = _run_simplex(T, basis, 2 * n, max_pivots)
    z = np.zeros(2 * n)
    for i in range(M):
        if basis[i] < 2 * n:
            z[basis[i]] = T[i, W]
    # re-solve the final basis against the unperturbed data; reduced costs do
    # not depend on the rhs, so a basis that stays primal feasible is optimal
    real = True
    for i in range(M):
        if basis[i] >= 2 * n:
            real = False
    if real:
        B = np.empty((M, M))
        rhs = np.empty(M)
        for i in range(M):
            rhs[i] = sign[i] * b[i]
            for k in range(M):
                j = basis[k]
                col = j if j < n else j - n
                s = 1.0 if j < n else -1.0
                B[i, k] = sign[i] * s * A[i, col]
        zb = np.linalg.solve(B, rhs)
        for k in range(M):
            if zb[k] < -1e-9:
                real = False
        if real:
            for k in range(M):
                z[basis[k]] = max(zb[k], 0.0)
    if not real:
        status = 4
    for j in range(n):
        alpha[j] = z[j] - z[n + j]
    return alpha, status, p1 + p2


@njit(cache=True)
def _simplex_bp(A, b, max_pivots):
    """Returns (alpha, status, pivots); status 0 optimal, 1 pivot cap, >= 2 numerical failure.

    A perturbation that turns out to move the optimal basis (status 4) is
    retried with a smaller one.
    """
    total = 0
    for perturb in _PERTURBATIONS:
        alpha, status, piv = _simplex_once(A, b, max_pivots, perturb)
        total += piv
        if status == 0:
            break
    return alpha, status, total


@njit(cache=True)
def _simplex_masked(psi_t, masks, yhat, max_pivots):
    B, n = masks.shape
    alpha = np.zeros((B, n))
    status = np.zeros(B, dtype=np.int64)
    for k in range(B):
        M = 0
        for j in range(n):
            if masks[k, j]:
                M += 1
        A = np.empty((M, n))
        y = np.empty(M)
        r = 0
        for j in range(n):
            if masks[k, j]:
                A[r] = psi_t[j]
                y[r] = yhat[k, j]
                r += 1
        scale = np.sqrt(np.sum(y * y))
        if M == 0 or scale == 0.0:
            continue
        a, st, _ = _simplex_bp(A, y / scale, max_pivots)
        alpha[k] = a * scale
        status[k] = st
    return alpha, status


def basis_pursuit(theta, y, cfg: BpSolverConfig = BpSolverConfig()) -> BpResult:
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    M, n = theta.shape
    if M < 1 or len(y) != M:
        raise ValueError("theta must be M x N with M >= 1 matching len(y)")
    scale = np.linalg.norm(y)
    if scale == 0:
        return BpResult(np.zeros(n), True, 0, 0.0)
    yn = y / scale
    if cfg.method == "simplex":
        a, status, pivots = _simplex_bp(np.ascontiguousarray(theta), yn, cfg.max_iters)
        res = float(np.linalg.norm(theta @ a - yn))
        return BpResult(a * scale, status == 0, int(pivots), res * scale)

    pinv = np.linalg.pinv(theta)
    P = np.eye(n) - pinv @ theta
    q = pinv @ yn
    rho = cfg.penalty
    x = q.copy()
    z = x.copy()
    u = np.zeros(n)
    converged = False
    sqn = np.sqrt(n)
    it = 0
    for it in range(1, cfg.max_iters + 1):
        x = P @ (z - u) + q
        z_old = z
        z = _soft(x + u, 1.0 / rho)
        u = u + x - z
        r = np.linalg.norm(x - z)
        s = rho * np.linalg.norm(z - z_old)
        eps_pri = sqn * cfg.abs_tol + cfg.rel_tol * max(np.linalg.norm(x), np.linalg.norm(z))
        eps_dual = sqn * cfg.abs_tol + cfg.rel_tol * rho * np.linalg.norm(u)
        if r <= eps_pri and s <= eps_dual:
            converged = True
            break

    alpha = x
    if cfg.polish:
        alpha = _polish(theta, yn, x, z, cfg)
    res = float(np.linalg.norm(theta @ alpha - yn))
    return BpResult(alpha * scale, converged, it, res * scale)


def _polish(theta, y, x, z, cfg):
    zmax = np.max(np.abs(z))
    if zmax == 0:
        return x
    support = np.flatnonzero(np.abs(z) > 1e-6 * zmax)
    if len(support) == 0 or len(support) > theta.shape[0]:
        return x
    sub, *_ = np.linalg.lstsq(theta[:, support], y, rcond=None)
    cand = np.zeros_like(x)
    cand[support] = sub
    tol = cfg.abs_tol * (1 + np.linalg.norm(y))
    if (np.linalg.norm(theta @ cand - y) <= tol
            and np.abs(cand).sum() <= np.abs(x).sum() * (1 + 1e-12)):
        return cand
    return x


def bp_masked_dct(masks: np.ndarray, yhat: np.ndarray, cfg: BpSolverConfig = BpSolverConfig()):
    """Batched basis pursuit for many blocks of the same length n.

    ``masks`` (B, n) bool marks observed samples; ``yhat`` (B, n) holds the
    observed values at masked positions (ignored elsewhere). Each row solves
    min ||a||_1 s.t. (Psi^T a)[mask] = y. Selected rows of an orthonormal
    matrix are orthonormal, so the projection needs no matrix inverse.

    Returns ``(alpha (B, n), converged (B,))``.
    """
    masks = np.asarray(masks, dtype=bool)
    yhat = np.where(masks, np.asarray(yhat, dtype=np.float64), 0.0)
    B, n = masks.shape
    psi = dct_matrix(n)
    if cfg.method == "simplex":
        alpha, status = _simplex_masked(np.ascontiguousarray(psi.T), masks, yhat, cfg.max_iters)
        return alpha, status == 0
    mf = masks.astype(np.float64)

    scale = np.sqrt((yhat ** 2).sum(axis=1))
    nz = scale > 0
    alpha = np.zeros((B, n))
    converged = np.ones(B, dtype=bool)
    if not nz.any():
        return alpha, converged
    rows = np.flatnonzero(nz)
    Y = yhat[rows] / scale[rows, None]
    Mk = mf[rows]
    Q = Y @ psi.T                 # Theta^T y per row, as Psi @ yhat

    rho = cfg.penalty
    sqn = np.sqrt(n)
    X = Q.copy()
    Z = X.copy()
    U = np.zeros_like(X)
    active = np.arange(len(rows))
    done = np.zeros(len(rows), dtype=bool)
    for _ in range(cfg.max_iters):
        V = Z[active] - U[active]
        Xa = V - ((V @ psi) * Mk[active]) @ psi.T + Q[active]
        Za_old = Z[active]
        Za = _soft(Xa + U[active], 1.0 / rho)
        Ua = U[active] + Xa - Za
        X[active], Z[active], U[active] = Xa, Za, Ua
        r = np.linalg.norm(Xa - Za, axis=1)
        s = rho * np.linalg.norm(Za - Za_old, axis=1)
        eps_pri = sqn * cfg.abs_tol + cfg.rel_tol * np.maximum(
            np.linalg.norm(Xa, axis=1), np.linalg.norm(Za, axis=1))
        eps_dual = sqn * cfg.abs_tol + cfg.rel_tol * rho * np.linalg.norm(Ua, axis=1)
        fin = (r <= eps_pri) & (s <= eps_dual)
        done[active[fin]] = True
        active = active[~fin]
        if len(active) == 0:
            break

    if cfg.polish:
        for k in range(len(rows)):
            m = masks[rows[k]]
            theta = psi.T[m]
            X[k] = _polish(theta, Y[k][m], X[k], Z[k], cfg)
    alpha[rows] = X * scale[rows, None]
    converged[rows] = done
    return alpha, converged


@dataclass
class CsDecodeInfo:
    nonconverged: int = 0
    empty_blocks: int = 0
    block_flags: list = field(default_factory=list)


def cs_reconstruct(observed: np.ndarray, values: np.ndarray, N: int,
                   cfg: BpSolverConfig = BpSolverConfig(), block_len: int = BLOCK_LEN):
    """Recover an (N, d) signal from the rows marked in ``observed``.

    Each (block, dimension) pair is an independent basis pursuit problem.
    Blocks with no observed samples come back as zeros and are counted.
    """
    observed = np.asarray(observed, dtype=bool)
    values = np.asarray(values, dtype=np.float64)
    d = values.shape[1]
    full = np.zeros((N, d))
    full[observed] = values
    out = np.zeros((N, d))
    info = CsDecodeInfo()
    by_len: dict[int, list[tuple[int, int]]] = {}
    for a, b in block_bounds(N, block_len):
        if not observed[a:b].any():
            info.empty_blocks += 1
            log.warning("compressive block [%d, %d) has no samples; reconstructing zeros", a, b)
            info.block_flags.append((a, "empty"))
            continue
        by_len.setdefault(b - a, []).append((a, b))
    for n, blocks in by_len.items():
        masks = np.repeat(np.stack([observed[a:b] for a, b in blocks]), d, axis=0)
        yhat = np.concatenate([full[a:b].T for a, b in blocks])
        alpha, conv = bp_masked_dct(masks, yhat, cfg)
        sig = alpha @ dct_matrix(n)       # Psi^T alpha, row form
        for k, (a, b) in enumerate(blocks):
            out[a:b] = sig[k * d:(k + 1) * d].T
            ok = conv[k * d:(k + 1) * d]
            if not ok.all():
                info.nonconverged += int((~ok).sum())
                info.block_flags.append((a, "nonconverged"))
    return out, info


def cs_decode(tx: Transmission, N: int | None = None, cfg: BpSolverConfig = BpSolverConfig(),
              block_len: int | None = None, vehicle_id: str = "approx"):
    """Returns ``(trip, info)``; timestamps are laid on the 0.1 s grid from the first index."""
    N = tx.N if N is None else int(N)
    block_len = int(block_len or tx.meta.get("block_len", BLOCK_LEN))
    observed = np.zeros(N, dtype=bool)
    observed[tx.indices - 1] = True
    values, info = cs_reconstruct(observed, tx.values, N, cfg, block_len)
    t0 = int(tx.ticks[0]) - (int(tx.indices[0]) - 1) if len(tx) else 0
    return Trip(vehicle_id, t0 + np.arange(N, dtype=np.int64), values), info
