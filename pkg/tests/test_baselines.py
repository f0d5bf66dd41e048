import itertools
import logging

import numpy as np
import pytest
from scipy.optimize import linprog

from cvcollect.baselines import (BpSolverConfig, basis_pursuit, bernoulli_mask, block_bounds,
                                 bp_masked_dct, cs_decode, cs_reconstruct, cs_select, interpolate,
                                 uniform_decode, uniform_encode, uniform_indices)
from cvcollect.ingest import synth_trip
from cvcollect.metrics import relative_l2
from cvcollect.transforms import dct_matrix
from cvcollect.types import Trip

ADMM = BpSolverConfig(method="admm")


def lp_oracle(theta, y):
    n = theta.shape[1]
    r = linprog(np.ones(2 * n), A_eq=np.hstack([theta, -theta]), b_eq=y, bounds=(0, None),
                method="highs")
    assert r.status == 0
    return r.fun


def trip1(v):
    v = np.asarray(v, dtype=float)
    return Trip("t", np.arange(len(v)), v[:, None])


# --- uniform --------------------------------------------------------------------

def test_uniform_indices_examples():
    assert uniform_indices(7, 2).tolist() == [1, 3, 5, 7]
    assert uniform_indices(10, 3).tolist() == [1, 4, 7, 10]
    assert uniform_indices(9, 1).tolist() == list(range(1, 10))
    with pytest.raises(ValueError):
        uniform_indices(5, 0)


def test_uniform_linear_signal_is_exact():
    tx = uniform_encode(trip1([0, 2, 4, 6]), 2)
    assert tx.indices.tolist() == [1, 3, 4]
    assert uniform_decode(tx).values[:, 0].tolist() == [0, 2, 4, 6]


def test_uniform_spike_is_halved():
    tx = uniform_encode(trip1([0, 0, 10, 0, 0]), 2)
    assert uniform_decode(tx).values[:, 0].tolist() == [0, 5, 10, 5, 0]


def test_uniform_constant_any_stride():
    for stride in (1, 3, 7, 50):
        tx = uniform_encode(trip1(np.full(40, 4.2)), stride)
        assert np.all(uniform_decode(tx).values == 4.2)


def test_interpolate_holds_after_last():
    assert interpolate([1, 3], [[0.0], [2.0]], 5)[:, 0].tolist() == [0, 1, 2, 2, 2]


def test_uniform_trajectory_error_physics_bound():
    trip = synth_trip("random_walk", 2000, 4)
    for stride in (5, 20, 60):
        rec = uniform_decode(uniform_encode(trip, stride))
        d = np.hypot(*(trip.values[:, 1:] - rec.values[:, 1:]).T) * 111_111.0
        vmax = trip.values[:, 0].max()
        assert d.max() <= vmax * stride * 0.1


def test_uniform_decode_errors():
    tx = uniform_encode(trip1([0, 1, 2]), 1)
    from cvcollect.types import Transmission
    with pytest.raises(ValueError):
        uniform_decode(Transmission([2, 3], [1, 2], [[1.0], [2.0]], 3))


# --- selection ------------------------------------------------------------------

def test_bernoulli_ratio_one_and_determinism():
    assert bernoulli_mask(300, 1.0, 5).all()
    a = bernoulli_mask(400, 0.2, 11)
    assert np.array_equal(a, bernoulli_mask(400, 0.2, 11))
    assert 50 < a.sum() < 110
    with pytest.raises(ValueError):
        bernoulli_mask(10, 0.0, 1)


def test_cs_select_blocks():
    sel = cs_select(synth_trip("constant", 250, 0), 0.3, 2)
    assert sel.blocks == [(0, 200), (200, 250)]
    assert [m.block_len for m in sel.masks] == [200, 50]
    assert sel.tx.meta["seed"] == 2
    total = sum(len(m.selected) for m in sel.masks)
    assert total == len(sel.tx)
    assert all(m.selected.min() >= 1 and m.selected.max() <= m.block_len for m in sel.masks)


def test_block_bounds():
    assert block_bounds(400) == [(0, 200), (200, 400)]
    assert block_bounds(7, 3) == [(0, 3), (3, 6), (6, 7)]


# --- basis pursuit --------------------------------------------------------------

@pytest.mark.parametrize("cfg", [BpSolverConfig(), ADMM], ids=["simplex", "admm"])
def test_bp_matches_lp_oracle(cfg):
    for seed in range(40):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 11))
        m = int(rng.integers(1, min(n, 8) + 1))
        theta, y = rng.normal(size=(m, n)), rng.normal(size=m)
        res = basis_pursuit(theta, y, cfg)
        opt = lp_oracle(theta, y)
        assert res.converged
        assert np.abs(res.alpha).sum() <= opt * (1 + 1e-4)
        assert np.abs(theta @ res.alpha - y).max() <= 1e-8


@pytest.mark.parametrize("cfg", [BpSolverConfig(), ADMM], ids=["simplex", "admm"])
def test_bp_square_invertible(cfg, rng):
    theta = rng.normal(size=(5, 5))
    y = rng.normal(size=5)
    assert np.allclose(basis_pursuit(theta, y, cfg).alpha, np.linalg.solve(theta, y), atol=1e-8)


def test_bp_zero_rhs():
    r = basis_pursuit(np.ones((2, 4)), np.zeros(2))
    assert r.converged and not r.alpha.any()


def test_bp_one_sparse_against_exhaustive_search(rng):
    psi = dct_matrix(8)
    for trial in range(20):
        k = int(rng.integers(8))
        a = np.zeros(8)
        a[k] = rng.normal() * 3
        rows = np.sort(rng.choice(8, 6, replace=False))
        theta = psi.T[rows]
        y = theta @ a
        # oracle: best single-column least-squares fit
        fits = []
        for j in range(8):
            c = theta[:, j] @ y / (theta[:, j] @ theta[:, j])
            fits.append((np.linalg.norm(theta[:, j] * c - y), j, c))
        _, j, c = min(fits)
        want = np.zeros(8)
        want[j] = c
        got = basis_pursuit(theta, y).alpha
        assert np.abs(got - want).max() <= 1e-6


def test_sparse_recovery_n200():
    psi = dct_matrix(200)
    bad = 0
    for seed in range(30):
        rng = np.random.default_rng(seed)
        a = np.zeros(200)
        a[rng.choice(200, 5, replace=False)] = rng.normal(size=5)
        rows = np.flatnonzero(rng.random(200) < 0.5)
        got = basis_pursuit(psi.T[rows], psi.T[rows] @ a).alpha
        bad += np.linalg.norm(got - a) > 1e-3 * np.linalg.norm(a)
    assert bad == 0


def test_admm_flags_nonconvergence(rng):
    theta, y = rng.normal(size=(4, 10)), rng.normal(size=4)
    r = basis_pursuit(theta, y, BpSolverConfig(method="admm", max_iters=2, polish=False))
    assert not r.converged


def test_solver_config_validation():
    with pytest.raises(ValueError):
        BpSolverConfig(method="cvx")
    with pytest.raises(ValueError):
        BpSolverConfig(max_iters=0)


@pytest.mark.parametrize("cfg", [BpSolverConfig(), ADMM], ids=["simplex", "admm"])
def test_batched_equals_single(cfg, rng):
    n = 40
    masks = rng.random((6, n)) < 0.3
    masks[:, 0] = True
    Y = rng.normal(size=(6, n))
    alpha, conv = bp_masked_dct(masks, Y, cfg)
    psi = dct_matrix(n)
    for k in range(6):
        single = basis_pursuit(psi.T[masks[k]], Y[k][masks[k]], cfg).alpha
        assert np.abs(np.abs(alpha[k]).sum() - np.abs(single).sum()) <= 1e-6 * np.abs(single).sum()
        assert np.abs(psi.T[masks[k]] @ alpha[k] - Y[k][masks[k]]).max() <= 1e-7


# --- compressive decode -----------------------------------------------------------

def test_cs_three_sparse_block(rng):
    psi = dct_matrix(200)
    a = np.zeros(200)
    a[[0, 5, 17]] = [10.0, -3.0, 1.5]
    x = psi.T @ a
    obs = rng.random(200) < 0.5
    out, info = cs_reconstruct(obs, x[obs][:, None], 200)
    assert relative_l2(x, out[:, 0]) < 1e-4
    assert info.nonconverged == 0


def test_cs_constant_block_near_exact():
    trip = synth_trip("constant", 200, 0)
    tx = cs_select(trip, 0.2, 3).tx
    rec, info = cs_decode(tx, 200)
    assert np.abs(rec.values - trip.values).max() <= 1e-9 * np.abs(trip.values).max()


def test_constant_block_with_very_few_samples_is_not_recovered():
    # a constant is 1-sparse, but its DC atom (1/sqrt(N) per sample) is not the
    # cheapest l1 fit when only a handful of samples are kept
    psi_t = dct_matrix(200).T
    one = basis_pursuit(psi_t[[57]], np.array([15.0]))
    assert np.flatnonzero(one.alpha).tolist() == [160]
    assert np.abs(one.alpha).sum() == pytest.approx(150.0)
    trip = synth_trip("constant", 200, 0)
    tx = cs_select(trip, 0.05, 3).tx
    theta = psi_t[tx.indices - 1]
    r = basis_pursuit(theta, tx.values[:, 0])
    assert np.abs(r.alpha).sum() == pytest.approx(lp_oracle(theta, tx.values[:, 0]), rel=1e-9)
    assert np.abs(r.alpha).sum() < 15.0 * np.sqrt(200)


def test_cs_empty_block_gives_zeros_and_warns(caplog):
    N = 250
    obs = np.zeros(N, dtype=bool)
    obs[:200:3] = True
    vals = np.ones((obs.sum(), 1))
    with caplog.at_level(logging.WARNING):
        out, info = cs_reconstruct(obs, vals, N)
    assert info.empty_blocks == 1
    assert not out[200:].any()
    assert "no samples" in caplog.text


def test_cs_ratio_one_is_identity():
    trip = synth_trip("random_walk", 450, 7)
    tx = cs_select(trip, 1.0, 0).tx
    rec, _ = cs_decode(tx, trip.N)
    assert np.abs(rec.values - trip.values).max() <= 1e-8 * np.abs(trip.values).max()


def test_cs_deterministic():
    trip = synth_trip("random_walk", 600, 8)
    a, _ = cs_decode(cs_select(trip, 0.2, 4).tx)
    b, _ = cs_decode(cs_select(trip, 0.2, 4).tx)
    assert np.array_equal(a.values, b.values)
