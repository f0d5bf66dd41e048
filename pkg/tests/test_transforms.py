import itertools
import math

import numpy as np
import pytest

from cvcollect.transforms import dct_compress, dct_forward, dct_inverse, dct_matrix, dct_truncate


def direct_dct(x):
    """Double loop over the cosine sum, no matrices."""
    N = len(x)
    out = []
    for i in range(1, N + 1):
        lam = 1 / math.sqrt(2) if i == 1 else 1.0
        s = sum(x[j - 1] * math.cos(math.pi * (2 * j - 1) * (i - 1) / (2 * N)) for j in range(1, N + 1))
        out.append(math.sqrt(2 / N) * lam * s)
    return np.array(out)


def direct_idct(a):
    N = len(a)
    out = []
    for i in range(1, N + 1):
        s = 0.0
        for j in range(1, N + 1):
            lam = 1 / math.sqrt(2) if j == 1 else 1.0
            s += a[j - 1] * lam * math.cos(math.pi * (2 * i - 1) * (j - 1) / (2 * N))
        out.append(math.sqrt(2 / N) * s)
    return np.array(out)


@pytest.mark.parametrize("N", [1, 2, 3, 7, 16, 50])
def test_forward_matches_direct_sum(N, rng):
    x = rng.normal(size=N)
    ref = direct_dct(x)
    got = dct_forward(x).alpha
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())


@pytest.mark.parametrize("N", [1, 4, 9])
def test_inverse_matches_direct_sum(N, rng):
    a = rng.normal(size=N)
    assert np.allclose(dct_inverse(a), direct_idct(a), atol=1e-12)


def test_worked_examples():
    assert np.allclose(dct_forward([1, 1]).alpha, [math.sqrt(2), 0], atol=1e-15)
    assert np.allclose(dct_forward([1, 0]).alpha, [1 / math.sqrt(2), math.cos(math.pi / 4)], atol=1e-15)
    assert np.allclose(dct_inverse([math.sqrt(2), 0]), [1, 1], atol=1e-15)
    assert np.allclose(dct_inverse([1, 0, 0, 0]), [0.5] * 4, atol=1e-15)
    assert dct_forward([3.7]).alpha[0] == pytest.approx(3.7, abs=1e-15)


@pytest.mark.parametrize("N", [1, 2, 7, 200, 512])
def test_constant_is_one_sparse(N):
    a = dct_forward(np.full(N, 2.5)).alpha
    assert abs(a[0] - 2.5 * math.sqrt(N)) <= 1e-12 * max(1, math.sqrt(N))
    assert np.abs(a[1:]).max(initial=0) <= 1e-12


@pytest.mark.parametrize("N", [1, 2, 7, 200, 512])
def test_orthonormal_parseval_round_trip(N, rng):
    psi = dct_matrix(N)
    assert np.abs(psi @ psi.T - np.eye(N)).max() <= 1e-9
    for _ in range(10):
        x = rng.normal(size=N)
        a = dct_forward(x).alpha
        assert abs(np.linalg.norm(a) - np.linalg.norm(x)) <= 1e-9 * np.linalg.norm(x)
        assert np.abs(dct_inverse(a) - x).max() <= 1e-9


def test_linearity(rng):
    x, y = rng.normal(size=(2, 33))
    lhs = dct_forward(2.0 * x - 3.0 * y).alpha
    rhs = 2.0 * dct_forward(x).alpha - 3.0 * dct_forward(y).alpha
    assert np.abs(lhs - rhs).max() <= 1e-9


def test_argument_errors():
    with pytest.raises(ValueError):
        dct_forward([])
    with pytest.raises(ValueError):
        dct_forward([1.0, np.nan])
    with pytest.raises(ValueError):
        dct_truncate([1.0, 2.0], 0)
    with pytest.raises(ValueError):
        dct_truncate([1.0, 2.0], 3)


def test_truncate_examples():
    assert dct_truncate([3, -5, 1], 2).alpha.tolist() == [3, -5, 0]
    a = np.array([1.0, -2.0, 2.0, 0.5])
    assert dct_truncate(a, 4).alpha.tolist() == a.tolist()
    # tie at the cutoff keeps the lower index
    assert dct_truncate([2.0, 1.0, -2.0, 2.0], 2).alpha.tolist() == [2.0, 0.0, -2.0, 0.0]


def test_truncate_nonzero_count():
    a = np.array([0.0, 4.0, 0.0, 1.0])
    assert np.count_nonzero(dct_truncate(a, 3).alpha) == 2


@pytest.mark.parametrize("N,s", [(4, 1), (5, 2), (6, 3), (8, 2), (8, 3)])
def test_truncation_is_optimal_by_brute_force(N, s, rng):
    for _ in range(5):
        x = rng.normal(size=N)
        a = dct_forward(x).alpha
        psi = dct_matrix(N)
        best = min(np.linalg.norm(x - psi[list(S)].T @ a[list(S)])
                   for S in itertools.combinations(range(N), s))
        got = np.linalg.norm(x - dct_compress(x, s))
        assert got <= best + 1e-12
