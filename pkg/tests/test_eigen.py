import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventail import _kernels
from eventail.eigen import canonical_sign, eigen_smallest, eigvals3, null_vector3, smallest_eigpairs


def _random_sym(rng, n, spread=1.0):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    lam = rng.uniform(0, spread, n)
    return Q @ np.diag(lam) @ Q.T


def test_diagonal():
    lam, v = eigen_smallest(np.diag([5.0, 3.0, 0.0]))
    assert lam == 0.0
    np.testing.assert_array_equal(v, [0, 0, 1])


def test_canonical_sign_deterministic():
    lam, v = eigen_smallest(np.diag([-1.0, 3.0, 4.0]))
    np.testing.assert_array_equal(v, [1, 0, 0])
    np.testing.assert_array_equal(canonical_sign(np.array([0.1, -0.9, 0.2])), [-0.1, 0.9, -0.2])


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        eigen_smallest(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        eigen_smallest(np.array([[1.0, 2, 0], [0, 1, 0], [0, 0, 1]]))


def test_eigvals3_matches_lapack(rng):
    S = np.array([_random_sym(rng, 3, 10 ** rng.uniform(-3, 6)) for _ in range(500)])
    ref = np.linalg.eigvalsh(S)
    got = eigvals3(S)
    scale = np.abs(ref).max(axis=1, keepdims=True)
    assert np.max(np.abs(got - ref) / scale) < 1e-10


def test_eig3_kernel_matches_lapack(rng):
    if not _kernels.HAVE_NUMBA:
        pytest.skip("numba unavailable")
    S = np.array([_random_sym(rng, 3) for _ in range(300)])
    lam, vec = _kernels.eig3(S)
    ref_w, ref_v = np.linalg.eigh(S)
    assert np.max(np.abs(lam - ref_w)) < 1e-10
    assert np.max(1 - np.abs(np.einsum("ij,ij->i", vec, ref_v[:, :, 0]))) < 1e-10


def test_smallest_pair_residual(rng):
    for n in (3, 6):
        S = np.array([_random_sym(rng, n) for _ in range(100)])
        lam, v = smallest_eigpairs(S)
        res = np.einsum("bij,bj->bi", S, v) - lam[:, None] * v
        assert np.max(np.linalg.norm(res, axis=1)) < 1e-10
        np.testing.assert_allclose(lam, np.linalg.eigvalsh(S)[:, 0], atol=1e-12)


def test_repeated_eigenvalue_returns_valid_vector():
    S = np.diag([2.0, 2.0, 7.0])
    lam, v = eigen_smallest(S)
    assert lam == pytest.approx(2.0)
    assert abs(v[2]) < 1e-12 and abs(np.linalg.norm(v) - 1) < 1e-12
    v0 = null_vector3(np.zeros((3, 3)), np.zeros(()))
    assert abs(np.linalg.norm(v0) - 1) < 1e-12


def test_rank_one_and_rank_two():
    a = np.array([1.0, 2.0, 2.0]) / 3
    lam, v = eigen_smallest(np.outer(a, a))
    assert abs(lam) < 1e-15 and abs(v @ a) < 1e-12
    b = np.array([0.0, 1.0, -1.0]) / np.sqrt(2)
    lam, v = eigen_smallest(np.outer(a, a) + np.outer(b, b))
    np.testing.assert_allclose(v, canonical_sign(np.cross(a, b)), atol=1e-8)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=6, max_size=6))
def test_eigvals_sorted_and_trace(vals):
    a, b, c, d, e, f = vals
    S = np.array([[a, d, f], [d, b, e], [f, e, c]])
    w = eigvals3(S)
    assert w[0] <= w[1] + 1e-9 and w[1] <= w[2] + 1e-9
    assert abs(w.sum() - np.trace(S)) <= 1e-9 * max(1.0, np.abs(S).max())
    np.testing.assert_allclose(w, np.linalg.eigvalsh(S), atol=1e-7 * max(1.0, np.abs(S).max()))
