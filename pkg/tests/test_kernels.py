import numpy as np
import pytest

from mlop import kernels
from mlop.errors import CoincidentPointsError

HAVE_NUMBA = kernels.backend_name() == "numba"


def instance(seed=0, I=50, J=120, n=20, m=6):
    rng = np.random.default_rng(seed)
    Q = rng.normal(size=(I, n))
    P = rng.normal(size=(J, n))
    S = np.linalg.qr(rng.normal(size=(n, m)))[0]
    return Q, P, Q @ S, P @ S


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")
@pytest.mark.parametrize("bracket", [False, True])
def test_attraction_backends_agree(bracket):
    Q, P, Qs, Ps = instance()
    args = (Q, P, Qs, Ps, 1.3, 0.1, 2.0)
    a = kernels.attraction_forces(*args, backend="numba", bracket=bracket)
    b = kernels.attraction_forces(*args, backend="numpy", bracket=bracket)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")
def test_repulsion_backends_agree():
    Q, P, Qs, Ps = instance(1)
    args = (Q, Qs, 1.1, 3.0, 1e-12)
    a = kernels.repulsion_forces(*args, backend="numba")
    b = kernels.repulsion_forces(*args, backend="numpy")
    assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")
def test_cost_backends_agree():
    Q, P, Qs, Ps = instance(2)
    lam = -np.abs(np.random.default_rng(3).normal(size=Q.shape[0]))
    a1 = kernels.attraction_cost(Qs, Ps, 1.3, 0.1, 2.0, backend="numba")
    a2 = kernels.attraction_cost(Qs, Ps, 1.3, 0.1, 2.0, backend="numpy")
    assert a1 == pytest.approx(a2, rel=1e-12)
    r1 = kernels.repulsion_cost(Qs, -lam, 1.1, 3.0, 1e-12, backend="numba")
    r2 = kernels.repulsion_cost(Qs, -lam, 1.1, 3.0, 1e-12, backend="numpy")
    assert r1 == pytest.approx(r2, rel=1e-12)


def test_thread_count_bitwise_invariance():
    Q, P, Qs, Ps = instance(4, I=200)
    outs = [kernels.attraction_forces(Q, P, Qs, Ps, 1.3, 0.1, 2.0, threads=t)
            for t in (1, 2, 4)]
    assert np.array_equal(outs[0], outs[1])
    assert np.array_equal(outs[0], outs[2])
    reps = [kernels.repulsion_forces(Q, Qs, 1.1, 3.0, 1e-12, threads=t)
            for t in (1, 2, 4)]
    assert np.array_equal(reps[0], reps[1])
    assert np.array_equal(reps[0], reps[2])


def test_cutoff_short_circuits():
    # two clusters far apart: with a small cutoff the far cluster contributes nothing
    Q = np.zeros((2, 3))
    Q[1] = 100.0
    P = np.vstack([np.eye(3) * 0.1, 100.0 + np.eye(3) * 0.1])
    out = kernels.attraction_forces(Q, P, Q, P, 1.0, 0.1, cutoff=5.0)
    near_only = kernels.attraction_forces(Q[:1], P[:3], Q[:1], P[:3], 1.0, 0.1, cutoff=5.0)
    assert np.allclose(out[0], near_only[0])


def test_coincident_pair_detected():
    Q = np.zeros((3, 4))
    Q[1] = 1.0
    with pytest.raises(CoincidentPointsError, match="0 and 2"):
        kernels.repulsion_forces(Q, Q, 1.0, 10.0, 1e-9)
    with pytest.raises(CoincidentPointsError):
        kernels.repulsion_cost(Q, np.ones(3), 1.0, 10.0, 1e-9)


def test_min_dists_matches_brute_force():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 6))
    Y = rng.normal(size=(70, 6))
    out = kernels.min_dists(X, Y)
    brute = np.sqrt(((X[:, None, :] - Y[None, :, :]) ** 2).sum(-1)).min(1)
    assert np.allclose(out, brute, rtol=1e-9)


def test_self_nn_matches_brute_force():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(50, 4))
    out = kernels.self_nn_dists(X)
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(D, np.inf)
    assert np.allclose(out, D.min(1), rtol=1e-9)


def test_pairwise_dists_exact_on_integer_grid():
    X = np.arange(5.0)[:, None]
    D = kernels.pairwise_dists(X, X)
    assert D[0, 4] == 4.0
    assert D[1, 3] == 2.0


def test_unknown_backend_rejected():
    Q, P, Qs, Ps = instance(7, I=4, J=4)
    with pytest.raises(ValueError, match="unknown backend"):
        kernels.attraction_forces(Q, P, Qs, Ps, 1.0, 0.1, 1.0, backend="cuda")
