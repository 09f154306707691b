import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlop.cloud import PointCloud
from mlop.datasets import gen_grid_line
from mlop.errors import CoincidentPointsError, ConfigError, NumericalAbortError
from mlop.sketch import SketchMatrix
from mlop.solver import (RunParams, SolverConfig, attraction_coeff, bb_step,
                         bb_steps, cost, eta, eta_abs_deriv, gradient_at,
                         gradient_batch, h_eps_norm, init_lambda, point_cost,
                         repulsion_coeff, run, write_trace)

S8 = SketchMatrix.identity(8)
S2 = SketchMatrix.identity(2)

OPEN_PARAMS = RunParams(h1=1.5, h2=1.5, eps=0.1, cutoff1=math.inf,
                        cutoff2=math.inf, delta_min=1e-12)


def small_instance(seed, J=20, I=5, n=8):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(J, n)), rng.normal(size=(I, n))


# ---------------------------------------------------------------------------
# scalar operations
# ---------------------------------------------------------------------------


def test_h_eps_norm_values():
    assert h_eps_norm(np.zeros(2), 0.1, S2) == pytest.approx(math.sqrt(0.1))
    assert h_eps_norm([3.0, 0.0], 0.1, S2) == pytest.approx(math.sqrt(9.1))
    assert h_eps_norm([3.0, 0.0], 1e-14, S2) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        h_eps_norm([1.0, 0.0], -0.1, S2)


def test_eta_values_and_guard():
    assert eta(1.0) == pytest.approx(1.0 / 3.0)
    assert eta_abs_deriv(1.0) == pytest.approx(1.0)
    assert eta(2.0) == pytest.approx(1.0 / 24.0)
    assert eta_abs_deriv(2.0) == pytest.approx(1.0 / 16.0)
    with pytest.raises(CoincidentPointsError):
        eta(1e-15)
    with pytest.raises(CoincidentPointsError):
        eta_abs_deriv(1e-15)


def test_attraction_coeff_values():
    q = np.zeros(2)
    # distance 1, eps 0, h1 1: w = e^-1, bracket = -1
    assert attraction_coeff(q, [1.0, 0.0], 1.0, 0.0, S2) == pytest.approx(-math.exp(-1))
    # smoothed distance exactly h1/sqrt(2): bracket vanishes
    d = math.sqrt(0.5 - 0.1)
    assert attraction_coeff(q, [d, 0.0], 1.0, 0.1, S2) == pytest.approx(0.0, abs=1e-12)
    # coincident pair, eps 0.1: weight uses the raw distance, bracket the smoothed one
    assert attraction_coeff(q, q, 1.0, 0.1, S2) == pytest.approx(0.8 / math.sqrt(0.1))
    assert attraction_coeff(q, [50.0, 0.0], 1.0, 0.1, S2, cutoff=5.0) == 0.0


def test_repulsion_coeff_values():
    q = np.zeros(2)
    assert repulsion_coeff(q, [1.0, 0.0], 1.0, S2) == pytest.approx(5.0 / 3.0 * math.exp(-1))
    assert repulsion_coeff(q, [10.0, 0.0], 1.0, S2, cutoff=2.83) == 0.0
    with pytest.raises(CoincidentPointsError):
        repulsion_coeff(q, q, 1.0, S2)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=1e-3, max_value=8.0), st.floats(min_value=0.05, max_value=10.0))
def test_repulsion_coeff_positive(ratio, h2):
    # distances are expressed relative to the support so the Gaussian weight
    # stays above the underflow threshold
    d = ratio * h2
    assert repulsion_coeff(np.zeros(2), [d, 0.0], h2, S2) > 0.0


# ---------------------------------------------------------------------------
# gradient and its oracle
# ---------------------------------------------------------------------------


def test_gradient_single_pair_is_zero():
    P = np.zeros((1, 8))
    Q = np.zeros((1, 8))
    g = gradient_at(0, Q, P, [0.0], OPEN_PARAMS, S8)
    assert np.allclose(g, 0.0)


def test_gradient_vanishes_by_symmetry():
    angles = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    P = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    Q = np.vstack([[0.0, 0.0], P * 0.5])
    lam = -np.ones(Q.shape[0])
    g = gradient_at(0, Q, P, lam, OPEN_PARAMS, S2)
    assert np.abs(g).max() < 1e-12


def test_gradient_matches_finite_differences():
    """Independent oracle: central differences of the per-point energy."""
    rng = np.random.default_rng(11)
    P, Q = small_instance(11)
    lam = -np.abs(rng.normal(size=Q.shape[0]))
    step = 1e-6
    for i in range(Q.shape[0]):
        g = gradient_at(i, Q, P, lam, OPEN_PARAMS, S8)
        for c in range(Q.shape[1]):
            if abs(g[c]) < 1e-8:
                continue
            qp, qm = Q[i].copy(), Q[i].copy()
            qp[c] += step
            qm[c] -= step
            fd = (point_cost(i, qp, Q, P, lam[i], OPEN_PARAMS, S8)
                  - point_cost(i, qm, Q, P, lam[i], OPEN_PARAMS, S8)) / (2 * step)
            assert abs(fd - g[c]) / abs(g[c]) < 1e-5


def test_gradient_batch_matches_reference():
    P, Q = small_instance(12)
    lam = -np.abs(np.random.default_rng(13).normal(size=Q.shape[0]))
    rp = RunParams(h1=1.2, h2=1.4, eps=0.1, cutoff1=2.5, cutoff2=3.0, delta_min=1e-12)
    batch = gradient_batch(Q, P, lam, rp, S8)
    for i in range(Q.shape[0]):
        ref = gradient_at(i, Q, P, lam, rp, S8)
        assert np.allclose(batch[i], ref, rtol=1e-10, atol=1e-12)


# ---------------------------------------------------------------------------
# balance weights
# ---------------------------------------------------------------------------


def test_init_lambda_ratio():
    attr = np.array([[3.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    rep = np.array([[3.0, 0.0], [2.0, 0.0], [0.0, 0.0]])
    lam = init_lambda(attr, rep, S2)
    assert lam[0] == pytest.approx(-1.0)
    assert lam[1] == 0.0          # zero attraction
    assert lam[2] == 0.0          # zero repulsion: warned fallback
    assert np.all(lam <= 0.0)


def test_init_lambda_warns_on_isolated(caplog):
    attr = np.ones((2, 2))
    rep = np.array([[1.0, 0.0], [0.0, 0.0]])
    with caplog.at_level("WARNING"):
        init_lambda(attr, rep, S2)
    assert "zero repulsion" in caplog.text


def test_balance_equality_at_init():
    P, Q = small_instance(14)
    rp = RunParams(h1=1.5, h2=1.5, eps=0.1, cutoff1=4.0, cutoff2=4.0, delta_min=1e-12)
    from mlop import kernels
    attr = kernels.attraction_forces(Q, P, Q @ S8.s, P @ S8.s, rp.h1, rp.eps, rp.cutoff1)
    rep = kernels.repulsion_forces(Q, Q @ S8.s, rp.h2, rp.cutoff2, rp.delta_min)
    lam = init_lambda(attr, rep, S8)
    an = np.linalg.norm(attr @ S8.s, axis=1)
    rn = np.linalg.norm(rep @ S8.s, axis=1)
    nz = rn > 0  # the balance property quantifies over points with both terms
    assert np.all(np.abs(an[nz] - np.abs(lam[nz]) * rn[nz]) < 1e-10 * (1 + an[nz]))


# ---------------------------------------------------------------------------
# step sizes
# ---------------------------------------------------------------------------


def test_bb_step_values():
    g = np.array([1.0, 2.0, -1.0])
    assert bb_step(g, g, 0.5) == pytest.approx(1.0)
    assert bb_step(2 * g, g, 0.5) == pytest.approx(2.0)
    assert bb_step(g, np.zeros(3), 0.5) == 0.5           # degenerate
    assert bb_step(-g, g, 0.5) == 0.5                    # non-positive raw
    assert bb_step(2 * g, g, 0.5, lo=0.1, hi=1.5) == 1.5  # clamped


def test_bb_steps_vectorized_matches_scalar():
    rng = np.random.default_rng(15)
    dq = rng.normal(size=(6, 4))
    dg = rng.normal(size=(6, 4))
    dg[2] = 0.0
    vec = bb_steps(dq, dg, 0.3, 1e-6, 10.0)
    for i in range(6):
        assert vec[i] == pytest.approx(bb_step(dq[i], dg[i], 0.3, 1e-6, 10.0))


# ---------------------------------------------------------------------------
# cost
# ---------------------------------------------------------------------------


def test_cost_single_term():
    P = np.zeros((1, 8))
    Q = np.zeros((1, 8))
    rp = RunParams(h1=1.0, h2=1.0, eps=0.1, cutoff1=3.0, cutoff2=3.0, delta_min=1e-12)
    assert cost(Q, P, rp, S8) == pytest.approx(math.sqrt(0.1))


def test_cost_linear_in_lambda():
    P, Q = small_instance(16)
    rp = RunParams(h1=1.5, h2=1.5, eps=0.1, cutoff1=5.0, cutoff2=5.0, delta_min=1e-12)
    lam = -np.abs(np.random.default_rng(17).normal(size=Q.shape[0]))
    e1 = cost(Q, P, rp, S8)
    g1 = cost(Q, P, rp, S8, lam=lam)
    g2 = cost(Q, P, rp, S8, lam=2 * lam)
    assert g2 - e1 == pytest.approx(2 * (g1 - e1), rel=1e-10)


def test_cost_rejects_coincident_points():
    Q = np.zeros((2, 8))
    rp = RunParams(h1=1.0, h2=1.0, eps=0.1, cutoff1=3.0, cutoff2=3.0, delta_min=1e-9)
    with pytest.raises(CoincidentPointsError):
        cost(Q, np.ones((3, 8)), rp, S8, lam=-np.ones(2))


def test_cost_descends_under_gradient_field_on_clean_line():
    line, _ = gen_grid_line(32, 8)
    cfg = SolverConfig(q_size=16, max_iters=11, seed=1, sketch_dim=8,
                       descent_field="gradient")
    res = run(line, cfg, sketch=S8)
    costs = [t.cost for t in res.trace]
    increases = sum(1 for a, b in zip(costs, costs[1:]) if b > a + 1e-12)
    assert increases <= 2


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------


def test_run_noise_free_line_stays_on_line():
    line, _ = gen_grid_line(32, 8)
    cfg = SolverConfig(q_size=16, max_iters=60, seed=1, sketch_dim=8)
    res = run(line, cfg, sketch=S8)
    direction = np.ones(8) / math.sqrt(8)
    Q = res.q_final.points
    perp = Q - np.outer(Q @ direction, direction)
    assert np.abs(perp).max() < 1e-3 * res.supports.h0


def test_run_zero_iterations_echoes_subsample():
    line, _ = gen_grid_line(20, 8)
    cfg = SolverConfig(q_size=7, max_iters=0, seed=3, sketch_dim=8)
    res = run(line, cfg, sketch=S8)
    assert np.array_equal(res.q_final.points, line.points[res.q0_indices])
    assert res.trace == []
    assert not res.converged


def test_lambda_frozen_across_iterations():
    pts = PointCloud(np.random.default_rng(20).normal(size=(60, 8)))
    short = run(pts, SolverConfig(q_size=15, max_iters=1, seed=4, sketch_dim=8))
    long = run(pts, SolverConfig(q_size=15, max_iters=40, seed=4, sketch_dim=8))
    assert np.array_equal(short.lam, long.lam)
    assert np.all(long.lam <= 0.0)


def test_run_deterministic_and_thread_invariant():
    pts = PointCloud(np.random.default_rng(21).normal(size=(80, 10)))
    runs = [run(pts, SolverConfig(q_size=20, max_iters=8, seed=5, sketch_dim=6,
                                  threads=t)) for t in (1, 2, 4)]
    assert np.array_equal(runs[0].q_final.points, runs[1].q_final.points)
    assert np.array_equal(runs[0].q_final.points, runs[2].q_final.points)
    other = run(pts, SolverConfig(q_size=20, max_iters=8, seed=6, sketch_dim=6))
    assert not np.array_equal(runs[0].q_final.points, other.q_final.points)


def test_run_aborts_on_coincident_points():
    # a pair below the guard distance collides during the repulsion sweep
    coords = np.arange(11.0)
    coords[10] = 1e-12
    pts = PointCloud(np.sort(coords)[:, None] * np.ones(4))
    cfg = SolverConfig(q_size=11, max_iters=5, seed=0, sketch_dim=1)
    with pytest.raises(NumericalAbortError) as err:
        run(pts, cfg)
    assert err.value.iteration == 0


def test_run_validates_sizes():
    line, _ = gen_grid_line(10, 8)
    with pytest.raises(ConfigError, match="exceeds"):
        run(line, SolverConfig(q_size=11, max_iters=1, sketch_dim=8))


def test_around_point_init():
    pts = PointCloud(np.arange(20.0)[:, None] * np.ones(4))
    cfg = SolverConfig(q_size=3, max_iters=0, seed=0, sketch_dim=4,
                       init="around_point", init_index=10)
    res = run(pts, cfg, sketch=SketchMatrix.identity(4))
    assert set(res.q0_indices.tolist()) == {9, 10, 11}
    bad = SolverConfig(q_size=5, max_iters=0, seed=0, sketch_dim=4,
                       init="around_point", init_index=10, init_radius=1.0)
    with pytest.raises(ConfigError, match="within init_radius"):
        run(pts, bad, sketch=SketchMatrix.identity(4))


def test_trace_csv(tmp_path):
    line, _ = gen_grid_line(20, 8)
    res = run(line, SolverConfig(q_size=8, max_iters=4, seed=2, sketch_dim=8), sketch=S8)
    path = tmp_path / "trace.csv"
    write_trace(res.trace, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "iter,max_grad_norm,cost,fill_distance_q,wall_ms"
    assert len(lines) == 5


def test_config_validation_and_roundtrip():
    cfg = SolverConfig(q_size=5, step_clamp=(0.1, 2.0), init="around_point")
    back = SolverConfig.from_dict(cfg.to_dict())
    assert back == cfg
    with pytest.raises(ConfigError):
        SolverConfig(q_size=0)
    with pytest.raises(ConfigError):
        SolverConfig(q_size=1, eps_h=0.0)
    with pytest.raises(ConfigError):
        SolverConfig(q_size=1, step_clamp=(2.0, 1.0))
    with pytest.raises(ConfigError):
        SolverConfig(q_size=1, init="midair")
    with pytest.raises(ConfigError):
        SolverConfig(q_size=1, descent_field="sideways")
