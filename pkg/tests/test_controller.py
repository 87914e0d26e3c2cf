from types import SimpleNamespace

import numpy as np
import pytest

from kmergodic.controller import (
    KMEPlanner,
    PlannerConfig,
    PlannerError,
    greedy_control,
    greedy_direction,
    horizon_scale,
    kme_objective,
    mpc_plan,
    probe_plans,
    projected_descent,
    shift_warm_start,
)
from kmergodic.domain import BoxDomain, TargetSpec, sample_target
from kmergodic.dynamics import SystemModel
from kmergodic.kernels import KernelSpec
from kmergodic.visitation import ErrorState, error_init, error_step

BOX = BoxDomain.from_bounds([[-1, 1], [-1, 1]])
K = KernelSpec("gaussian", 0.3)
MODEL = SystemModel("single_integrator", 2, 1.0, 0.05)


@pytest.fixture
def setup():
    tgt = sample_target(BOX, TargetSpec(), 40, 0, [K])
    e = error_init(tgt, MODEL.dt)
    for w in np.random.default_rng(0).uniform(-0.5, 0.5, (25, 2)):
        e = error_step(e, tgt, K, w)
    return tgt, e


def test_greedy_direction_is_negative_gradient(setup):
    tgt, e = setup
    x = np.array([0.2, -0.1])

    def f(p):
        return np.mean(e.e * K.matrix(p[None], tgt.samples)[0])

    eps = 1e-6
    fd = np.array([(f(x + eps * d) - f(x - eps * d)) / (2 * eps) for d in np.eye(2)])
    assert np.allclose(greedy_direction(x, e, MODEL, tgt, K, BOX), -fd, atol=1e-9)


def test_greedy_control_saturates_and_vanishes_at_zero_error(setup):
    tgt, e = setup
    cfg = PlannerConfig(embedding_kernel=K, objective_kernel=K)
    big = ErrorState(e.e * 1e6, e.dt, e.steps)
    assert np.linalg.norm(greedy_control(np.zeros(2), big, MODEL, tgt, cfg, BOX)) == pytest.approx(1.0)
    zero = error_init(tgt, MODEL.dt)
    assert np.array_equal(greedy_control(np.zeros(2), zero, MODEL, tgt, cfg, BOX), [0.0, 0.0])


def test_greedy_is_zero_for_double_integrator(setup):
    tgt, e = setup
    m = SystemModel("double_integrator", 2, 1.0, 0.05)
    cfg = PlannerConfig(embedding_kernel=K, objective_kernel=K)
    assert np.allclose(greedy_control(np.array([0.1, 0.1, 0.0, 0.0]), e, m, tgt, cfg, BOX), 0.0)


@pytest.mark.parametrize("kind", ["single_integrator", "double_integrator"])
def test_objective_gradient_matches_finite_differences(setup, kind):
    tgt, e = setup
    m = SystemModel(kind, 2, 1.0, 0.05)
    rng = np.random.default_rng(1)
    x = m.initial_state([0.1, 0.3])
    U = rng.uniform(-0.7, 0.7, (7, 2))
    e_now = e.e + 0.01

    def J(U):
        return kme_objective(U, x, e_now, m, tgt, K, BOX, 0.1, False)[0]

    _, G = kme_objective(U, x, e_now, m, tgt, K, BOX, 0.1, True)
    eps = 1e-6
    fd = np.zeros_like(U)
    for idx in np.ndindex(U.shape):
        Up, Um = U.copy(), U.copy()
        Up[idx] += eps
        Um[idx] -= eps
        fd[idx] = (J(Up) - J(Um)) / (2 * eps)
    assert np.allclose(G, fd, rtol=1e-5, atol=1e-10)


def test_objective_scale_is_linear(setup):
    tgt, e = setup
    U = np.full((4, 2), 0.3)
    J1, G1 = kme_objective(U, np.zeros(2), e.e, MODEL, tgt, K, BOX)
    J2, G2 = kme_objective(U, np.zeros(2), e.e, MODEL, tgt, K, BOX, scale=0.25)
    assert J2 == pytest.approx(0.25 * J1) and np.allclose(G2, 0.25 * G1)


def test_objective_terminal_error_by_hand(setup):
    tgt, e = setup
    # zero controls at x: every planned state records x again
    x = np.array([0.4, -0.2])
    H = 3
    e_H = e.e + H * MODEL.dt * (K.matrix(x[None], tgt.samples)[0] - tgt.mu(K))
    J, _ = kme_objective(np.zeros((H, 2)), x, e.e, MODEL, tgt, K, BOX, 0.0, False)
    assert J == pytest.approx(np.mean(e_H**2))


def test_horizon_scale():
    e = ErrorState(np.zeros(3), 0.1, 9)
    assert horizon_scale(e, 5) == pytest.approx(1 / 1.5**2)
    assert horizon_scale(e, 5, 4.0) == pytest.approx(1 / (4 * 1.5**2))


def test_projected_descent_minimizes_quadratic():
    c = np.array([[0.3, -0.2], [2.0, 0.0]])

    def fun(U, g):
        return float(np.sum((U - c) ** 2)), (2 * (U - c) if g else None)

    U, info = projected_descent(fun, np.zeros((2, 2)), 1.0, 200, 0.1)
    assert np.allclose(U, [[0.3, -0.2], [1.0, 0.0]], atol=1e-6)
    assert info.objective <= info.zero_objective


def test_projected_descent_never_worse_than_zero():
    # huge step bounces between the ball's poles, never improving on zero
    def fun(U, g):
        return float(np.sum(U**2) - 0.01 * U.sum()), (2 * U - 0.01 if g else None)

    U, info = projected_descent(fun, np.zeros((1, 2)), 1.0, 5, 1e6)
    assert info.objective <= info.zero_objective


def test_fallback_tries_probe_plans():
    # zero gradient everywhere except along +x at full speed
    def fun(U, g):
        J = 1.0 - float(np.all(np.isclose(U[:, 0], 1.0)))
        return J, (np.zeros_like(U) if g else None)

    _, plain = projected_descent(fun, np.zeros((3, 2)), 1.0, 5, 1.0)
    U, info = projected_descent(fun, np.zeros((3, 2)), 1.0, 5, 1.0, fallback=True)
    assert plain.objective == 1.0 and info.objective == 0.0
    assert np.allclose(U, [[1.0, 0.0]] * 3)


def test_probe_plans_shape_and_speed():
    P = probe_plans(4, 3, 2.0)
    assert P.shape == (6 + 8, 4, 3)
    assert np.allclose(np.linalg.norm(P, axis=-1), 2.0)
    assert probe_plans(2, 1, 1.0).shape == (2, 2, 1)


def test_descent_rejects_non_finite():
    with pytest.raises(PlannerError):
        projected_descent(lambda U, g: (float("nan"), np.zeros_like(U)), np.zeros((1, 2)), 1.0, 3, 1.0)


def test_shift_warm_start():
    U = np.arange(8.0).reshape(4, 2)
    assert np.array_equal(shift_warm_start(U, 4, 2), np.vstack([U[1:], [[0, 0]]]))
    assert np.array_equal(shift_warm_start(None, 2, 2), np.zeros((2, 2)))
    assert shift_warm_start(U, 2, 2).shape == (2, 2)


def test_mpc_plan_improves_and_respects_bound(setup):
    tgt, e = setup
    cfg = PlannerConfig("mpc", 8, 30, 50.0, K, K)
    U, info = mpc_plan(np.array([0.1, 0.1]), e, MODEL, tgt, cfg, BOX)
    assert U.shape == (8, 2)
    assert np.all(np.linalg.norm(U, axis=1) <= 1.0 + 1e-12)
    assert info.objective < info.zero_objective


def test_planner_is_stateful_and_checks_sizes(setup):
    tgt, e = setup
    pl = KMEPlanner(PlannerConfig("mpc", 5, 5, 10.0, K, K), MODEL, tgt, BOX)
    u = pl.control(np.zeros(2), SimpleNamespace(error=e))
    assert u.shape == (2,) and pl.last_info is not None and pl._prev.shape == (5, 2)
    with pytest.raises(ValueError):
        mpc_plan(np.zeros(2), ErrorState(np.zeros(3), 0.05), MODEL, tgt, pl.cfg, BOX)


@pytest.mark.parametrize("kw", [{"mode": "lqr"}, {"horizon": 0}, {"iterations": 0}, {"step_size": 0.0},
                                {"control_weight": -1.0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        PlannerConfig(**kw)
