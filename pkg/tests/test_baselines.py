import itertools
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kmergodic.baselines import (
    MemoryEMMDPlanner,
    MemoryPolicy,
    NBVPlanner,
    TSPPlanner,
    emmd_memory_objective,
    emmd_memory_plan,
    nbv_choose,
    nbv_plan_step,
    nearest_neighbor_tour,
    path_length,
    track_waypoints,
    tsp_plan,
    tsp_tour,
    two_opt,
)
from kmergodic.controller import PlannerConfig
from kmergodic.domain import BoxDomain, TargetModel, TargetSpec, sample_target
from kmergodic.dynamics import SystemModel, step
from kmergodic.kernels import KernelSpec
from kmergodic.metrics import TrajectoryLog, emmd_oracle

BOX = BoxDomain.from_bounds([[-1, 1], [-1, 1]])
K = KernelSpec("gaussian", 0.3)
MODEL = SystemModel("single_integrator", 2, 1.0, 0.1)


@pytest.fixture
def tgt():
    return sample_target(BOX, TargetSpec(), 30, 0, [K])


# -- memory policies -------------------------------------------------------------

def test_memory_policies_retain():
    H = np.arange(20.0).reshape(10, 2)
    assert np.array_equal(MemoryPolicy("full").retain(H), H)
    assert np.array_equal(MemoryPolicy("short_term", 3).retain(H), H[-3:])
    assert np.array_equal(MemoryPolicy("short_term", 30).retain(H), H)
    sub = MemoryPolicy("subsampled", 4).retain(H, np.random.default_rng(0))
    assert len(sub) == 4 and len({tuple(r) for r in sub}) == 4
    assert all(any(np.array_equal(r, h) for h in H) for r in sub)
    again = MemoryPolicy("subsampled", 4).retain(H, np.random.default_rng(0))
    assert np.array_equal(sub, again)


@pytest.mark.parametrize("kw", [{"kind": "lru", "K": 3}, {"kind": "short_term", "K": 0}])
def test_memory_policy_validation(kw):
    with pytest.raises(ValueError):
        MemoryPolicy(**kw)


def _hist_sums(R, tgt):
    hh = float(K.matrix(R, R).sum()) if len(R) else 0.0
    ht = float(K.matrix(R, tgt.samples).sum()) if len(R) else 0.0
    return hh, ht


@pytest.mark.parametrize("h", [0, 1, 7])
def test_memory_objective_equals_oracle_on_concatenation(tgt, h):
    rng = np.random.default_rng(h)
    R = rng.uniform(-1, 1, (h, 2))
    x0 = np.array([0.2, -0.3])
    U = rng.uniform(-1, 1, (5, 2)) * 0.7
    J, _ = emmd_memory_objective(U, x0, R, MODEL, tgt, K, BOX, *_hist_sums(R, tgt), with_grad=False)
    plan = MODEL.rollout_positions(x0, U)
    traj = np.vstack([R, x0[None], plan])
    assert J == pytest.approx(emmd_oracle(TrajectoryLog.from_points(traj), tgt, K), rel=1e-10, abs=1e-13)


def test_memory_objective_gradient(tgt):
    rng = np.random.default_rng(3)
    R = rng.uniform(-1, 1, (6, 2))
    x0 = np.array([0.1, 0.1])
    U = rng.uniform(-0.6, 0.6, (4, 2))
    sums = _hist_sums(R, tgt)

    def J(U):
        return emmd_memory_objective(U, x0, R, MODEL, tgt, K, BOX, *sums, 0.05, False)[0]

    _, G = emmd_memory_objective(U, x0, R, MODEL, tgt, K, BOX, *sums, 0.05, True)
    eps = 1e-6
    fd = np.zeros_like(U)
    for idx in np.ndindex(U.shape):
        Up, Um = U.copy(), U.copy()
        Up[idx] += eps
        Um[idx] -= eps
        fd[idx] = (J(Up) - J(Um)) / (2 * eps)
    assert np.allclose(G, fd, rtol=1e-5, atol=1e-10)


def test_memory_planner_improves_on_zero(tgt):
    cfg = PlannerConfig("mpc", 5, 20, 5.0, K, K)
    hist = np.random.default_rng(0).uniform(-0.2, 0.2, (15, 2))
    U, info = emmd_memory_plan(np.zeros(2), hist, MemoryPolicy("short_term", 5), tgt, MODEL, cfg, BOX)
    assert info.objective < info.zero_objective
    assert np.all(np.linalg.norm(U, axis=1) <= 1 + 1e-12)
    pl = MemoryEMMDPlanner(MemoryPolicy("full"), cfg, MODEL, tgt, BOX, np.random.default_rng(0))
    u = pl.control(np.zeros(2), SimpleNamespace(history=hist))
    assert u.shape == (2,) and pl.name == "full"


# -- TSP -----------------------------------------------------------------------

@given(st.integers(2, 9), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_two_opt_permutation_and_no_longer(n, seed):
    rng = np.random.default_rng(seed)
    P = rng.uniform(-1, 1, (n, 2))
    start = rng.uniform(-1, 1, 2)
    nn = nearest_neighbor_tour(P, start)
    assert sorted(nn) == list(range(n))
    opt = two_opt(P, start, nn)
    assert sorted(opt) == list(range(n))
    assert path_length(P, start, opt) <= path_length(P, start, nn) + 1e-12


def test_two_opt_finds_brute_force_optimum_on_small_instance():
    rng = np.random.default_rng(11)
    P = rng.uniform(-1, 1, (6, 2))
    start = np.zeros(2)
    best = min(path_length(P, start, list(o)) for o in itertools.permutations(range(6)))
    got = path_length(P, start, two_opt(P, start, nearest_neighbor_tour(P, start)))
    assert got <= best * 1.1


def test_nearest_neighbor_tour_on_a_line():
    P = np.array([[3.0, 0], [1.0, 0], [2.0, 0], [0.5, 0]])
    assert list(nearest_neighbor_tour(P, [0.0, 0.0])) == [3, 1, 2, 0]


def test_tsp_plan_visits_every_sample(tgt):
    log = tsp_plan(tgt, np.zeros(2), MODEL)
    assert np.all(np.linalg.norm(log.controls, axis=1) <= 1 + 1e-12)
    d = np.linalg.norm(tgt.samples[:, None, :] - log.domain_points[None], axis=2).min(1)
    assert d.max() < 1e-9


def test_track_waypoints_bounded_and_reaches():
    wps = np.array([[0.05, 0.0], [0.5, 0.5]])
    U = track_waypoints(np.zeros(2), wps, MODEL, 20)
    P = np.cumsum(U, axis=0) * MODEL.dt
    assert np.all(np.linalg.norm(U, axis=1) <= 1 + 1e-12)
    assert np.allclose(P[-1], wps[-1])
    assert np.allclose(P[0], wps[0])


def test_tsp_planner_closed_loop_matches_tour(tgt):
    pl = TSPPlanner(MODEL, tgt, BOX)
    x = np.zeros(2)
    pts = []
    for _ in range(400):
        x = step(MODEL, x, pl.control(x, None))
        pts.append(x)
    d = np.linalg.norm(tgt.samples[:, None, :] - np.array(pts)[None], axis=2).min(1)
    assert d.max() < 1e-9
    assert np.allclose(pl.waypoints, tgt.samples[tsp_tour(tgt, np.zeros(2))])


def test_tsp_requires_single_integrator(tgt):
    with pytest.raises(ValueError):
        tsp_plan(tgt, np.zeros(2), SystemModel("double_integrator", 2))


# -- NBV -----------------------------------------------------------------------

def test_nbv_choose_by_hand():
    # a cluster of three far away beats a single close sample per unit length
    S = np.array([[0.2, 0.0], [2.0, 0.0], [2.05, 0.0], [2.1, 0.0]])
    tgt = TargetModel(S, [])
    covered = np.zeros(4, dtype=bool)
    # r=0.06, score = uncovered samples near the segment / its length
    # first: sample 0 scores 1/0.2, the far ones at most 3/2.05
    assert nbv_choose(np.zeros(2), covered, tgt, 0.06) == 0
    covered[0] = True
    # then: 2/2.0, 3/2.05, 3/2.1
    assert nbv_choose(np.zeros(2), covered, tgt, 0.06) == 2
    assert nbv_choose(np.zeros(2), np.ones(4, dtype=bool), tgt, 0.06) is None


def test_nbv_step_moves_toward_choice(tgt):
    u = nbv_plan_step(np.zeros(2), None, tgt, MODEL, 0.2)
    j = nbv_choose(np.zeros(2), np.linalg.norm(tgt.samples, axis=1) <= 0.2, tgt, 0.2)
    d = tgt.samples[j]
    assert np.allclose(u / np.linalg.norm(u), d / np.linalg.norm(d))


def test_nbv_planner_reaches_full_coverage(tgt):
    pl = NBVPlanner(MODEL, tgt, BOX, 0.2)
    x = np.zeros(2)
    for _ in range(300):
        x = step(MODEL, x, pl.control(x, None))
    pl.control(x, None)
    assert pl.covered.all()


def test_tsp_unit_square_tour_has_three_unit_edges():
    S = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    order = tsp_tour(TargetModel(S, []), np.array([0.0, 0.0]))
    best = min(path_length(S, np.zeros(2), list(o)) for o in itertools.permutations(range(4)))
    assert path_length(S, np.zeros(2), list(order)) == pytest.approx(best) == pytest.approx(3.0)


def test_tsp_two_samples_nearer_first():
    S = np.array([[0.9, 0.0], [0.2, 0.1]])
    assert list(tsp_tour(TargetModel(S, []), np.zeros(2)))[0] == 1
