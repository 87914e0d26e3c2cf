"""Comparison planners: memory-limited EMMD, a TSP tour tracker and next-best-view."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .controller import PlannerConfig, projected_descent, shift_warm_start
from .dynamics import SystemModel, project_control, rollout, sigma_map
from .metrics import TrajectoryLog, covered_mask

REACH_TOL = 1e-9

_CHUNK = 2048


@dataclass(frozen=True)
class MemoryPolicy:
    kind: str = "full"
    K: int = 0
    reseed_each_step: bool = True

    def __post_init__(self):
        if self.kind not in ("full", "short_term", "subsampled"):
            raise ValueError(f"unknown memory policy {self.kind!r}")
        if self.kind != "full" and self.K < 1:
            raise ValueError("bounded memory policies need K >= 1")

    def retain(self, history: np.ndarray, rng=None) -> np.ndarray:
        n = len(history)
        if self.kind == "full" or n <= self.K:
            return history
        if self.kind == "short_term":
            return history[n - self.K:]
        idx = np.sort(rng.choice(n, size=self.K, replace=False))
        return history[idx]


def _block_sum(kernel, A, B) -> float:
    total = 0.0
    for i in range(0, len(A), _CHUNK):
        total += float(kernel.matrix(A[i:i + _CHUNK], B).sum())
    return total


def emmd_memory_objective(U, x0, retained, model: SystemModel, target, kernel, domain,
                          hist_hist: float, hist_tgt: float, control_weight=0.0, with_grad=True):
    """Ergodic MMD of ``retained ⊕ sigma(x0) ⊕ sigma(plan)`` against the target samples.

    ``hist_hist`` and ``hist_tgt`` are the history-only double sums, which do
    not depend on the plan.
    """
    dt = model.dt
    M = target.M
    Wp, adjoint = rollout(model, domain, x0, U)
    w0 = sigma_map(model, domain, x0)[None, :]
    h = len(retained)
    H = len(Wp)
    L = h + 1 + H
    B = np.vstack([retained.reshape(-1, Wp.shape[1]), w0, Wp, target.samples])
    weights = np.empty(len(B))
    weights[: L] = 2.0 / L**2
    weights[L:] = -2.0 / (L * M)
    K, gr = kernel._radial_terms(Wp, B)
    # plan rows against: history, current point, plan, targets
    s_ph = K[:, :h].sum()
    s_p0 = K[:, h].sum()
    s_pp = K[:, h + 1: L].sum()
    s_pt = K[:, L:].sum()
    k00 = 1.0
    s_h0 = float(kernel.matrix(w0, retained).sum()) if h else 0.0
    s_0t = float(kernel.matrix(w0, target.samples).sum())
    traj = hist_hist + 2.0 * s_h0 + k00 + 2.0 * (s_ph + s_p0) + s_pp
    cross = hist_tgt + s_0t + s_pt
    J = traj / L**2 - 2.0 * cross / (L * M) + target.z(kernel)
    J += control_weight * dt * float(np.sum(U * U))
    if not with_grad:
        return J, None
    Wt = gr * weights
    dW = Wp * Wt.sum(axis=1)[:, None] - Wt @ B
    grad = adjoint(dW) + 2.0 * control_weight * dt * U
    return J, grad


def emmd_memory_plan(x, history, policy: MemoryPolicy, target, model: SystemModel, cfg: PlannerConfig,
                     domain, rng=None, warm_start=None):
    """One receding-horizon step on the explicit-history EMMD objective.

    Uses the objective kernel and the same solver settings as the KME planner.
    """
    kernel = cfg.objective_kernel
    hist = np.asarray(history, dtype=float).reshape(-1, target.dim)
    retained = policy.retain(hist, rng)
    hist_hist = _block_sum(kernel, retained, retained) if len(retained) else 0.0
    hist_tgt = _block_sum(kernel, retained, target.samples) if len(retained) else 0.0
    U0 = np.zeros((cfg.horizon, model.control_dim)) if warm_start is None else warm_start

    def fun(U, with_grad):
        return emmd_memory_objective(U, x, retained, model, target, kernel, domain,
                                     hist_hist, hist_tgt, cfg.control_weight, with_grad)

    return projected_descent(fun, U0, model.u_max, cfg.iterations, cfg.step_size, cfg.fallback)


def emmd_memory_control(x, history, policy, target, model, cfg, domain, rng=None):
    U, _ = emmd_memory_plan(x, history, policy, target, model, cfg, domain, rng)
    return U[0].copy()


class MemoryEMMDPlanner:
    def __init__(self, policy: MemoryPolicy, cfg: PlannerConfig, model, target, domain, rng):
        self.policy = policy
        self.cfg = cfg
        self.model = model
        self.target = target
        self.domain = domain
        self.rng = rng
        self._prev = None
        self.last_info = None
        self.name = policy.kind

    def control(self, x, ctx) -> np.ndarray:
        warm = shift_warm_start(self._prev, self.cfg.horizon, self.model.control_dim)
        U, info = emmd_memory_plan(x, ctx.history, self.policy, self.target, self.model, self.cfg,
                                   self.domain, self.rng, warm)
        self._prev = U
        self.last_info = info
        return U[0].copy()


# ---------------------------------------------------------------------------
# TSP tour
# ---------------------------------------------------------------------------

def nearest_neighbor_tour(points, start) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    n = len(P)
    unvisited = np.ones(n, dtype=bool)
    order = np.empty(n, dtype=np.int64)
    cur = np.asarray(start, dtype=float)
    for k in range(n):
        d = np.sum((P - cur) ** 2, axis=1)
        d[~unvisited] = np.inf
        j = int(np.argmin(d))
        order[k] = j
        unvisited[j] = False
        cur = P[j]
    return order


def path_length(points, start, order) -> float:
    seq = np.vstack([np.asarray(start, dtype=float)[None, :], np.asarray(points)[order]])
    return float(np.sum(np.linalg.norm(np.diff(seq, axis=0), axis=1)))


def two_opt(points, start, order, max_checks=None):
    """Open-path 2-opt from a fixed start; stops at a local optimum or after ``max_checks``."""
    P = np.asarray(points, dtype=float)
    n = len(order)
    if max_checks is None:
        max_checks = 10 * n * n
    order = np.array(order, dtype=np.int64)
    checks = 0
    improved = True
    while improved and checks < max_checks:
        improved = False
        # sequence with the start prepended: node 0 is the fixed start
        seq = np.vstack([np.asarray(start, dtype=float)[None, :], P[order]])
        for i in range(0, n - 1):
            # reverse seq[i+1 .. j]; edges (i, i+1) and (j, j+1) are replaced
            a, b = seq[i], seq[i + 1]
            j = np.arange(i + 1, n + 1)
            c = seq[j]
            d_ab = np.linalg.norm(b - a)
            d_cd = np.zeros(len(j))
            has_next = j < n
            d_cd[has_next] = np.linalg.norm(seq[j[has_next] + 1] - c[has_next], axis=1)
            d_ac = np.linalg.norm(c - a, axis=1)
            d_bd = np.zeros(len(j))
            d_bd[has_next] = np.linalg.norm(seq[j[has_next] + 1] - b, axis=1)
            delta = (d_ac + d_bd) - (d_ab + d_cd)
            checks += len(j)
            k = int(np.argmin(delta))
            if delta[k] < -1e-12:
                jj = int(j[k])
                order[i:jj] = order[i:jj][::-1]
                seq[i + 1: jj + 1] = seq[i + 1: jj + 1][::-1]
                improved = True
            if checks >= max_checks:
                break
    return order


def tsp_tour(target, start, max_checks=None) -> np.ndarray:
    order = nearest_neighbor_tour(target.samples, start)
    return two_opt(target.samples, start, order, max_checks)


def waypoint_control(p, waypoint, model: SystemModel) -> np.ndarray:
    """Full speed toward ``waypoint``, or exactly onto it when it is within one step."""
    d = waypoint - p
    dist = float(np.linalg.norm(d))
    if dist <= model.u_max * model.dt:
        return project_control(d / model.dt, model.u_max)
    return d * (model.u_max / dist)


def track_waypoints(start_state, waypoints, model: SystemModel, steps: int) -> np.ndarray:
    """Open-loop controls visiting ``waypoints`` in order at ``u_max``; zeros once done."""
    p = model.position(np.asarray(start_state, dtype=float)).copy()
    controls = np.zeros((steps, model.control_dim))
    j = 0
    for k in range(steps):
        while j < len(waypoints) and np.linalg.norm(waypoints[j] - p) <= REACH_TOL:
            j += 1
        if j >= len(waypoints):
            break
        controls[k] = waypoint_control(p, waypoints[j], model)
        p = p + model.dt * controls[k]
    return controls


def tsp_plan(target, start, model: SystemModel, steps: int | None = None, domain=None) -> TrajectoryLog:
    """Nearest-neighbor + 2-opt tour over the target samples, tracked open loop.

    Without ``steps`` the log runs until the last waypoint is reached.
    """
    if model.kind != "single_integrator":
        raise ValueError("the TSP baseline tracks waypoints with a single integrator")
    start = np.asarray(start, dtype=float)
    order = tsp_tour(target, start)
    wps = target.samples[order]
    if steps is None:
        seq = np.vstack([start[None, :], wps])
        hops = np.linalg.norm(np.diff(seq, axis=0), axis=1)
        steps = int(np.sum(np.ceil(hops / (model.u_max * model.dt) - 1e-12))) + 1
    U = track_waypoints(start, wps, model, steps)
    X = np.vstack([start[None, :], start + model.dt * np.cumsum(U, axis=0)])[:steps]
    W = X if domain is None else domain.project(X)
    return TrajectoryLog(np.arange(steps) * model.dt, X, W, U[: steps - 1])


class _PathFollower:
    """Drives a single integrator to one goal at a time.

    When the agent is constrained to a mesh the route follows the shortest
    path over mesh edges instead of the chord, which the surface projection
    would pin against folds. A goal is abandoned after ``patience`` steps
    without getting closer by a tenth of a full step.
    """

    def __init__(self, model, domain, patience: int = 5):
        self.model = model
        self.domain = domain
        self.patience = patience
        self.on_surface = model.constrain_to_domain and getattr(domain, "kind", "") == "mesh"
        self.reach = model.u_max * model.dt
        self._queue: list = []

    def set_goal(self, p, goal) -> None:
        via = list(self.domain.surface_path(p, goal)) if self.on_surface else []
        self._queue = via + [np.asarray(goal, dtype=float)]
        self._best = np.inf
        self._stall = 0

    def control(self, p):
        """Next control, or ``None`` once the goal is reached or abandoned."""
        if not self._queue:
            return None
        while len(self._queue) > 1 and np.linalg.norm(self._queue[0] - p) <= self.reach:
            self._queue.pop(0)
            self._best, self._stall = np.inf, 0
        dist = float(np.linalg.norm(self._queue[0] - p))
        if len(self._queue) == 1 and dist <= REACH_TOL:
            return None
        if dist < self._best - 0.1 * self.reach:
            self._best, self._stall = dist, 0
        else:
            self._stall += 1
            if self._stall > self.patience:
                return None
        return waypoint_control(p, self._queue[0], self.model)


class TSPPlanner:
    """Closed-loop tour follower; see :class:`_PathFollower` for the motion."""

    name = "tsp"

    def __init__(self, model, target, domain, patience: int = 5):
        self.model = model
        self.target = target
        self.domain = domain
        self.follower = _PathFollower(model, domain, patience)
        self.waypoints = None
        self._j = 0

    def control(self, x, ctx) -> np.ndarray:
        p = self.model.position(x)
        if self.waypoints is None:
            if self.model.kind != "single_integrator":
                raise ValueError("the TSP baseline tracks waypoints with a single integrator")
            self.waypoints = self.target.samples[tsp_tour(self.target, p)]
            self.follower.set_goal(p, self.waypoints[0])
        while self._j < len(self.waypoints):
            u = self.follower.control(p)
            if u is not None:
                return u
            self._j += 1
            if self._j < len(self.waypoints):
                self.follower.set_goal(p, self.waypoints[self._j])
        return np.zeros(self.model.control_dim)


# ---------------------------------------------------------------------------
# next-best view
# ---------------------------------------------------------------------------

def _segment_point_dist(a, B, C):
    """Distances from points ``C (K, n)`` to segments ``[a, B_j]``: returns ``(J, K)``."""
    AB = B - a
    L2 = np.sum(AB * AB, axis=1)
    AC = C - a
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(L2[:, None] > 0, (AB @ AC.T) / L2[:, None], 0.0)
    t = np.clip(t, 0.0, 1.0)
    # |AC - t AB|^2 = |AC|^2 - 2 t AB.AC + t^2 |AB|^2
    ac2 = np.sum(AC * AC, axis=1)
    d2 = ac2[None, :] - 2.0 * t * (AB @ AC.T) + t * t * L2[:, None]
    return np.sqrt(np.maximum(d2, 0.0))


def nbv_choose(p, covered, target, radius: float):
    """Index of the uncovered sample maximizing newly covered samples per unit path length."""
    unc = np.flatnonzero(~covered)
    if len(unc) == 0:
        return None
    S = target.samples
    cand = S[unc]
    D = _segment_point_dist(p, cand, cand)
    gain = np.sum(D <= radius, axis=1).astype(float)
    length = np.linalg.norm(cand - p, axis=1)
    score = gain / np.maximum(length, 1e-12)
    # ties: highest score, then nearest, then lowest sample index
    order = np.lexsort((unc, length, -score))
    return int(unc[order[0]])


def nbv_plan_step(x, visited: TrajectoryLog, target, model: SystemModel, radius: float, domain=None):
    p = model.position(x)
    pts = visited.domain_points if visited is not None and visited.N else np.empty((0, target.dim))
    w = p if domain is None else domain.project(p)
    covered = covered_mask(np.vstack([pts, w[None, :]]), target, radius)
    j = nbv_choose(p, covered, target, radius)
    if j is None:
        return np.zeros(model.control_dim)
    return waypoint_control(p, target.samples[j], model)


class NBVPlanner:
    """Greedy next-best-view: commit to the best uncovered sample until it is
    reached, covered, or abandoned by the path follower."""

    name = "nbv"

    def __init__(self, model, target, domain, radius: float, patience: int = 5):
        self.model = model
        self.target = target
        self.domain = domain
        self.radius = radius
        self._tree = cKDTree(target.samples)
        self.covered = np.zeros(target.M, dtype=bool)
        self.follower = _PathFollower(model, domain, patience)
        self._blocked = np.zeros(target.M, dtype=bool)
        self._goal = None

    def control(self, x, ctx) -> np.ndarray:
        if self.model.kind != "single_integrator":
            raise ValueError("the NBV baseline steers a single integrator")
        p = self.model.position(x)
        w = self.domain.project(p)
        before = int(self.covered.sum())
        self.covered[self._tree.query_ball_point(w, self.radius)] = True
        if self.covered.sum() > before:
            self._blocked[:] = False
        for _ in range(2):
            if self._goal is None or self.covered[self._goal]:
                self._goal = nbv_choose(p, self.covered | self._blocked, self.target, self.radius)
                if self._goal is None:
                    return np.zeros(self.model.control_dim)
                self.follower.set_goal(p, self.target.samples[self._goal])
            u = self.follower.control(p)
            if u is not None:
                return u
            self._blocked[self._goal] = True
            self._goal = None
        return np.zeros(self.model.control_dim)
