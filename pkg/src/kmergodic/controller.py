"""Ergodic feedback law and receding-horizon planner over the extended state (x, e).

The greedy law descends the visitation error along the kernel gradient,

    u = -alpha( g(x)^T (1/M) sum_i e_i grad_x k(sigma(x), omega_i) ),

with ``alpha`` the projection onto ``|u| <= u_max``.

The receding-horizon planner rolls the error recursion forward from the
current error state only; past visitation enters solely through ``e``, so the
cost of a plan is O(iterations * H * M) at any mission time.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import SystemModel, project_control, project_controls, rollout, sigma_batch, sigma_map
from .kernels import KernelSpec
from .visitation import ErrorState


class PlannerError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    mode: str = "greedy"
    horizon: int = 1
    iterations: int = 20
    step_size: float = 1.0
    embedding_kernel: KernelSpec = field(default_factory=KernelSpec)
    objective_kernel: KernelSpec = field(default_factory=KernelSpec)
    control_weight: float = 0.0
    fallback: bool = False

    def __post_init__(self):
        if self.mode not in ("greedy", "mpc"):
            raise ValueError(f"unknown planner mode {self.mode!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.control_weight < 0:
            raise ValueError("control_weight must be nonnegative")

    def mpc(self, **kw) -> "PlannerConfig":
        return replace(self, mode="mpc", **kw)


# ---------------------------------------------------------------------------
# greedy law
# ---------------------------------------------------------------------------

def greedy_direction(x, e: ErrorState, model: SystemModel, target, kernel: KernelSpec, domain) -> np.ndarray:
    """Unsaturated steepest-descent control ``-g^T J_sigma^T (1/M) sum_i e_i grad k``."""
    if e.M != target.M:
        raise ValueError(f"error state has {e.M} entries but target has {target.M}")
    p = model.position(x)
    W, vjp = sigma_batch(model, domain, p[None, :])
    grad_w = kernel.weighted_grad(W, target.samples, e.e / target.M)[0]
    grad_x = np.zeros(model.state_dim)
    grad_x[: model.n] = vjp(grad_w[None, :])[0]
    return -(model.input_matrix(x).T @ grad_x)


def greedy_control(x, e: ErrorState, model: SystemModel, target, cfg: PlannerConfig, domain) -> np.ndarray:
    """Saturated steepest-descent law; zero while the error state is zero.

    For the double integrator ``g^T grad_x`` only sees velocity, which the
    visitation term does not depend on, so the law returns zero there; use the
    receding-horizon planner for systems with drift.
    """
    u = greedy_direction(x, e, model, target, cfg.embedding_kernel, domain)
    return project_control(u, model.u_max)


# ---------------------------------------------------------------------------
# receding-horizon objective
# ---------------------------------------------------------------------------

def _current_error(x0, e: ErrorState, model, target, kernel, domain):
    # error once the current state has been recorded (left-endpoint step)
    w0 = sigma_map(model, domain, x0)
    mu = target.mu(kernel)
    return e.e + model.dt * (kernel.matrix(w0[None, :], target.samples)[0] - mu)


def kme_objective(U, x0, e_now, model: SystemModel, target, kernel: KernelSpec, domain,
                  control_weight: float = 0.0, with_grad: bool = True, scale: float = 1.0):
    """Terminal visitation-error objective and its exact gradient w.r.t. ``U``.

    ``e_now`` is the error after the current state is recorded. The rollout
    appends one error increment per planned state:

        e_{tau+1} = e_tau + dt (k(sigma(x_{tau+1}), .) - mu_q),
        J = scale * ((1/M) |e_H|^2 + control_weight * dt * sum |u|^2).

    ``scale`` does not move the minimizer. The planner sets it to
    ``1 / (kappa * t_end**2)``: the unscaled norm grows like ``t**2`` and its
    magnitude is set by the sample-feature kernel, so after scaling a fixed
    solver step means the same at every mission time and for every target. The gradient is
    accumulated in reverse through the error sum, the projection Jacobian and
    the integrator.
    """
    U = np.asarray(U, dtype=float)
    H = len(U)
    dt = model.dt
    M = target.M
    mu = target.mu(kernel)
    W, adjoint = rollout(model, domain, x0, U)
    K, gr = kernel._radial_terms(W, target.samples)
    e_H = e_now + dt * (K.sum(axis=0) - H * mu)
    J = scale * (float(np.mean(e_H**2)) + control_weight * dt * float(np.sum(U * U)))
    if not with_grad:
        return J, None
    # dJ/dW_tau = (2 dt / M) sum_i e_H[i] grad k(W_tau, omega_i)
    Wt = gr * (scale * 2.0 * dt / M * e_H)
    dW = W * Wt.sum(axis=1)[:, None] - Wt @ target.samples
    grad = adjoint(dW) + scale * 2.0 * control_weight * dt * U
    return J, grad


def horizon_scale(e: ErrorState, horizon: int, kappa: float = 1.0) -> float:
    """``1 / (kappa * t_end**2)`` with ``t_end`` the time at the end of the horizon."""
    return 1.0 / (kappa * ((e.steps + 1 + horizon) * e.dt) ** 2)


def adjoint_gradient(U, x, e: ErrorState, model, target, cfg: PlannerConfig, domain, scale=1.0):
    e_now = _current_error(x, e, model, target, cfg.embedding_kernel, domain)
    return kme_objective(U, x, e_now, model, target, cfg.embedding_kernel, domain,
                         cfg.control_weight, True, scale)[1]


# ---------------------------------------------------------------------------
# projected gradient solver
# ---------------------------------------------------------------------------

@dataclass
class SolveInfo:
    objective: float
    zero_objective: float
    initial_objective: float
    grad_norm: float
    iterations: int


def _descend(fun, U, u_max, iterations, step_size, J_zero):
    best_U, best_J = np.zeros_like(U), J_zero
    J_init = None
    gnorm = 0.0
    for it in range(iterations):
        J, G = fun(U, True)
        if not (np.isfinite(J) and np.all(np.isfinite(G))):
            raise PlannerError(f"non-finite objective at solver iterate {it}")
        if J_init is None:
            J_init = J
        if J < best_J:
            best_U, best_J = U, J
        gnorm = float(np.linalg.norm(G))
        U = project_controls(U - step_size * G, u_max)
    J, _ = fun(U, False)
    if not np.isfinite(J):
        raise PlannerError(f"non-finite objective at solver iterate {iterations}")
    if J < best_J:
        best_U, best_J = U, J
    return best_U, best_J, J_init, gnorm


def probe_plans(horizon: int, m: int, u_max: float) -> np.ndarray:
    """Constant full-speed plans along the coordinate axes and the diagonals, ``(P, horizon, m)``."""
    dirs = [s * row for row in np.eye(m) for s in (1.0, -1.0)]
    dirs += [np.array(signs) / np.sqrt(m) for signs in itertools.product((1.0, -1.0), repeat=m)] if m > 1 else []
    return np.stack([np.tile(u_max * d, (horizon, 1)) for d in dirs])


def projected_descent(fun, U0, u_max: float, iterations: int, step_size: float, fallback: bool = False):
    """Fixed-step projected gradient descent on the per-step control balls.

    Returns the best iterate seen, so the result is never worse than the zero
    sequence. With ``fallback``, a solve that cannot beat zero also tries the
    constant plans of :func:`probe_plans`; this gets the agent off kinks of
    the objective (e.g. mesh vertices) where no single gradient points downhill.
    """
    U = project_controls(U0, u_max)
    J_zero, _ = fun(np.zeros_like(U), False)
    best_U, best_J, J_init, gnorm = _descend(fun, U, u_max, iterations, step_size, J_zero)
    if fallback and not best_J < J_zero:
        for P in probe_plans(*U.shape, u_max):
            J, _ = fun(P, False)
            if np.isfinite(J) and J < best_J:
                best_U, best_J = P, J
    return best_U, SolveInfo(best_J, J_zero, J_init, gnorm, iterations)


def shift_warm_start(U_prev, horizon: int, m: int) -> np.ndarray:
    if U_prev is None or len(U_prev) == 0:
        return np.zeros((horizon, m))
    U = np.zeros((horizon, m))
    tail = U_prev[1:horizon + 1]
    U[: len(tail)] = tail
    return U


def mpc_plan(x, e: ErrorState, model: SystemModel, target, cfg: PlannerConfig, domain, warm_start=None):
    """Plan ``cfg.horizon`` controls minimizing the predicted terminal error norm.

    Returns ``(U, info)``; only ``U[0]`` is meant to be applied.
    """
    if e.M != target.M:
        raise ValueError(f"error state has {e.M} entries but target has {target.M}")
    kernel = cfg.embedding_kernel
    e_now = _current_error(x, e, model, target, kernel, domain)
    U0 = np.zeros((cfg.horizon, model.control_dim)) if warm_start is None else warm_start
    scale = horizon_scale(e, cfg.horizon, target.kappa(kernel))

    def fun(U, with_grad):
        return kme_objective(U, x, e_now, model, target, kernel, domain, cfg.control_weight, with_grad, scale)

    return projected_descent(fun, U0, model.u_max, cfg.iterations, cfg.step_size, cfg.fallback)


class KMEPlanner:
    """Stateful wrapper: greedy law, or receding horizon with shift-and-append warm starts."""

    name = "kme"

    def __init__(self, cfg: PlannerConfig, model: SystemModel, target, domain):
        self.cfg = cfg
        self.model = model
        self.target = target
        self.domain = domain
        self._prev = None
        self.last_info: SolveInfo | None = None

    def control(self, x, ctx) -> np.ndarray:
        if self.cfg.mode == "greedy":
            return greedy_control(x, ctx.error, self.model, self.target, self.cfg, self.domain)
        warm = shift_warm_start(self._prev, self.cfg.horizon, self.model.control_dim)
        U, info = mpc_plan(x, ctx.error, self.model, self.target, self.cfg, self.domain, warm)
        self._prev = U
        self.last_info = info
        return U[0].copy()
