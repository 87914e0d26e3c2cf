"""Control-affine integrator models, the state-to-domain map and control saturation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SYSTEMS = ("single_integrator", "double_integrator")
SIGMAS = ("identity", "project")


class ControlBoundError(ValueError):
    pass


@dataclass(frozen=True)
class SystemModel:
    kind: str = "single_integrator"
    n: int = 2
    u_max: float = 1.0
    dt: float = 0.05
    sigma: str = "identity"
    constrain_to_domain: bool = False

    def __post_init__(self):
        if self.kind not in SYSTEMS:
            raise ValueError(f"unknown system {self.kind!r}; expected one of {SYSTEMS}")
        if self.sigma not in SIGMAS:
            raise ValueError(f"unknown sigma {self.sigma!r}; expected one of {SIGMAS}")
        if not self.u_max > 0:
            raise ValueError("u_max must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @classmethod
    def from_config(cls, cfg: dict, n: int) -> "SystemModel":
        return cls(
            kind=cfg.get("system", "single_integrator"),
            n=n,
            u_max=float(cfg.get("u_max", 1.0)),
            dt=float(cfg.get("dt", 0.05)),
            sigma=cfg.get("sigma", "identity"),
            constrain_to_domain=bool(cfg.get("constrain_to_domain", False)),
        )

    def to_config(self) -> dict:
        return {
            "system": self.kind,
            "u_max": self.u_max,
            "dt": self.dt,
            "sigma": self.sigma,
            "constrain_to_domain": self.constrain_to_domain,
        }

    @property
    def state_dim(self) -> int:
        return self.n if self.kind == "single_integrator" else 2 * self.n

    @property
    def control_dim(self) -> int:
        return self.n

    def position(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)[..., : self.n]

    def initial_state(self, position) -> np.ndarray:
        p = np.asarray(position, dtype=float).ravel()
        if self.kind == "single_integrator":
            return p.copy()
        return np.concatenate([p, np.zeros(self.n)])

    def drift(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "single_integrator":
            return np.zeros_like(x)
        return np.concatenate([x[self.n:], np.zeros(self.n)])

    def input_matrix(self, x=None) -> np.ndarray:
        if self.kind == "single_integrator":
            return np.eye(self.n)
        return np.vstack([np.zeros((self.n, self.n)), np.eye(self.n)])

    # -- batched rollouts ---------------------------------------------------
    def rollout_positions(self, x0, U) -> np.ndarray:
        """Positions after each of the controls ``U (H, n)``; explicit Euler, no domain constraint."""
        x0 = np.asarray(x0, dtype=float)
        dt = self.dt
        if self.kind == "single_integrator":
            return x0 + dt * np.cumsum(U, axis=0)
        p0, v0 = x0[: self.n], x0[self.n:]
        # velocity *before* each step: v0, v1, ..., v_{H-1}
        V = v0 + dt * np.cumsum(U, axis=0)
        Vprev = np.vstack([v0[None, :], V[:-1]])
        return p0 + dt * np.cumsum(Vprev, axis=0)

    def rollout_adjoint(self, G) -> np.ndarray:
        """Map ``dJ/dP`` (from :meth:`rollout_positions`) to ``dJ/dU``."""
        dt = self.dt
        if self.kind == "single_integrator":
            return dt * np.cumsum(G[::-1], axis=0)[::-1]
        # dJ/dVprev_s = dt * sum_{tau >= s} G_tau ; Vprev_s = v0 + dt*sum_{j < s} u_j
        dVprev = dt * np.cumsum(G[::-1], axis=0)[::-1]
        out = np.zeros_like(G)
        # dJ/du_j = dt * sum_{s > j} dVprev_s
        tail = np.cumsum(dVprev[::-1], axis=0)[::-1]
        out[:-1] = dt * tail[1:]
        return out


def project_control(u_raw, u_max: float) -> np.ndarray:
    """Exact projection onto the ball ``|u| <= u_max``."""
    u = np.asarray(u_raw, dtype=float)
    norm = np.linalg.norm(u)
    if norm <= u_max:
        return u.copy()
    return u * (u_max / norm)


def project_controls(U, u_max: float) -> np.ndarray:
    """Row-wise :func:`project_control`."""
    U = np.asarray(U, dtype=float)
    norms = np.linalg.norm(U, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > u_max, u_max / norms, 1.0)
    return U * scale


def step(model: SystemModel, x, u, domain=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.linalg.norm(u) > model.u_max + 1e-12:
        raise ControlBoundError(f"|u| = {np.linalg.norm(u):.6g} exceeds u_max = {model.u_max}")
    x_new = x + model.dt * (model.drift(x) + model.input_matrix(x) @ u)
    if model.constrain_to_domain and domain is not None:
        x_new = x_new.copy()
        x_new[: model.n] = domain.project(x_new[: model.n])
    return x_new


def _ambient(model: SystemModel, domain) -> bool:
    # identity on a mesh keeps the ambient position as the visited point
    return model.sigma == "identity" and domain.kind == "mesh"


def sigma_map(model: SystemModel, domain, x) -> np.ndarray:
    """Visited point for state ``x``.

    Boxes clamp under either setting. On meshes ``project`` returns the closest
    surface point and ``identity`` the ambient position itself.
    """
    p = model.position(x)
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite state")
    if _ambient(model, domain):
        return np.array(p, dtype=float)
    return domain.project(p)


def sigma_batch(model: SystemModel, domain, P, generalized: bool = True):
    """``sigma`` applied to rows of ``P`` plus a vector-Jacobian product ``G -> J_sigma^T G``.

    ``generalized`` selects the non-vanishing surface Jacobian on meshes (see
    ``MeshDomain.project_with_jacobian``); pass ``False`` for the exact one.
    """
    P = np.asarray(P, dtype=float)
    if _ambient(model, domain):
        return P.copy(), lambda G: G
    return domain.project_with_vjp(P, generalized)


def rollout(model: SystemModel, domain, x0, U, generalized: bool = True):
    """Visited points of a planned control sequence plus the adjoint ``dJ/dW -> dJ/dU``.

    Without ``constrain_to_domain`` the positions come from the batched
    integrator rollout and ``sigma`` is applied afterwards. With it the
    rollout repeats ``p <- project(p + dt u)`` step by step, matching
    :func:`step`, and the adjoint chains the projection Jacobians.
    """
    U = np.asarray(U, dtype=float)
    if not model.constrain_to_domain:
        P = model.rollout_positions(x0, U)
        W, vjp = sigma_batch(model, domain, P, generalized)
        return W, lambda G: model.rollout_adjoint(vjp(G))
    if model.kind != "single_integrator":
        raise ValueError("constrained rollouts are defined for the single integrator only")
    dt = model.dt
    H, n = U.shape
    W = np.empty((H, n))
    J = np.empty((H, n, n))
    p = model.position(x0)
    for k in range(H):
        q, Jk = domain.project_with_jacobian((p + dt * U[k])[None, :], generalized)
        p = q[0]
        W[k] = p
        J[k] = Jk[0]

    def adjoint(G):
        out = np.empty_like(G)
        a = np.zeros(n)
        for k in range(H - 1, -1, -1):
            a = J[k].T @ (G[k] + a)
            out[k] = dt * a
        return out

    return W, adjoint
