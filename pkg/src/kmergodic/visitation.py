"""Recursive visitation error state.

The error functional ``e(t) = t (mu_rho - mu_q)`` is stored by its values at
the target samples and advanced with explicit Euler,

    e_i <- e_i + dt * (k(w, omega_i) - mu_q[i]),

which costs O(M) per step regardless of elapsed time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import KernelSpec


@dataclass(frozen=True)
class ErrorState:
    e: np.ndarray
    dt: float
    steps: int = 0

    @property
    def t(self) -> float:
        return self.steps * self.dt

    @property
    def M(self) -> int:
        return self.e.size


def error_init(target, dt: float) -> ErrorState:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return ErrorState(np.zeros(target.M), float(dt), 0)


def error_increment(target, kernel: KernelSpec, w) -> np.ndarray:
    w = np.asarray(w, dtype=float).ravel()
    if w.size != target.dim:
        raise ValueError(f"domain point has dimension {w.size}, target samples have {target.dim}")
    return kernel.matrix(w[None, :], target.samples)[0] - target.mu(kernel)


def error_step(state: ErrorState, target, kernel: KernelSpec, w) -> ErrorState:
    if state.M != target.M:
        raise ValueError(f"error state has {state.M} entries but target has {target.M} samples")
    e = state.e + state.dt * error_increment(target, kernel, w)
    return ErrorState(e, state.dt, state.steps + 1)


def error_metric(state: ErrorState, target=None) -> float:
    """Sample approximation ``(1/M) sum_i e_i**2`` of the time-augmented metric."""
    return float(np.mean(state.e**2))


def batch_error(domain_points, target, kernel: KernelSpec, dt: float) -> np.ndarray:
    """Error vector recomputed from a full list of visited domain points."""
    W = np.atleast_2d(np.asarray(domain_points, dtype=float))
    K = kernel.matrix(W, target.samples)
    return dt * K.sum(axis=0) - (len(W) * dt) * target.mu(kernel)


def write_error_rows(writer, state: ErrorState) -> None:
    writer.writerow([repr(state.t)] + [repr(float(v)) for v in state.e])
