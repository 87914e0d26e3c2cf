"""Post-hoc trajectory metrics.

Everything here works from a stored trajectory rather than the recursive
error state, so these functions double as oracles for :mod:`visitation`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .domain import mean_nn_spacing
from .kernels import KernelSpec

_CHUNK = 2048


@dataclass
class TrajectoryLog:
    times: np.ndarray
    states: np.ndarray
    domain_points: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.domain_points = np.atleast_2d(np.asarray(self.domain_points, dtype=float))
        self.controls = np.asarray(self.controls, dtype=float)
        n = len(self.times)
        if len(self.states) != n or len(self.domain_points) != n:
            raise ValueError("times, states and domain_points must have equal length")
        if n and self.controls.size and len(self.controls) != n - 1:
            raise ValueError(f"expected {n - 1} controls, got {len(self.controls)}")

    @property
    def N(self) -> int:
        return len(self.times)

    @property
    def dt(self) -> float:
        if self.N < 2:
            raise ValueError("dt undefined for fewer than two samples")
        return float(self.times[1] - self.times[0])

    def prefix(self, n: int) -> "TrajectoryLog":
        return TrajectoryLog(self.times[:n], self.states[:n], self.domain_points[:n],
                             self.controls[: max(n - 1, 0)])

    @classmethod
    def from_points(cls, points, dt: float = 1.0) -> "TrajectoryLog":
        W = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(W)
        return cls(np.arange(n) * dt, W, W, np.zeros((max(n - 1, 0), W.shape[1])))


def _pair_sum(kernel: KernelSpec, A, B) -> float:
    # fixed chunk order keeps the summation deterministic
    total = 0.0
    for i in range(0, len(A), _CHUNK):
        total += float(kernel.matrix(A[i:i + _CHUNK], B).sum())
    return total


def emmd_oracle(log: TrajectoryLog, target, kernel: KernelSpec) -> float:
    """Monte-Carlo ergodic MMD of the whole trajectory (left Riemann sums)."""
    W = log.domain_points
    N = len(W)
    if N == 0:
        raise ValueError("empty trajectory")
    self_term = _pair_sum(kernel, W, W) / N**2
    cross = _pair_sum(kernel, W, target.samples) / (N * target.M)
    return self_term - 2.0 * cross + target.z(kernel)


def feature_emmd(log: TrajectoryLog, target, kernel: KernelSpec) -> float:
    """Ergodic MMD under the sample-feature kernel ``k_M(a, b) = mean_i k(a, w_i) k(b, w_i)``.

    This is the kernel whose MMD equals the sample-evaluated error norm
    ``(1/M) sum_i e_i**2 / t**2`` exactly. Computed here through the three
    double sums, independently of the error recursion.
    """
    W = log.domain_points
    N = len(W)
    if N == 0:
        raise ValueError("empty trajectory")
    M = target.M
    Phi = kernel.matrix(W, target.samples)
    Psi = kernel.matrix(target.samples, target.samples)
    traj_traj = float(np.sum(Phi @ Phi.T)) / (N * N * M)
    traj_tgt = float(np.sum(Phi @ Psi.T)) / (N * M * M)
    tgt_tgt = float(np.sum(Psi @ Psi.T)) / (M**3)
    return traj_traj - 2.0 * traj_tgt + tgt_tgt


def default_coverage_radius(target) -> float:
    return 2.0 * mean_nn_spacing(target.samples)


def covered_mask(points, target, radius: float) -> np.ndarray:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if radius <= 0:
        raise ValueError("coverage radius must be positive")
    if len(P) == 0:
        return np.zeros(target.M, dtype=bool)
    d, _ = cKDTree(P).query(target.samples, k=1)
    return d <= radius


def coverage_fraction(log: TrajectoryLog, target, radius: float) -> float:
    return float(np.mean(covered_mask(log.domain_points, target, radius)))


def coverage_trace(points, target, radius: float) -> np.ndarray:
    """Coverage fraction after each prefix of ``points``."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    tree = cKDTree(target.samples)
    covered = np.zeros(target.M, dtype=bool)
    out = np.empty(len(P))
    for i, hits in enumerate(tree.query_ball_point(P, radius)):
        covered[hits] = True
        out[i] = covered.mean()
    return out


def time_averaged_histogram(log: TrajectoryLog, target, kernel: KernelSpec) -> np.ndarray:
    """Empirical visitation embedding ``(1/N) sum_t k(w_t, omega_i)`` at each sample."""
    W = log.domain_points
    if len(W) == 0:
        raise ValueError("empty trajectory")
    acc = np.zeros(target.M)
    for i in range(0, len(W), _CHUNK):
        acc += kernel.matrix(W[i:i + _CHUNK], target.samples).sum(axis=0)
    return acc / len(W)
