"""Stationary positive-definite kernels with analytic gradients.

All families are normalized so that ``k(a, a) == 1`` and depend only on the
ambient Euclidean distance ``r = |a - b|``:

* gaussian:  ``exp(-r**2 / (2 h**2))``
* laplace:   ``exp(-r / h)``
* matern32:  ``(1 + sqrt(3) r / h) exp(-sqrt(3) r / h)``

Gradients are taken with respect to the first argument. Laplace has no
derivative at ``r == 0``; the zero vector is returned there.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("gaussian", "laplace", "matern32")

_SQRT3 = np.sqrt(3.0)


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    family: str = "gaussian"
    length_scale: float = 0.2

    def __post_init__(self):
        fam = str(self.family).lower().replace("-", "").replace("_", "")
        if fam == "matern":
            fam = "matern32"
        if fam not in FAMILIES:
            raise KernelError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        h = float(self.length_scale)
        if not np.isfinite(h) or h <= 0:
            raise KernelError(f"length_scale must be positive and finite, got {self.length_scale!r}")
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "length_scale", h)

    @classmethod
    def from_config(cls, cfg: dict) -> "KernelSpec":
        return cls(family=cfg.get("family", "gaussian"), length_scale=cfg["length_scale"])

    def to_config(self) -> dict:
        return {"family": self.family, "length_scale": self.length_scale}

    # -- radial profile -------------------------------------------------
    def radial(self, r: np.ndarray) -> np.ndarray:
        h = self.length_scale
        if self.family == "gaussian":
            return np.exp(-0.5 * (r / h) ** 2)
        if self.family == "laplace":
            return np.exp(-r / h)
        s = _SQRT3 * r / h
        return (1.0 + s) * np.exp(-s)

    # -- batched evaluation ---------------------------------------------
    def matrix(self, A, B) -> np.ndarray:
        """Kernel values between point sets ``A (N, n)`` and ``B (M, n)``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if self.family == "gaussian":
            return np.exp(sqdist(A, B) * (-0.5 / self.length_scale**2))
        return self.radial(np.sqrt(sqdist(A, B)))

    def value_and_grad(self, A, B):
        """Values ``(N, M)`` and gradients w.r.t. ``A``, shape ``(N, M, n)``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        h = self.length_scale
        D = A[:, None, :] - B[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", D, D)
        if self.family == "gaussian":
            K = np.exp(r2 * (-0.5 / h**2))
            return K, D * (K * (-1.0 / h**2))[:, :, None]
        r = np.sqrt(r2)
        if self.family == "laplace":
            K = np.exp(-r / h)
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(r > 0, -K / (h * r), 0.0)
            return K, D * scale[:, :, None]
        s = _SQRT3 * r / h
        ex = np.exp(-s)
        K = (1.0 + s) * ex
        return K, D * (ex * (-3.0 / h**2))[:, :, None]

    def weighted_grad(self, A, B, weights) -> np.ndarray:
        """``sum_j weights[..., j] * grad_a k(A_i, B_j)`` without the (N, M, n) temporary.

        ``weights`` has shape ``(M,)`` or ``(N, M)``; returns ``(N, n)``.
        """
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        K, dKdr_over_r = self._radial_terms(A, B)
        W = dKdr_over_r * weights
        return A * W.sum(axis=1)[:, None] - W @ B

    def value_and_weighted_grad(self, A, B, weights_fn):
        """Like :meth:`weighted_grad` but the weights may depend on the values.

        ``weights_fn(K) -> (N, M)`` is called with the kernel matrix.
        """
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        K, dKdr_over_r = self._radial_terms(A, B)
        W = dKdr_over_r * weights_fn(K)
        return K, A * W.sum(axis=1)[:, None] - W @ B

    def _radial_terms(self, A, B):
        # returns K and (dk/dr)/r, so that grad_a k = (dk/dr)/r * (a - b)
        h = self.length_scale
        r2 = sqdist(A, B)
        if self.family == "gaussian":
            K = np.exp(r2 * (-0.5 / h**2))
            return K, K * (-1.0 / h**2)
        r = np.sqrt(r2)
        if self.family == "laplace":
            K = np.exp(-r / h)
            with np.errstate(divide="ignore", invalid="ignore"):
                g = np.where(r > 0, -K / (h * r), 0.0)
            return K, g
        s = _SQRT3 * r / h
        ex = np.exp(-s)
        return (1.0 + s) * ex, ex * (-3.0 / h**2)


def sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared distances, computed by differences (no cancellation)."""
    n = A.shape[1]
    if B.shape[1] != n:
        raise KernelError(f"dimension mismatch: {n} vs {B.shape[1]}")
    out = (A[:, 0, None] - B[None, :, 0]) ** 2
    for d in range(1, n):
        out += (A[:, d, None] - B[None, :, d]) ** 2
    return out


def _check_pair(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise KernelError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise KernelError("non-finite kernel input")
    return a, b


def kernel_eval(spec: KernelSpec, a, b) -> float:
    a, b = _check_pair(a, b)
    return float(spec.radial(np.sqrt(np.sum((a - b) ** 2))))


def kernel_grad(spec: KernelSpec, a, b) -> np.ndarray:
    """Gradient of ``k(a, b)`` with respect to ``a``."""
    a, b = _check_pair(a, b)
    _, G = spec.value_and_grad(a[None, :], b[None, :])
    return G[0, 0]


def gram(spec: KernelSpec, X) -> np.ndarray:
    return spec.matrix(X, X)
