"""Coverage domains, target distributions and their sample embeddings."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .kernels import KernelSpec

MAX_REJECTION_DRAWS = 10**6


class DomainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# point-triangle projection
# ---------------------------------------------------------------------------

# region codes returned by closest_point_on_triangles
FACE, VERT_A, VERT_B, VERT_C, EDGE_AB, EDGE_AC, EDGE_BC = range(7)


def closest_point_on_triangles(P, A, B, C, return_region: bool = False):
    """Closest points on triangles ``(A[i], B[i], C[i])`` to ``P[i]``.

    Vectorized form of the Voronoi-region walk from Ericson, *Real-Time
    Collision Detection* (2004), section 5.1.5. All inputs are ``(K, 3)``.
    With ``return_region`` also returns which feature (face, edge or vertex)
    holds each closest point.
    """
    P, A, B, C = (np.asarray(v, dtype=float) for v in (P, A, B, C))
    ab = B - A
    ac = C - A
    ap = P - A
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = P - B
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = P - C
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    region = np.full(len(P), FACE, dtype=np.int8)
    done = np.zeros(len(P), dtype=bool)
    for code, mask in (
        (VERT_A, (d1 <= 0) & (d2 <= 0)),
        (VERT_B, (d3 >= 0) & (d4 <= d3)),
        (EDGE_AB, (vc <= 0) & (d1 >= 0) & (d3 <= 0)),
        (VERT_C, (d6 >= 0) & (d5 <= d6)),
        (EDGE_AC, (vb <= 0) & (d2 >= 0) & (d6 <= 0)),
        (EDGE_BC, (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)),
    ):
        m = mask & ~done
        region[m] = code
        done |= m

    # barycentric weights (v on B, w on C) per region
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    zero, one = np.zeros_like(v), np.ones_like(v)
    # rows follow the region codes: face, A, B, C, AB, AC, BC
    cols = np.arange(len(P))
    v = np.stack([v, zero, one, zero, t_ab, zero, 1.0 - t_bc])[region, cols]
    w = np.stack([w, zero, zero, one, zero, t_ac, t_bc])[region, cols]
    out = A + ab * v[:, None] + ac * w[:, None]
    # degenerate (collinear) triangles: best clamped projection onto the three edges
    nrm = np.cross(ab, ac)
    scale = np.maximum(np.einsum("ij,ij->i", ab, ab), np.einsum("ij,ij->i", ac, ac))
    bad = ~np.all(np.isfinite(out), axis=1) | (np.einsum("ij,ij->i", nrm, nrm) <= 1e-24 * scale**2)
    if np.any(bad):
        best = np.full(bad.sum(), np.inf)
        for code, x, y in ((EDGE_AB, A, B), (EDGE_AC, A, C), (EDGE_BC, B, C)):
            x, y, p = x[bad], y[bad], P[bad]
            d = y - x
            dd = np.einsum("ij,ij->i", d, d)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(dd > 0, np.clip(np.einsum("ij,ij->i", p - x, d) / dd, 0.0, 1.0), 0.0)
            q = x + t[:, None] * d
            dist = np.sum((q - p) ** 2, axis=1)
            better = dist < best
            best[better] = dist[better]
            idx = np.flatnonzero(bad)[better]
            out[idx] = q[better]
            region[idx] = code
    return (out, region) if return_region else out


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoxDomain:
    lo: np.ndarray
    hi: np.ndarray
    kind: str = field(default="box", init=False)

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).ravel()
        hi = np.asarray(self.hi, dtype=float).ravel()
        if lo.shape != hi.shape or lo.size == 0:
            raise DomainError("box bounds must be per-dimension [lo, hi] pairs")
        if not np.all(lo < hi):
            raise DomainError(f"box requires lo < hi in every dimension, got {lo} / {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_bounds(cls, bounds) -> "BoxDomain":
        b = np.asarray(bounds, dtype=float)
        return cls(b[:, 0], b[:, 1])

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, P, tol: float = 0.0) -> np.ndarray:
        P = np.atleast_2d(P)
        return np.all((P >= self.lo - tol) & (P <= self.hi + tol), axis=1)

    def project(self, P) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        return np.clip(P, self.lo, self.hi)

    def project_jacobian_mask(self, P) -> np.ndarray:
        """Diagonal of the clamp Jacobian (1 inside, 0 where clamped)."""
        P = np.asarray(P, dtype=float)
        return ((P > self.lo) & (P < self.hi)).astype(float)

    def project_with_jacobian(self, P, generalized: bool = False):
        """Clamped rows and their Jacobians.

        The exact clamp Jacobian zeroes every clamped coordinate, so a plan
        pressing into a wall gets no signal to leave it. ``generalized=True``
        passes gradients straight through (identity) for planning.
        """
        P = np.atleast_2d(np.asarray(P, dtype=float))
        mask = np.ones_like(P) if generalized else self.project_jacobian_mask(P)
        return self.project(P), mask[:, :, None] * np.eye(self.dim)

    def project_with_vjp(self, P, generalized: bool = False):
        """Projected rows of ``P`` and a map ``G -> J^T G`` applied row-wise."""
        P = np.asarray(P, dtype=float)
        if generalized:
            return self.project(P), lambda G: G
        mask = self.project_jacobian_mask(P)
        return self.project(P), lambda G: G * mask

    def sample_uniform(self, rng, n: int) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))


def barycentric(P, A, B, C) -> np.ndarray:
    """Barycentric coordinates ``(K, 3)`` of points lying in triangles ``(A, B, C)``."""
    v0, v1, v2 = B - A, C - A, P - A
    d00 = np.einsum("ij,ij->i", v0, v0)
    d01 = np.einsum("ij,ij->i", v0, v1)
    d11 = np.einsum("ij,ij->i", v1, v1)
    d20 = np.einsum("ij,ij->i", v2, v0)
    d21 = np.einsum("ij,ij->i", v2, v1)
    den = d00 * d11 - d01 * d01
    den = np.where(den > 0, den, 1.0)
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    return np.stack([1.0 - v - w, v, w], axis=1)


class MeshDomain:
    """Triangle mesh surface embedded in R^3.

    Closest-point queries use a k-d tree over triangle centroids; every
    triangle is bounded by a sphere around its centroid, so a candidate set
    gathered within ``best + max_radius`` is guaranteed to contain the exact
    minimizer.
    """

    kind = "mesh"

    def __init__(self, vertices, faces):
        V = np.asarray(vertices, dtype=float)
        F = np.asarray(faces, dtype=np.int64)
        if V.ndim != 2 or V.shape[1] != 3:
            raise DomainError("mesh vertices must be (n, 3)")
        if F.ndim != 2 or F.shape[1] != 3 or len(F) == 0:
            raise DomainError("mesh needs at least one triangle")
        if F.min() < 0 or F.max() >= len(V):
            raise DomainError("triangle index out of range")
        if not np.all(np.isfinite(V)):
            raise DomainError("non-finite mesh vertex")
        self.vertices = V
        self.faces = F
        self._A, self._B, self._C = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
        self.areas = 0.5 * np.linalg.norm(np.cross(self._B - self._A, self._C - self._A), axis=1)
        if not self.areas.sum() > 0:
            raise DomainError("mesh has zero surface area")
        self.centroids = (self._A + self._B + self._C) / 3.0
        cross = np.cross(self._B - self._A, self._C - self._A)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.normals = np.nan_to_num(cross / np.linalg.norm(cross, axis=1, keepdims=True))
        # area-weighted vertex normals (cross already carries twice the area)
        vn = np.zeros_like(V)
        for c in range(3):
            np.add.at(vn, F[:, c], cross)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.vertex_normals = np.nan_to_num(vn / np.linalg.norm(vn, axis=1, keepdims=True))
        radii = np.max(
            np.stack([np.linalg.norm(X - self.centroids, axis=1) for X in (self._A, self._B, self._C)]),
            axis=0,
        )
        self._max_radius = float(radii.max())
        self._tree = cKDTree(self.centroids)
        self._graph = None
        self.lo = V.min(axis=0)
        self.hi = V.max(axis=0)

    dim = 3

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def project(self, P) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        single = P.ndim == 1
        Q = np.atleast_2d(P)
        if not np.all(np.isfinite(Q)):
            raise DomainError("non-finite query point")
        out = self._project_batch(Q)[0]
        return out[0] if single else out

    def distance(self, P) -> np.ndarray:
        P = np.atleast_2d(np.asarray(P, dtype=float))
        return np.linalg.norm(self._project_batch(P)[0] - P, axis=1)

    def contains(self, P, tol: float = 1e-6) -> np.ndarray:
        return self.distance(P) <= tol

    def _project_batch(self, Q):
        nq = len(Q)
        k0 = min(48, len(self.faces))
        cdist, idx = self._tree.query(Q, k=k0)
        cdist = np.asarray(cdist).reshape(nq, k0)
        idx = np.asarray(idx).reshape(nq, k0)
        rows = np.repeat(np.arange(nq), k0)
        cols = idx.ravel()
        cp, reg = closest_point_on_triangles(Q[rows], self._A[cols], self._B[cols], self._C[cols], True)
        d2 = np.sum((cp - Q[rows]) ** 2, axis=1)
        # a triangle whose centroid is farther than best + max_radius cannot win
        d_ub = np.sqrt(d2.reshape(nq, k0).min(axis=1))
        certified = (k0 == len(self.faces)) | (cdist[:, -1] > d_ub + self._max_radius + 1e-12)
        todo = np.flatnonzero(~certified)
        if len(todo) == 0:
            d2r = d2.reshape(nq, k0)
            # ties to the lowest triangle index
            tied = d2r == d2r.min(axis=1, keepdims=True)
            j = np.argmin(np.where(tied, idx, np.iinfo(np.int64).max), axis=1)
            pick = np.arange(nq) * k0 + j
            return cp[pick], cols[pick], reg[pick]
        if len(todo):
            keep = certified[rows]
            rows, cols, cp, d2, reg = rows[keep], cols[keep], cp[keep], d2[keep], reg[keep]
            balls = self._tree.query_ball_point(Q[todo], d_ub[todo] + self._max_radius + 1e-12)
            lens = np.fromiter((len(b) for b in balls), dtype=np.int64, count=len(todo))
            r2 = np.repeat(todo, lens)
            c2 = np.fromiter((j for b in balls for j in b), dtype=np.int64, count=int(lens.sum()))
            cp2, reg2 = closest_point_on_triangles(Q[r2], self._A[c2], self._B[c2], self._C[c2], True)
            reg = np.concatenate([reg, reg2])
            rows = np.concatenate([rows, r2])
            cols = np.concatenate([cols, c2])
            cp = np.concatenate([cp, cp2])
            d2 = np.concatenate([d2, np.sum((cp2 - Q[r2]) ** 2, axis=1)])
        # per-query argmin, ties to the lowest triangle index
        order = np.lexsort((cols, d2, rows))
        first = np.ones(len(order), dtype=bool)
        first[1:] = rows[order][1:] != rows[order][:-1]
        pick = order[first]
        out = np.empty_like(Q)
        out[rows[pick]] = cp[pick]
        tri = np.empty(nq, dtype=np.int64)
        tri[rows[pick]] = cols[pick]
        region = np.empty(nq, dtype=np.int8)
        region[rows[pick]] = reg[pick]
        return out, tri, region

    def project_with_jacobian(self, P, generalized: bool = False):
        """Closest points and the Jacobians ``(K, 3, 3)`` of the closest-point map.

        The map is piecewise linear per feature: orthogonal projection onto the
        face plane (``I - n n^T``), onto an edge line (``d d^T``) or constant at
        a vertex (zero). A query lying on the surface uses the face projector of
        its triangle, which is the one-sided derivative along that face.

        ``generalized=True`` instead projects onto the tangent plane of the
        vertex normals interpolated at the closest point. This smooth surrogate
        never vanishes and varies continuously across creases, so a
        gradient-based planner is not trapped at convex vertices or sharp
        ridges where the exact derivative only sees one tiny face.
        """
        Q = np.atleast_2d(np.asarray(P, dtype=float))
        if not np.all(np.isfinite(Q)):
            raise DomainError("non-finite query point")
        W, tri, region = self._project_batch(Q)
        n = self.normals[tri]
        J = np.eye(3) - n[:, :, None] * n[:, None, :]
        if generalized:
            b = barycentric(W, self._A[tri], self._B[tri], self._C[tri])
            m = np.einsum("kc,kcd->kd", b, self.vertex_normals[self.faces[tri]])
            m /= np.maximum(np.linalg.norm(m, axis=1, keepdims=True), 1e-300)
            return W, np.eye(3) - m[:, :, None] * m[:, None, :]
        on_surface = np.sum((W - Q) ** 2, axis=1) <= 1e-24
        A, B, C = self._A[tri], self._B[tri], self._C[tri]
        for code, (X, Y) in ((EDGE_AB, (A, B)), (EDGE_AC, (A, C)), (EDGE_BC, (B, C))):
            m = (region == code) & ~on_surface
            if np.any(m):
                d = Y[m] - X[m]
                d /= np.linalg.norm(d, axis=1, keepdims=True)
                J[m] = d[:, :, None] * d[:, None, :]
        vert = np.isin(region, (VERT_A, VERT_B, VERT_C)) & ~on_surface
        J[vert] = 0.0
        return W, J

    def project_with_vjp(self, P, generalized: bool = False):
        """Closest points plus ``G -> J^T G`` row-wise (see :meth:`project_with_jacobian`)."""
        W, J = self.project_with_jacobian(P, generalized)
        return W, lambda G: np.einsum("kji,kj->ki", J, G)

    def surface_path(self, a, b) -> np.ndarray:
        """Points from ``a`` to ``b`` along a shortest path over mesh edges.

        The path runs through the vertices closest to each endpoint; the
        endpoints themselves are not included.
        """
        if self._graph is None:
            E = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
            E = np.unique(np.sort(E, axis=1), axis=0)
            w = np.linalg.norm(self.vertices[E[:, 0]] - self.vertices[E[:, 1]], axis=1)
            n = len(self.vertices)
            self._graph = coo_matrix((w, (E[:, 0], E[:, 1])), shape=(n, n)).tocsr()
            self._vtree = cKDTree(self.vertices)
        ia, ib = self._vtree.query([a, b])[1]
        if ia == ib:
            return self.vertices[[ia]]
        _, pred = dijkstra(self._graph, directed=False, indices=ib, return_predecessors=True)
        if pred[ia] < 0:
            return np.empty((0, 3))
        path = [ia]
        while path[-1] != ib:
            path.append(pred[path[-1]])
        return self.vertices[path]

    def sample_uniform(self, rng, n: int) -> np.ndarray:
        p = self.areas / self.areas.sum()
        tri = rng.choice(len(self.faces), size=n, p=p)
        r1 = np.sqrt(rng.random(n))
        r2 = rng.random(n)
        a = 1.0 - r1
        b = r1 * (1.0 - r2)
        c = r1 * r2
        return a[:, None] * self._A[tri] + b[:, None] * self._B[tri] + c[:, None] * self._C[tri]


def project_to_domain(domain, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise DomainError("non-finite point")
    return domain.project(p)


# ---------------------------------------------------------------------------
# mesh IO
# ---------------------------------------------------------------------------

def _read_obj(path: Path):
    V, F = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                V.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                idx = [i - 1 if i > 0 else len(V) + i for i in idx]
                if len(idx) < 3:
                    raise DomainError(f"{path}: face with fewer than 3 vertices")
                for j in range(1, len(idx) - 1):
                    F.append([idx[0], idx[j], idx[j + 1]])
    return V, F


def _read_ply(path: Path):
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise DomainError(f"{path}: only ASCII PLY is supported") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise DomainError(f"{path}: missing 'ply' magic")
    nv = nf = 0
    vprops: list[str] = []
    current = None
    i = 1
    for i in range(1, len(lines)):
        parts = lines[i].split()
        if not parts:
            continue
        if parts[0] == "format" and parts[1] != "ascii":
            raise DomainError(f"{path}: only ASCII PLY is supported")
        if parts[0] == "element":
            current = parts[1]
            if current == "vertex":
                nv = int(parts[2])
            elif current == "face":
                nf = int(parts[2])
        elif parts[0] == "property" and current == "vertex":
            vprops.append(parts[-1])
        elif parts[0] == "end_header":
            break
    body = lines[i + 1:]
    try:
        xi, yi, zi = vprops.index("x"), vprops.index("y"), vprops.index("z")
    except ValueError as exc:
        raise DomainError(f"{path}: vertex element lacks x/y/z") from exc
    V = []
    for line in body[:nv]:
        vals = line.split()
        V.append([float(vals[xi]), float(vals[yi]), float(vals[zi])])
    F = []
    for line in body[nv:nv + nf]:
        vals = [int(v) for v in line.split()]
        idx = vals[1:1 + vals[0]]
        if len(idx) < 3:
            raise DomainError(f"{path}: face with fewer than 3 vertices")
        for j in range(1, len(idx) - 1):
            F.append([idx[0], idx[j], idx[j + 1]])
    return V, F


BUILTIN_MESHES = {"bunny": Path(__file__).parent / "data" / "bunny.obj"}


def resolve_mesh_path(path) -> Path:
    p = str(path)
    if p in BUILTIN_MESHES:
        return BUILTIN_MESHES[p]
    return Path(p)


def load_mesh(path, normalize_to=((-0.5, 0.5), (-0.5, 0.5), (-0.5, 0.5))) -> MeshDomain:
    """Read an OBJ or ASCII PLY file and fit it isotropically into ``normalize_to``.

    Polygons are fan-triangulated. The mesh keeps its aspect ratio: the
    longest bounding-box axis spans the matching target interval and the mesh
    is centered in the target box.
    """
    path = resolve_mesh_path(path)
    if not path.is_file():
        raise DomainError(f"mesh file not found: {path}")
    suffix = path.suffix.lower()
    try:
        if suffix == ".obj":
            V, F = _read_obj(path)
        elif suffix == ".ply":
            V, F = _read_ply(path)
        else:
            raise DomainError(f"{path}: unsupported mesh format {suffix!r}")
    except (OSError, ValueError, IndexError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise DomainError(f"could not read mesh {path}: {exc}") from exc
    V = np.asarray(V, dtype=float)
    if V.size == 0 or not F:
        raise DomainError(f"{path}: no triangles")
    if normalize_to is not None:
        V = normalize_vertices(V, normalize_to)
    return MeshDomain(V, F)


def normalize_vertices(V, box) -> np.ndarray:
    box = np.asarray(box, dtype=float)
    lo, hi = V.min(axis=0), V.max(axis=0)
    extent = hi - lo
    target = box[:, 1] - box[:, 0]
    if not np.max(extent) > 0:
        raise DomainError("mesh has zero extent")
    with np.errstate(divide="ignore"):
        scale = np.min(np.where(extent > 0, target / extent, np.inf))
    return (V - 0.5 * (lo + hi)) * scale + 0.5 * (box[:, 0] + box[:, 1])


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TargetSpec:
    type: str = "uniform"
    weights: tuple = ()
    means: tuple = ()
    covs: tuple = ()

    @classmethod
    def from_config(cls, cfg: dict) -> "TargetSpec":
        kind = cfg.get("type", "uniform")
        if kind == "uniform":
            return cls()
        if kind != "mixture":
            raise DomainError(f"unknown target type {kind!r}")
        comps = cfg.get("components") or []
        if not comps:
            raise DomainError("mixture target needs at least one component")
        w = np.array([c["weight"] for c in comps], dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("mixture weights must be nonnegative and sum to 1")
        means = tuple(tuple(float(v) for v in c["mean"]) for c in comps)
        covs = tuple(tuple(tuple(float(v) for v in row) for row in np.atleast_2d(c["cov"])) for c in comps)
        return cls("mixture", tuple(w), means, covs)

    def to_config(self) -> dict:
        if self.type == "uniform":
            return {"type": "uniform"}
        return {
            "type": "mixture",
            "components": [
                {"weight": w, "mean": list(m), "cov": [list(r) for r in c]}
                for w, m, c in zip(self.weights, self.means, self.covs)
            ],
        }


class TargetModel:
    """Frozen Monte-Carlo representation of the target distribution.

    Holds the samples and, per kernel, the empirical embedding of the target
    at each sample (``mu``), the double-sum constant (``z``) and the mean
    squared Gram entry (``kappa``).
    """

    def __init__(self, samples, kernels):
        S = np.atleast_2d(np.asarray(samples, dtype=float))
        if len(S) < 1:
            raise DomainError("need at least one target sample")
        S.setflags(write=False)
        self.samples = S
        self._emb: dict[KernelSpec, tuple[np.ndarray, float, float]] = {}
        for k in kernels:
            self.embedding(k)

    @property
    def M(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def embedding(self, kernel: KernelSpec):
        """``(mu_q_hat, z_q, kappa)`` for ``kernel``; computed once and cached."""
        if kernel not in self._emb:
            G = kernel.matrix(self.samples, self.samples)
            mu = G.mean(axis=1)
            mu.setflags(write=False)
            self._emb[kernel] = (mu, float(mu.mean()), float(np.mean(G * G)))
        return self._emb[kernel]

    def mu(self, kernel: KernelSpec) -> np.ndarray:
        return self.embedding(kernel)[0]

    def z(self, kernel: KernelSpec) -> float:
        return self.embedding(kernel)[1]

    def kappa(self, kernel: KernelSpec) -> float:
        """Mean of ``(1/M) sum_i k(omega_j, omega_i)**2`` over ``j``: the typical
        self-similarity under the sample-feature kernel."""
        return self.embedding(kernel)[2]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i"] + [f"x{d}" for d in range(self.dim)])
            for i, row in enumerate(self.samples):
                w.writerow([i] + [repr(float(v)) for v in row])


def _draw_mixture(domain, spec: TargetSpec, M: int, rng) -> np.ndarray:
    if domain.kind != "box":
        raise DomainError("mixture targets are only supported on box domains")
    w = np.asarray(spec.weights)
    means = [np.asarray(m, dtype=float) for m in spec.means]
    covs = [np.asarray(c, dtype=float) for c in spec.covs]
    for m in means:
        if m.size != domain.dim:
            raise DomainError(f"mixture mean {m} does not match domain dimension {domain.dim}")
    chol = [np.linalg.cholesky(c) for c in covs]
    out = np.empty((M, domain.dim))
    draws = 0
    filled = 0
    while filled < M:
        comp = rng.choice(len(w), p=w)
        x = means[comp] + chol[comp] @ rng.standard_normal(domain.dim)
        draws += 1
        if draws > MAX_REJECTION_DRAWS:
            raise DomainError("target has negligible mass on domain")
        if domain.contains(x[None, :])[0]:
            out[filled] = x
            filled += 1
    return out


def sample_target(domain, spec: TargetSpec, M: int, seed: int, kernels=()) -> TargetModel:
    if M < 1:
        raise DomainError("M must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5A17]))
    if spec.type == "uniform":
        S = domain.sample_uniform(rng, M)
    else:
        S = _draw_mixture(domain, spec, M, rng)
    return TargetModel(S, kernels)


def mean_nn_spacing(points) -> float:
    P = np.atleast_2d(points)
    if len(P) < 2:
        return 0.0
    d, _ = cKDTree(P).query(P, k=2)
    return float(np.mean(d[:, 1]))


def build_domain(cfg: dict):
    kind = cfg.get("type", "box")
    if kind == "box":
        return BoxDomain.from_bounds(cfg["bounds"])
    if kind == "mesh":
        return load_mesh(cfg["path"], cfg.get("normalize_to", [[-0.5, 0.5]] * 3))
    raise DomainError(f"unknown domain type {kind!r}")
