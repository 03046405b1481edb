"""Variationally discretized controls: piecewise linear functions on the cut
decomposition of an active partition, with jumps along its cut segments."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .cut import (
    ActivePartition,
    Pieces,
    Region,
    classify,
    midpoint_quadrature,
    region_load,
    rule_quadrature,
)
from .fem import interpolate
from .mesh import TriMesh
from .quadrature import degree7_rule


@dataclass(frozen=True, eq=False)
class BoundsPair:
    """Nodal P1 bounds ``a < b``."""

    mesh: TriMesh
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if not np.all(self.b - self.a > 0.0):
            raise ValueError(
                f"bounds must satisfy b - a > 0 (min gap {np.min(self.b - self.a):.3e})"
            )

    @property
    def sigma(self) -> float:
        return float(np.min(self.b - self.a))


def _as_callable(f):
    if callable(f):
        return f
    return lambda x, y: np.full_like(x, float(f), dtype=float)


def interpolate_bounds(a, b, mesh: TriMesh) -> BoundsPair:
    """Nodal interpolants of the bounds; ``a`` and ``b`` are callables or constants."""
    return BoundsPair(mesh, interpolate(mesh, _as_callable(a)), interpolate(mesh, _as_callable(b)))


def _nodal_by_label(mesh: TriMesh, pieces: Pieces, labels: np.ndarray, w, a, b) -> np.ndarray:
    """Parent-element nodal values (P, 3) of the function that is valid on each piece."""
    t = mesh.triangles[pieces.parent]
    stacked = np.stack([w[t], a[t], b[t]])
    return stacked[labels.astype(np.intp), np.arange(len(pieces))]


@dataclass(frozen=True, eq=False)
class VariationalControl:
    """``u = w`` on the inactive set of ``partition``, ``a`` on the lower and
    ``b`` on the upper active set.

    ``w`` is a nodal P1 vector that is only meaningful on the inactive set.
    """

    partition: ActivePartition
    inactive: np.ndarray

    @property
    def mesh(self) -> TriMesh:
        return self.partition.mesh

    @property
    def alpha(self) -> float:
        return self.partition.alpha

    def _nodal(self, pieces=None, labels=None) -> np.ndarray:
        part = self.partition
        pieces = part.pieces if pieces is None else pieces
        labels = part.labels if labels is None else labels
        return _nodal_by_label(self.mesh, pieces, labels, self.inactive, part.a, part.b)

    def load_vector(self) -> np.ndarray:
        part = self.partition
        return region_load(
            part, {Region.INACTIVE: self.inactive, Region.LOWER: part.a, Region.UPPER: part.b}
        )

    def piece_vertex_values(self) -> np.ndarray:
        return np.einsum("pvi,pi->pv", self.partition.pieces.bary, self._nodal())

    def norm_sq(self) -> float:
        lam, wq = midpoint_quadrature(self.mesh, self.partition.pieces)
        uq = np.einsum("pqi,pi->pq", lam, self._nodal())
        return float(np.sum(wq * uq * uq))

    def norm(self) -> float:
        return np.sqrt(self.norm_sq())

    def is_admissible(self, tol: float = 1e-12) -> bool:
        part = self.partition
        m = part.labels == Region.INACTIVE
        pcs = part.pieces.take(m)
        w = pcs.values(self.mesh, self.inactive)
        return bool(
            np.all(w >= pcs.values(self.mesh, part.a) - tol)
            and np.all(w <= pcs.values(self.mesh, part.b) + tol)
        )

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Pointwise values at physical points (N, 2)."""
        elem, lam = locate_points(self.mesh, points)
        part = self.partition
        t = self.mesh.triangles[elem]

        def at(f):
            return np.einsum("ni,ni->n", lam, f[t])

        ga = at(part.g_lower)
        gb = at(part.g_upper)
        return np.where(ga < 0.0, at(part.a), np.where(gb < 0.0, at(part.b), at(self.inactive)))


def project_control(p: np.ndarray, bounds: BoundsPair, alpha: float) -> VariationalControl:
    """The exact function ``clamp(-p / alpha, a, b)``."""
    part = classify(bounds.mesh, p, bounds.a, bounds.b, alpha)
    return VariationalControl(part, -np.asarray(p, dtype=float) / alpha)


def constant_control(value: float, bounds: BoundsPair, alpha: float) -> VariationalControl:
    """The constant ``value`` (clamped into the bounds) as a variational control."""
    return project_control(np.full(bounds.mesh.n_vertices, -alpha * value), bounds, alpha)


def l2_distance(u: VariationalControl, v: VariationalControl) -> float:
    """Exact L2 distance of two controls on the common refinement of their partitions."""
    pieces, lu, lv = u.partition.overlay(v.partition)
    nu = u._nodal(pieces, lu)
    nv = v._nodal(pieces, lv)
    lam, wq = midpoint_quadrature(u.mesh, pieces)
    d = np.einsum("pqi,pi->pq", lam, nu - nv)
    return float(np.sqrt(max(np.sum(wq * d * d), 0.0)))


def _degree7_values(u: VariationalControl, exact: Callable):
    rule, w = degree7_rule()
    lam, wq, pts = rule_quadrature(u.mesh, u.partition.pieces, rule, w)
    uq = np.einsum("pqi,pi->pq", lam, u._nodal())
    eq = np.broadcast_to(np.asarray(exact(pts[..., 0], pts[..., 1]), dtype=float), uq.shape)
    return uq, eq, wq


def l2_error(u: VariationalControl, exact: Callable) -> float:
    """L2 norm of ``u - exact`` with the degree-7 rule on every piece."""
    uq, eq, wq = _degree7_values(u, exact)
    return float(np.sqrt(np.sum(wq * (uq - eq) ** 2)))


def linf_error(u: VariationalControl, exact: Callable) -> float:
    """Max of ``|u - exact|`` sampled at the degree-7 nodes, vertices and edge
    midpoints of every piece."""
    uq, eq, _ = _degree7_values(u, exact)
    err = np.abs(uq - eq).max(initial=0.0)
    pieces = u.partition.pieces
    nod = u._nodal()
    corners = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]])
    lam = np.einsum("qv,pvi->pqi", corners, pieces.bary)
    pts = np.einsum("pqi,pid->pqd", lam, u.mesh.corners[pieces.parent])
    uv = np.einsum("pqi,pi->pq", lam, nod)
    ev = np.broadcast_to(np.asarray(exact(pts[..., 0], pts[..., 1]), dtype=float), uv.shape)
    return float(max(err, np.abs(uv - ev).max(initial=0.0)))


def locate_points(mesh: TriMesh, points: np.ndarray, k: int = 12):
    """Containing element and barycentric coordinates for every point."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    cache = mesh._cache
    if "kdtree" not in cache:
        cache["kdtree"] = cKDTree(mesh.corners.mean(axis=1))
    k = min(k, mesh.n_triangles)
    _, cand = cache["kdtree"].query(points, k=k)
    cand = cand.reshape(points.shape[0], k)
    c = mesh.corners[cand]  # (N, k, 3, 2)
    d1 = c[..., 1, :] - c[..., 0, :]
    d2 = c[..., 2, :] - c[..., 0, :]
    rel = points[:, None, :] - c[..., 0, :]
    det = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    l1 = (rel[..., 0] * d2[..., 1] - rel[..., 1] * d2[..., 0]) / det
    l2 = (d1[..., 0] * rel[..., 1] - d1[..., 1] * rel[..., 0]) / det
    lam = np.stack([1.0 - l1 - l2, l1, l2], axis=-1)
    inside = lam.min(axis=-1) >= -1e-12
    if not inside.any(axis=1).all():
        raise ValueError("point outside the mesh")
    first = np.argmax(inside, axis=1)
    r = np.arange(points.shape[0])
    return cand[r, first], lam[r, first]


def sample_grid(u: VariationalControl, n: int = 101) -> np.ndarray:
    """Rows ``(x, y, u(x, y))`` on a uniform ``n x n`` grid of the unit square."""
    xs = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(xs, xs)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return np.column_stack([pts, u.evaluate(pts)])


def write_samples_csv(u: VariationalControl, path: str | Path, n: int = 101) -> None:
    np.savetxt(path, sample_grid(u, n), delimiter=",", header="x,y,u", comments="", fmt="%.12e")
