"""Active/inactive partitions induced by an adjoint state.

Every element is decomposed into *pieces*: sub-triangles stored by the
barycentric coordinates of their vertices with respect to the parent element.
Uncut elements are a single piece with the identity matrix. All functions that
appear here are P1 on the parent, hence linear on a piece, so products of two
of them are integrated exactly by the edge-midpoint rule.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .fem import assemble
from .mesh import TriMesh
from .quadrature import edge_midpoint_rule

# pieces smaller than this fraction of their parent are dropped after a cut
SLIVER = 1e-14


class Region(enum.IntEnum):
    INACTIVE = 0
    LOWER = 1
    UPPER = 2
    CUT = 3


@dataclass(frozen=True)
class Pieces:
    parent: np.ndarray  # (P,)
    bary: np.ndarray  # (P, 3, 3): vertex v of piece k is sum_i bary[k, v, i] * corner_i

    def __len__(self) -> int:
        return self.parent.shape[0]

    @classmethod
    def whole(cls, mesh: TriMesh) -> "Pieces":
        nt = mesh.n_triangles
        return cls(np.arange(nt), np.broadcast_to(np.eye(3), (nt, 3, 3)).copy())

    def area_ratio(self) -> np.ndarray:
        return np.linalg.det(self.bary)

    def areas(self, mesh: TriMesh) -> np.ndarray:
        return mesh.areas[self.parent] * self.area_ratio()

    def take(self, idx) -> "Pieces":
        return Pieces(self.parent[idx], self.bary[idx])

    def xy(self, mesh: TriMesh) -> np.ndarray:
        """Vertex coordinates, shape (P, 3, 2)."""
        return np.einsum("pvi,pid->pvd", self.bary, mesh.corners[self.parent])

    def values(self, mesh: TriMesh, f: np.ndarray) -> np.ndarray:
        """Values of the P1 function ``f`` at the piece vertices, shape (P, 3)."""
        return np.einsum("pvi,pi->pv", self.bary, f[mesh.triangles[self.parent]])


def concat(parts: Iterable[Pieces]) -> Pieces:
    parts = list(parts)
    return Pieces(
        np.concatenate([p.parent for p in parts]),
        np.concatenate([p.bary for p in parts]).reshape(-1, 3, 3),
    )


def clip(mesh: TriMesh, pieces: Pieces, g: np.ndarray, tol: float = 0.0):
    """Split pieces along the zero level set of the P1 function ``g``.

    Vertex values with ``|g| <= tol`` are snapped to zero and count as
    non-negative. Returns ``(pieces, nonneg, src, segments)`` where ``src``
    maps every output piece to its input piece and ``segments`` holds the
    (parent, 2x3 barycentric endpoints) of every cut.
    """
    vals = pieces.values(mesh, g)
    vals = np.where(np.abs(vals) <= tol, 0.0, vals)
    neg = vals < 0.0
    cut = (vals > 0.0).any(axis=1) & neg.any(axis=1)

    keep = np.nonzero(~cut)[0]
    idx = np.nonzero(cut)[0]
    v = vals[idx]
    B = pieces.bary[idx]
    nn = v >= 0.0
    lone_nn = nn.sum(axis=1) == 1
    iso = np.where(lone_nn, np.argmax(nn, axis=1), np.argmax(~nn, axis=1))
    r = np.arange(idx.size)
    i1, i2 = (iso + 1) % 3, (iso + 2) % 3
    g0, g1, g2 = v[r, iso], v[r, i1], v[r, i2]
    b0, b1, b2 = B[r, iso], B[r, i1], B[r, i2]
    e1 = b0 + (g0 / (g0 - g1))[:, None] * (b1 - b0)
    e2 = b0 + (g0 / (g0 - g2))[:, None] * (b2 - b0)

    bary = np.concatenate(
        [
            pieces.bary[keep],
            np.stack([b0, e1, e2], axis=1),
            np.stack([e1, b1, b2], axis=1),
            np.stack([e1, b2, e2], axis=1),
        ]
    )
    src = np.concatenate([keep, idx, idx, idx])
    nonneg = np.concatenate([~neg[keep].any(axis=1), lone_nn, ~lone_nn, ~lone_nn])
    out = Pieces(pieces.parent[src], bary)
    ok = out.area_ratio() > SLIVER
    segments = (pieces.parent[idx], np.stack([e1, e2], axis=1))
    return out.take(ok), nonneg[ok], src[ok], segments


def _label(mesh, pieces, g_lower, g_upper, tol):
    """Label pieces by the signs of ``g_lower`` (lower bound) then ``g_upper``."""
    pcs, nn_a, src_a, seg_a = clip(mesh, pieces, g_lower, tol)
    lower = pcs.take(~nn_a)
    rest, nn_b, src_b, seg_b = clip(mesh, pcs.take(nn_a), g_upper, tol)
    out = concat([lower, rest])
    labels = np.concatenate(
        [
            np.full(len(lower), Region.LOWER, dtype=np.int8),
            np.where(nn_b, Region.INACTIVE, Region.UPPER).astype(np.int8),
        ]
    )
    src = np.concatenate([src_a[~nn_a], src_a[nn_a][src_b]])
    segments = (
        np.concatenate([seg_a[0], seg_b[0]]),
        np.concatenate([seg_a[1], seg_b[1]]).reshape(-1, 2, 3),
    )
    return out, labels, src, segments


def snap_tolerance(p, a, b, alpha) -> float:
    return 1e-12 * (
        1.0 + np.abs(p).max() / alpha + np.abs(a).max() + np.abs(b).max()
    )


@dataclass(frozen=True, eq=False)
class ActivePartition:
    """Inactive set {a < -p/alpha < b} and the two active sets, resolved per piece."""

    mesh: TriMesh
    p: np.ndarray
    a: np.ndarray
    b: np.ndarray
    alpha: float
    pieces: Pieces
    labels: np.ndarray
    element_labels: np.ndarray
    segments: tuple
    tol: float

    @property
    def g_lower(self) -> np.ndarray:
        return -self.p / self.alpha - self.a

    @property
    def g_upper(self) -> np.ndarray:
        return self.b + self.p / self.alpha

    def region_mask(self, region) -> np.ndarray:
        if region is None or region == "all":
            return np.ones(len(self.pieces), dtype=bool)
        if isinstance(region, (Region, int)):
            return self.labels == region
        return np.isin(self.labels, [int(r) for r in region])

    def area(self, region=Region.INACTIVE) -> float:
        return float(self.pieces.areas(self.mesh)[self.region_mask(region)].sum())

    def n_cut(self) -> int:
        return int(np.count_nonzero(self.element_labels == Region.CUT))

    def segment_coordinates(self) -> np.ndarray:
        """Active-set boundary segments as (S, 2, 2) coordinates."""
        parent, ends = self.segments
        return np.einsum("svi,sid->svd", ends, self.mesh.corners[parent])

    def overlay(self, other: "ActivePartition"):
        """Common refinement with another partition on the same mesh.

        Returns ``(pieces, labels_self, labels_other)``.
        """
        if other.mesh is not self.mesh:
            raise ValueError("partitions live on different meshes")
        pcs, lab, src, _ = _label(
            self.mesh, self.pieces, other.g_lower, other.g_upper, other.tol
        )
        return pcs, self.labels[src], lab


def classify(mesh: TriMesh, p, a, b, alpha: float, sigma: float = 0.0) -> ActivePartition:
    """Partition the mesh by the position of ``-p/alpha`` relative to ``[a, b]``."""
    p, a, b = (np.broadcast_to(np.asarray(v, dtype=float), (mesh.n_vertices,)) for v in (p, a, b))
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    gap = b - a
    if not np.all(gap > sigma):
        raise ValueError(f"bounds violate b - a > {sigma} (min gap {gap.min():.3e})")
    tol = snap_tolerance(p, a, b, alpha)
    pieces, labels, _, segments = _label(
        mesh, Pieces.whole(mesh), -p / alpha - a, b + p / alpha, tol
    )
    counts = np.bincount(
        pieces.parent * 3 + labels, minlength=3 * mesh.n_triangles
    ).reshape(-1, 3)
    present = counts > 0
    element_labels = np.where(
        present.sum(axis=1) == 1, np.argmax(present, axis=1), Region.CUT
    ).astype(np.int8)
    return ActivePartition(
        mesh, p.copy(), a.copy(), b.copy(), float(alpha), pieces, labels,
        element_labels, segments, tol,
    )


# ---------------------------------------------------------------- quadrature

def midpoint_quadrature(mesh: TriMesh, pieces: Pieces):
    """Parent barycentric coordinates (P, 3, 3) and weights (P, 3) of the
    edge-midpoint rule on every piece."""
    rule, w = edge_midpoint_rule()
    lam = np.einsum("qv,pvi->pqi", rule, pieces.bary)
    return lam, pieces.areas(mesh)[:, None] * w[None, :]


def rule_quadrature(mesh: TriMesh, pieces: Pieces, rule: np.ndarray, w: np.ndarray):
    """Like :func:`midpoint_quadrature` for an arbitrary rule; also returns the
    physical points (P, q, 2)."""
    lam = np.einsum("qv,pvi->pqi", rule, pieces.bary)
    pts = np.einsum("pqi,pid->pqd", lam, mesh.corners[pieces.parent])
    return lam, pieces.areas(mesh)[:, None] * w[None, :], pts


def _at(mesh, pieces, lam, f):
    return np.einsum("pqi,pi->pq", lam, f[mesh.triangles[pieces.parent]])


def integrate_chi_pair(part: ActivePartition, f: np.ndarray, g: np.ndarray, region=Region.INACTIVE) -> float:
    """Exact integral of ``f * g`` over the selected region(s)."""
    sel = part.pieces.take(part.region_mask(region))
    lam, wq = midpoint_quadrature(part.mesh, sel)
    return float(np.sum(wq * _at(part.mesh, sel, lam, f) * _at(part.mesh, sel, lam, g)))


def cut_mass_matrix(part: ActivePartition, region=Region.INACTIVE) -> sp.csr_matrix:
    """Gram matrix of the basis functions restricted to the selected region."""
    sel = part.pieces.take(part.region_mask(region))
    lam, wq = midpoint_quadrature(part.mesh, sel)
    local = np.einsum("pq,pqi,pqj->pij", wq, lam, lam)
    return assemble(part.mesh, local, part.mesh.triangles[sel.parent])


def region_load(part: ActivePartition, values: dict) -> np.ndarray:
    """Load vector of the function equal to the P1 function ``values[R]`` on
    region R (and zero on regions not listed)."""
    mesh = part.mesh
    load = np.zeros(mesh.n_vertices)
    lam, wq = midpoint_quadrature(mesh, part.pieces)
    for region, f in values.items():
        m = part.labels == region
        if not m.any():
            continue
        fq = np.einsum("pqi,pi->pq", lam[m], np.asarray(f)[mesh.triangles[part.pieces.parent[m]]])
        local = np.einsum("pq,pqi->pi", wq[m] * fq, lam[m])
        load += np.bincount(
            mesh.triangles[part.pieces.parent[m]].ravel(), local.ravel(), minlength=mesh.n_vertices
        )
    return load


def chi_load(part: ActivePartition, w: np.ndarray) -> np.ndarray:
    """``int_I w phi_i`` for the inactive set I."""
    return region_load(part, {Region.INACTIVE: w})


def chi_load_complement(part: ActivePartition, w: np.ndarray) -> np.ndarray:
    return region_load(part, {Region.LOWER: w, Region.UPPER: w})


def write_segments_csv(part: ActivePartition, path: str | Path) -> None:
    seg = part.segment_coordinates().reshape(-1, 4)
    np.savetxt(path, seg, delimiter=",", header="x1,y1,x2,y2", comments="", fmt="%.12e")
