"""Structured triangulations of the unit square and red refinement."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming triangulation with counterclockwise triangles.

    ``boundary`` flags vertices on the domain boundary; ``level`` counts the
    refinements applied to the coarsest mesh.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    level: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for arr in (self.vertices, self.triangles, self.boundary):
            arr.setflags(write=False)
        if np.any(self.signed_areas <= 0.0):
            bad = int(np.argmin(self.signed_areas))
            raise ValueError(f"triangle {bad} has non-positive signed area")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def corners(self) -> np.ndarray:
        """Vertex coordinates per triangle, shape (nt, 3, 2)."""
        if "corners" not in self._cache:
            self._cache["corners"] = self.vertices[self.triangles]
        return self._cache["corners"]

    @property
    def signed_areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            c = self.vertices[self.triangles]
            d1 = c[:, 1] - c[:, 0]
            d2 = c[:, 2] - c[:, 0]
            self._cache["areas"] = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        return self._cache["areas"]

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @property
    def h_max(self) -> float:
        return float(edge_lengths(self).max())

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unique edges, per-triangle edge ids and per-edge triangle counts.

        Local edge ``k`` of a triangle joins local vertices ``k`` and ``(k+1) % 3``.
        """
        if "edges" not in self._cache:
            t = self.triangles
            all_edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            all_edges.sort(axis=1)
            uniq, inv, counts = np.unique(
                all_edges, axis=0, return_inverse=True, return_counts=True
            )
            tri_edges = inv.reshape(3, -1).T
            self._cache["edges"] = (uniq, tri_edges, counts)
        return self._cache["edges"]


def edge_lengths(mesh: TriMesh) -> np.ndarray:
    """Edge lengths per triangle, shape (nt, 3)."""
    c = mesh.corners
    return np.stack(
        [np.linalg.norm(c[:, (k + 1) % 3] - c[:, k], axis=1) for k in range(3)], axis=1
    )


def unit_square_coarse() -> TriMesh:
    """2x2 grid of squares, each split along its lower-left/upper-right diagonal."""
    xs = np.linspace(0.0, 1.0, 3)
    X, Y = np.meshgrid(xs, xs)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for j in range(2):
        for i in range(2):
            ll = 3 * j + i
            lr, ul, ur = ll + 1, ll + 3, ll + 4
            tris.append((ll, lr, ur))
            tris.append((ll, ur, ul))
    boundary = (
        np.isclose(vertices[:, 0], 0.0)
        | np.isclose(vertices[:, 0], 1.0)
        | np.isclose(vertices[:, 1], 0.0)
        | np.isclose(vertices[:, 1], 1.0)
    )
    return TriMesh(vertices, np.array(tris, dtype=np.int64), boundary, level=0)


def refine(mesh: TriMesh) -> TriMesh:
    """Red refinement: every triangle is split into four congruent children."""
    uniq, tri_edges, counts = mesh.edges()
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    boundary = np.concatenate([mesh.boundary, counts == 1])
    t = mesh.triangles
    m01, m12, m20 = (nv + tri_edges[:, k] for k in range(3))
    children = np.stack(
        [
            np.column_stack([t[:, 0], m01, m20]),
            np.column_stack([m01, t[:, 1], m12]),
            np.column_stack([m20, m12, t[:, 2]]),
            np.column_stack([m01, m12, m20]),
        ],
        axis=1,
    ).reshape(-1, 3)
    return TriMesh(vertices, children, boundary, level=mesh.level + 1)


def unit_square(level: int) -> TriMesh:
    """Coarse unit-square mesh refined ``level`` times; h_max = sqrt(2) / 2**(level+1)."""
    mesh = unit_square_coarse()
    for _ in range(level):
        mesh = refine(mesh)
    return mesh


def h_of_level(level: int) -> float:
    return np.sqrt(2.0) / 2.0 ** (level + 1)


def mesh_stats(mesh: TriMesh) -> tuple[float, float]:
    """Return ``(h_max, h_max / min inscribed-circle diameter)``."""
    lengths = edge_lengths(mesh)
    inscribed = 4.0 * mesh.areas / lengths.sum(axis=1)
    h_max = float(lengths.max())
    return h_max, h_max / float(inscribed.min())


def check_conforming(mesh: TriMesh, domain_area: float = 1.0) -> None:
    """Raise ``ValueError`` unless the mesh is a conforming triangulation of a
    simply connected polygon of the given area."""
    uniq, _, counts = mesh.edges()
    if np.any(counts > 2):
        raise ValueError("edge shared by more than two triangles")
    on_bnd = mesh.boundary[uniq[:, 0]] & mesh.boundary[uniq[:, 1]]
    if np.any(counts[~on_bnd] != 2):
        raise ValueError("interior edge not shared by exactly two triangles (hanging node)")
    euler = mesh.n_vertices - uniq.shape[0] + mesh.n_triangles
    if euler != 1:
        raise ValueError(f"Euler characteristic {euler} != 1")
    if not np.isclose(mesh.areas.sum(), domain_area, rtol=0.0, atol=1e-12):
        raise ValueError("triangle areas do not sum to the domain area")


def write_vtk(mesh: TriMesh, path: str | Path, point_data: dict | None = None) -> None:
    """Write the mesh as a legacy ASCII VTK unstructured grid."""
    lines = [
        "# vtk DataFile Version 3.0",
        f"TriMesh level {mesh.level}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices]
    nt = mesh.n_triangles
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, values in point_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.17g}" for v in np.asarray(values)]
    Path(path).write_text("\n".join(lines) + "\n")


def prolongation(coarse: TriMesh):
    """Sparse interpolation matrix from P1 on ``coarse`` to P1 on ``refine(coarse)``."""
    import scipy.sparse as sp

    uniq, _, _ = coarse.edges()
    nv, ne = coarse.n_vertices, uniq.shape[0]
    rows = np.concatenate([np.arange(nv), nv + np.arange(ne), nv + np.arange(ne)])
    cols = np.concatenate([np.arange(nv), uniq[:, 0], uniq[:, 1]])
    vals = np.concatenate([np.ones(nv), np.full(2 * ne, 0.5)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(nv + ne, nv))
