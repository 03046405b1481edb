"""P1 finite elements: assembly, factorised solves and the discrete solution
operator of the state equation together with its adjoint."""
from __future__ import annotations

import enum
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TriMesh
from .quadrature import degree7_rule

EPS = np.finfo(float).eps


class OperatorKind(enum.Enum):
    DIRICHLET_LAPLACE = "dirichlet"
    NEUMANN_HELMHOLTZ = "neumann"


def _gradients(mesh: TriMesh) -> np.ndarray:
    """Gradients of the barycentric coordinates, shape (nt, 3, 2)."""
    c = mesh.corners
    area = mesh.signed_areas
    if np.any(area <= 0.0):
        raise ValueError("degenerate triangle in mesh")
    x, y = c[..., 0], c[..., 1]
    # grad(lambda_i) = (y_j - y_k, x_k - x_j) / (2|T|) for cyclic (i, j, k)
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    return np.stack([gx, gy], axis=2) / (2.0 * area)[:, None, None]


def element_stiffness(mesh: TriMesh) -> np.ndarray:
    g = _gradients(mesh)
    return mesh.areas[:, None, None] * np.einsum("tid,tjd->tij", g, g)


MASS_REFERENCE = (np.ones((3, 3)) + np.eye(3)) / 12.0


def element_mass(mesh: TriMesh) -> np.ndarray:
    if np.any(mesh.areas <= 0.0):
        raise ValueError("degenerate triangle in mesh")
    return mesh.areas[:, None, None] * MASS_REFERENCE[None]


def assemble(mesh: TriMesh, local: np.ndarray, triangles: np.ndarray | None = None) -> sp.csr_matrix:
    """Sum element matrices ``local`` (k, 3, 3) into a global sparse matrix."""
    t = mesh.triangles if triangles is None else triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_mass(mesh: TriMesh) -> sp.csr_matrix:
    return assemble(mesh, element_mass(mesh))


def assemble_stiffness(mesh: TriMesh, kind: OperatorKind) -> sp.csr_matrix:
    """System matrix of the state operator.

    Dirichlet: Laplace stiffness with boundary rows and columns replaced by the
    identity. Neumann: stiffness plus mass on all vertices.
    """
    K = assemble(mesh, element_stiffness(mesh))
    if kind is OperatorKind.NEUMANN_HELMHOLTZ:
        return (K + assemble_mass(mesh)).tocsr()
    interior = sp.diags((~mesh.boundary).astype(float))
    bnd = sp.diags(mesh.boundary.astype(float))
    return (interior @ K @ interior + bnd).tocsr()


class FactorizedSpd:
    """Sparse factorisation of an SPD matrix with a residual check on every solve.

    The check accepts ``||A y - b|| <= rtol * ||b|| + 64 eps || |A| |y| ||``;
    the second term is the rounding floor of computing the residual at all.
    """

    def __init__(self, A: sp.spmatrix, rtol: float = 1e-13):
        self.A = sp.csc_matrix(A)
        self.absA = abs(self.A)
        self.rtol = rtol
        try:
            self._lu = spla.splu(
                self.A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:
            raise np.linalg.LinAlgError(f"factorisation failed: {exc}") from exc

    @property
    def shape(self):
        return self.A.shape

    def solve(self, rhs: np.ndarray, check: bool = True) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.A.shape[0]:
            raise ValueError(f"rhs length {rhs.shape[0]} != matrix size {self.A.shape[0]}")
        y = self._lu.solve(rhs)
        if check:
            r = self.A @ y - rhs
            rn = np.linalg.norm(r)
            allowed = self.rtol * np.linalg.norm(rhs) + 64 * EPS * np.linalg.norm(self.absA @ np.abs(y))
            if not rn <= allowed:
                y = y - self._lu.solve(r)
                rn = np.linalg.norm(self.A @ y - rhs)
                if not rn <= allowed:
                    raise np.linalg.LinAlgError(
                        f"sparse solve residual {rn:.3e} exceeds {allowed:.3e}"
                    )
        return y


def solve(A: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    """One-off SPD solve with residual check."""
    return FactorizedSpd(A).solve(rhs)


def interpolate(mesh: TriMesh, f: Callable) -> np.ndarray:
    """Nodal Lagrange interpolant of ``f(x, y)``."""
    x, y = mesh.vertices.T
    return np.broadcast_to(np.asarray(f(x, y), dtype=float), x.shape).copy()


def quadrature_points(mesh: TriMesh, bary: np.ndarray) -> np.ndarray:
    """Physical coordinates of barycentric points per triangle, shape (nt, q, 2)."""
    return np.einsum("qi,tid->tqd", bary, mesh.corners)


def load_function(mesh: TriMesh, f: Callable) -> np.ndarray:
    """Load vector ``int f phi_i`` with the degree-7 rule on every triangle."""
    bary, w = degree7_rule()
    pts = quadrature_points(mesh, bary)
    fv = np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float)
    fv = np.broadcast_to(fv, pts.shape[:2])
    local = mesh.areas[:, None] * np.einsum("tq,q,qi->ti", fv, w, bary)
    return np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.n_vertices)


def integrate_function(mesh: TriMesh, f: Callable) -> float:
    bary, w = degree7_rule()
    pts = quadrature_points(mesh, bary)
    fv = np.broadcast_to(np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float), pts.shape[:2])
    return float(mesh.areas @ (fv @ w))


class Discretization:
    """Discrete state operator on one mesh.

    ``solve_state(u)`` returns the coefficients of the P1 state for a control
    ``u`` (nodal array, callable ``f(x, y)`` or any object providing
    ``load_vector()`` and ``mesh``). ``solve_adjoint`` is the same map because
    the bilinear form is symmetric. Both return full vertex vectors that vanish
    on the boundary in the Dirichlet case.
    """

    def __init__(self, mesh: TriMesh, kind: OperatorKind | str):
        self.mesh = mesh
        self.kind = OperatorKind(kind)
        self.M = assemble_mass(mesh)
        self.A = assemble_stiffness(mesh, self.kind)
        if self.kind is OperatorKind.DIRICHLET_LAPLACE:
            self.free = ~mesh.boundary
        else:
            self.free = np.ones(mesh.n_vertices, dtype=bool)
        self._factor = FactorizedSpd(self.A)
        self.n_solves = 0

    @property
    def n(self) -> int:
        return self.mesh.n_vertices

    def load(self, u) -> np.ndarray:
        """``int u phi_i`` for every vertex basis function."""
        if hasattr(u, "load_vector"):
            if u.mesh is not self.mesh:
                raise ValueError("control lives on a different mesh than the state")
            return u.load_vector()
        if callable(u):
            return load_function(self.mesh, u)
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n,):
            raise ValueError(f"coefficient vector has shape {u.shape}, expected ({self.n},)")
        return self.M @ u

    def solve_load(self, load: np.ndarray) -> np.ndarray:
        """Solve ``a(y, v) = <load, v>`` for all admissible test functions v."""
        self.n_solves += 1
        return self._factor.solve(np.where(self.free, load, 0.0))

    def solve_state(self, u) -> np.ndarray:
        return self.solve_load(self.load(u))

    def solve_adjoint(self, w) -> np.ndarray:
        return self.solve_load(self.load(w))

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(f @ (self.M @ g))

    def norm(self, f: np.ndarray) -> float:
        return np.sqrt(max(self.inner(f, f), 0.0))

    def operator_norm_sq(self, rtol: float = 1e-10, maxiter: int = 10000) -> float:
        """Largest eigenvalue of S*S in the L2 inner product by power iteration."""
        w = np.ones(self.n)
        w /= self.norm(w)
        lam = 0.0
        for _ in range(maxiter):
            sw = self.solve_adjoint(self.solve_state(w))
            new = self.inner(sw, w)
            w = sw / self.norm(sw)
            if abs(new - lam) <= rtol * abs(new):
                return new
            lam = new
        raise RuntimeError(f"power iteration did not converge in {maxiter} iterations")


def operator_norm_sq(kind: OperatorKind | str, mesh: TriMesh) -> float:
    return Discretization(mesh, kind).operator_norm_sq()
