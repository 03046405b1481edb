"""Manufactured test problems on the unit square with known optimal controls."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .control import BoundsPair, VariationalControl, interpolate_bounds, project_control
from .fem import Discretization, OperatorKind, integrate_function, load_function
from .mesh import TriMesh, prolongation, refine

PI = np.pi


@dataclass(eq=False)
class ProblemSpec:
    """Discretized control problem min 1/2 |y - z|^2 + alpha/2 |u|^2, a <= u <= b.

    The target ``z`` is stored through its load vector ``<z, phi_i>`` and its
    squared L2 norm, which is all the reduced problem needs.
    """

    name: str
    disc: Discretization
    alpha: float
    bounds: BoundsPair
    z_load: np.ndarray
    z_norm_sq: float
    exact_control: Callable | None = None
    exact_adjoint: Callable | None = None
    params: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.bounds.mesh is not self.disc.mesh:
            raise ValueError("bounds and discretization use different meshes")

    @property
    def mesh(self) -> TriMesh:
        return self.disc.mesh

    @property
    def kind(self) -> OperatorKind:
        return self.disc.kind

    def state(self, u) -> np.ndarray:
        return self.disc.solve_state(u)

    def adjoint_from_state(self, y: np.ndarray) -> np.ndarray:
        return self.disc.solve_load(self.disc.M @ y - self.z_load)

    def adjoint(self, u) -> np.ndarray:
        """Adjoint state of the control ``u``: S*(S u - z)."""
        return self.adjoint_from_state(self.state(u))

    @property
    def adjoint_of_target(self) -> np.ndarray:
        """S* z, reused by every Newton step."""
        if "sz" not in self._cache:
            self._cache["sz"] = self.disc.solve_load(self.z_load)
        return self._cache["sz"]

    def operator_norm_sq(self) -> float:
        if "norm" not in self._cache:
            self._cache["norm"] = self.disc.operator_norm_sq()
        return self._cache["norm"]

    def project(self, p: np.ndarray) -> VariationalControl:
        return project_control(p, self.bounds, self.alpha)

    def objective(self, u) -> float:
        """Reduced cost for a nodal control or a variational control."""
        y = self.state(u)
        track = 0.5 * (self.disc.inner(y, y) - 2.0 * y @ self.z_load + self.z_norm_sq)
        if isinstance(u, VariationalControl):
            usq = u.norm_sq()
        else:
            usq = self.disc.inner(np.asarray(u), np.asarray(u))
        return track + 0.5 * self.alpha * usq

    def directional_derivative(self, u: np.ndarray, d: np.ndarray) -> float:
        """<alpha u + p(u), d> for nodal ``u`` and direction ``d``."""
        return self.disc.inner(self.alpha * u + self.adjoint(u), d)

    def rebuild(self, mesh: TriMesh, alpha: float | None = None) -> "ProblemSpec":
        """Same problem family on another mesh (or with another alpha)."""
        return EXAMPLES[self.name](self.alpha if alpha is None else alpha, mesh, **self.params)


def _target(disc: Discretization, smooth: Callable, control: Callable, z_refine: int = 0):
    """Load and squared norm of z = smooth + S(control).

    S(control) is the FE solution on the mesh refined ``z_refine`` times; its
    load vector is restricted back to ``disc.mesh`` by the transposed
    prolongations, which is exact because coarse basis functions are
    combinations of fine ones.
    """
    if z_refine < 0:
        raise ValueError("z_refine must be non-negative")
    meshes = [disc.mesh]
    for _ in range(z_refine):
        meshes.append(refine(meshes[-1]))
    fine = disc if z_refine == 0 else Discretization(meshes[-1], disc.kind)
    z_fe = fine.solve_state(control)
    smooth_load = load_function(fine.mesh, smooth)
    z_load = fine.M @ z_fe + smooth_load
    z_norm_sq = fine.inner(z_fe, z_fe) + 2.0 * z_fe @ smooth_load + integrate_function(
        fine.mesh, lambda x, y: smooth(x, y) ** 2
    )
    for coarse in reversed(meshes[:-1]):
        z_load = prolongation(coarse).T @ z_load
    return np.asarray(z_load), float(z_norm_sq)


def _check_unit_square(mesh: TriMesh) -> None:
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    if not (np.allclose(lo, 0.0) and np.allclose(hi, 1.0) and np.isclose(mesh.areas.sum(), 1.0)):
        raise ValueError("manufactured examples are defined on the unit square only")


def make_dirichlet_example(
    alpha: float, mesh: TriMesh, z_sign: float = 1.0, z_refine: int = 0
) -> ProblemSpec:
    """-Laplace with homogeneous Dirichlet data, bounds [0.3, 1].

    The optimal control is clamp(2 sin(pi x) sin(pi y), 0.3, 1) with adjoint
    -2 alpha sin(pi x) sin(pi y); the target is z = S r + z_sign * 4 pi^2 alpha
    sin(pi x) sin(pi y), where ``z_sign = +1`` is the consistent choice.
    ``z_refine`` extra refinements are used to approximate S r (0: same mesh).
    """
    _check_unit_square(mesh)

    def exact(x, y):
        return np.clip(2.0 * np.sin(PI * x) * np.sin(PI * y), 0.3, 1.0)

    def smooth(x, y):
        return z_sign * 4.0 * PI**2 * alpha * np.sin(PI * x) * np.sin(PI * y)

    disc = Discretization(mesh, OperatorKind.DIRICHLET_LAPLACE)
    z_load, z_sq = _target(disc, smooth, exact, z_refine)
    return ProblemSpec(
        name="dirichlet",
        disc=disc,
        alpha=alpha,
        bounds=interpolate_bounds(0.3, 1.0, mesh),
        z_load=z_load,
        z_norm_sq=z_sq,
        exact_control=exact,
        exact_adjoint=lambda x, y: -2.0 * alpha * np.sin(PI * x) * np.sin(PI * y),
        params={"z_sign": z_sign, "z_refine": z_refine},
    )


def make_neumann_example(
    alpha: float, mesh: TriMesh, z_sign: float = 1.0, z_refine: int = 0
) -> ProblemSpec:
    """-Laplace + identity with homogeneous Neumann data, bounds [-1, 1].

    Optimal control clamp(2 cos(pi x) cos(pi y), -1, 1), adjoint
    -2 alpha cos(pi x) cos(pi y).
    """
    _check_unit_square(mesh)

    def exact(x, y):
        return np.clip(2.0 * np.cos(PI * x) * np.cos(PI * y), -1.0, 1.0)

    def smooth(x, y):
        return z_sign * 2.0 * (2.0 * PI**2 + 1.0) * alpha * np.cos(PI * x) * np.cos(PI * y)

    disc = Discretization(mesh, OperatorKind.NEUMANN_HELMHOLTZ)
    z_load, z_sq = _target(disc, smooth, exact, z_refine)
    return ProblemSpec(
        name="neumann",
        disc=disc,
        alpha=alpha,
        bounds=interpolate_bounds(-1.0, 1.0, mesh),
        z_load=z_load,
        z_norm_sq=z_sq,
        exact_control=exact,
        exact_adjoint=lambda x, y: -2.0 * alpha * np.cos(PI * x) * np.cos(PI * y),
        params={"z_sign": z_sign, "z_refine": z_refine},
    )


EXAMPLES: dict[str, Callable[..., ProblemSpec]] = {
    "dirichlet": make_dirichlet_example,
    "neumann": make_neumann_example,
}


def make_problem(name: str, alpha: float, mesh: TriMesh, **params) -> ProblemSpec:
    try:
        factory = EXAMPLES[name]
    except KeyError:
        raise ValueError(f"unknown example {name!r}; choose from {sorted(EXAMPLES)}") from None
    return factory(alpha, mesh, **params)


class InconsistentTargetError(ValueError):
    """Raised when refinement does not reduce the error against the exact control."""


@dataclass
class ManufacturedReport:
    levels: list[int]
    errors: list[float]

    @property
    def ratios(self) -> list[float]:
        return [e0 / e1 for e0, e1 in zip(self.errors, self.errors[1:])]


def verify_manufactured(problem: ProblemSpec, fine_levels: int, cfg=None) -> ManufacturedReport:
    """Solve on ``fine_levels`` successive refinements and require the L2 error
    against the exact control to fall by a factor of at least 2 per level."""
    from .control import l2_error
    from .ssn import SsnConfig, solve_undamped

    if problem.exact_control is None:
        raise ValueError("problem has no exact control")
    cfg = cfg or SsnConfig()
    mesh = problem.mesh
    levels, errors = [], []
    for k in range(fine_levels + 1):
        prob = problem if k == 0 else problem.rebuild(mesh)
        v0 = 0.5 * (prob.bounds.a + prob.bounds.b)
        u, _ = solve_undamped(prob, v0, cfg)
        levels.append(mesh.level)
        errors.append(l2_error(u, prob.exact_control))
        mesh = refine(mesh)
    report = ManufacturedReport(levels, errors)
    if any(r < 2.0 for r in report.ratios):
        raise InconsistentTargetError(
            f"error does not decrease under refinement: {['%.3e' % e for e in errors]}"
        )
    return report
