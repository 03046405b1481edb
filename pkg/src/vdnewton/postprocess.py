"""Two-stage globalization: a fully discrete solve on piecewise constant
controls, followed by exactly two undamped variational Newton steps."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mesh import TriMesh
from .ssn import SolverError, SsnConfig, newton_steps

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PiecewiseConstantControl:
    """One control value per element."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.mesh.n_triangles,):
            raise ValueError("need one value per element")

    def load_vector(self) -> np.ndarray:
        contrib = np.repeat(self.values * self.mesh.areas / 3.0, 3)
        return np.bincount(self.mesh.triangles.ravel(), contrib, minlength=self.mesh.n_vertices)

    def norm_sq(self) -> float:
        return float(self.mesh.areas @ self.values**2)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        from .control import locate_points

        elem, _ = locate_points(self.mesh, points)
        return self.values[elem]


def element_bounds(problem) -> tuple[np.ndarray, np.ndarray]:
    """Element-wise admissible interval ``[max_T a, min_T b]``."""
    t = problem.mesh.triangles
    lo = problem.bounds.a[t].max(axis=1)
    hi = problem.bounds.b[t].min(axis=1)
    if np.any(hi < lo):
        raise ValueError("bounds leave no admissible constant on some element")
    return lo, hi


def _objective_and_gradient(problem, u: np.ndarray):
    """Reduced cost and its L2 gradient (one value per element)."""
    mesh = problem.mesh
    disc = problem.disc
    pc = PiecewiseConstantControl(mesh, u)
    y = disc.solve_state(pc)
    p = problem.adjoint_from_state(y)
    track = 0.5 * (disc.inner(y, y) - 2.0 * y @ problem.z_load + problem.z_norm_sq)
    cost = track + 0.5 * problem.alpha * pc.norm_sq()
    grad = problem.alpha * u + p[mesh.triangles].mean(axis=1)
    return cost, grad


def solve_fully_discrete(problem, tol: float = 1e-8, maxiter: int = 10000, memory: int = 10):
    """Projected gradient with Barzilai-Borwein steps over admissible piecewise
    constants, safeguarded by a non-monotone backtracking on the cost.

    Stops when the L2 norm of ``u - clamp(u - grad)`` drops below ``tol``.
    Returns ``(PiecewiseConstantControl, iterations)``.
    """
    mesh = problem.mesh
    w = mesh.areas
    lo, hi = element_bounds(problem)
    u = 0.5 * (lo + hi)
    cost, g = _objective_and_gradient(problem, u)
    recent = [cost]
    step = 1.0 / (problem.alpha + problem.operator_norm_sq())

    def pg_norm(u, g):
        d = u - np.clip(u - g, lo, hi)
        return float(np.sqrt(w @ d**2))

    for k in range(maxiter):
        res = pg_norm(u, g)
        if res <= tol:
            log.info("fully discrete solve: %d iterations, residual %.3e", k, res)
            return PiecewiseConstantControl(mesh, u), k
        ref = max(recent)
        t = step
        while True:
            u_new = np.clip(u - t * g, lo, hi)
            d = u_new - u
            cost_new, g_new = _objective_and_gradient(problem, u_new)
            if cost_new <= ref - 1e-4 / t * (w @ d**2) or t < 1e-12 * step:
                break
            t *= 0.5
        s = u_new - u
        yg = g_new - g
        sy = w @ (s * yg)
        step = (w @ s**2) / sy if sy > 0.0 else step
        u, g, cost = u_new, g_new, cost_new
        recent = (recent + [cost])[-memory:]
    raise SolverError(
        f"fully discrete solve did not reach {tol:.1e} in {maxiter} iterations "
        f"(residual {pg_norm(u, g):.3e})"
    )


def postprocess_solve(problem, tol: float = 1e-8, cfg: SsnConfig | None = None):
    """Fully discrete solve, then two undamped Newton steps seeded by its adjoint.

    Returns the second full-step iterate and the Newton report.
    """
    pc, its = solve_fully_discrete(problem, tol)
    v, report = newton_steps(problem, pc, 2, cfg)
    report.message = f"postprocessed after {its} fully discrete iterations"
    return v, report
