"""Semismooth Newton iteration for the variationally discretized problem.

The iterate is the adjoint state ``p``; controls are reconstructed from it on
demand as ``clamp(-p / alpha, a, b)``. A Newton step computes the full-step
control ``v+`` exactly: bound values on the active sets of ``p`` and, on the
inactive set, the solution of the reduced system by conjugate gradients in the
L2(inactive) inner product.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .control import VariationalControl, l2_distance
from .cut import (
    ActivePartition,
    Region,
    classify,
    clip,
    cut_mass_matrix,
    midpoint_quadrature,
    region_load,
)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass
class SsnConfig:
    stop_tol: float = 1e-11
    max_newton: int = 50
    cg_rel_tol: float = 1e-12
    # absolute CG target in the L2(inactive) norm; None: stop_tol / 100. The
    # reduced residual is the inactive part of the certificate of v+, so this
    # keeps small alpha (large, cancelling right-hand sides) from stalling.
    cg_abs_tol: float | None = None
    cg_max: int | None = None  # None: 10 * number of vertices
    armijo_sigma: float = 1e-4
    armijo_beta: float = 0.7
    lambda_min: float = 2.0**-20
    pin_area: float = 1e-14  # relative to h^2
    max_fixed_point: int = 100000

    def __post_init__(self):
        for name in ("stop_tol", "max_newton", "cg_rel_tol", "armijo_sigma", "lambda_min", "pin_area"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.cg_abs_tol is not None and not self.cg_abs_tol > 0:
            raise ValueError("cg_abs_tol must be positive")
        if not 0.0 < self.armijo_beta < 1.0:
            raise ValueError("armijo_beta must lie in (0, 1)")


@dataclass
class SolverReport:
    converged: bool
    iterations: int = 0
    quality: float = np.inf
    residuals: list = field(default_factory=list)
    merits: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    cg_iterations: list = field(default_factory=list)
    inactive_areas: list = field(default_factory=list)
    initial_residual: float = np.nan
    message: str = ""

    def write_log(self, path: str | Path) -> None:
        """One CSV line per step: iteration, residual, merit, lambda, CG iterations, |I|."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual", "merit", "lambda", "cg_iterations", "inactive_area"])
            for k in range(self.iterations):
                w.writerow(
                    [
                        k + 1,
                        f"{self.residuals[k]:.6e}",
                        f"{self.merits[k]:.6e}",
                        f"{self.lambdas[k]:.6e}",
                        self.cg_iterations[k],
                        f"{self.inactive_areas[k]:.6e}",
                    ]
                )


# ------------------------------------------------------------------ residuals

def _admissibility_tol(v: VariationalControl) -> float:
    return 10.0 * v.partition.tol + 1e-12


def aposteriori_bound(v: VariationalControl, problem, p_v: np.ndarray | None = None) -> float:
    """``|zeta|_L2 / alpha``, an upper bound for the distance of the admissible
    control ``v`` to the discrete optimum."""
    if not v.is_admissible(_admissibility_tol(v)):
        raise ValueError("a posteriori bound requires an admissible control")
    if p_v is None:
        p_v = problem.adjoint(v)
    part = v.partition
    mesh = part.mesh
    alpha = part.alpha
    total = 0.0

    inactive = part.pieces.take(part.labels == Region.INACTIVE)
    lam, wq = midpoint_quadrature(mesh, inactive)
    zq = np.einsum("pqi,pi->pq", lam, (alpha * v.inactive + p_v)[mesh.triangles[inactive.parent]])
    total += np.sum(wq * zq * zq)

    for region, bound, keep_nonneg in (
        (Region.LOWER, part.a, False),
        (Region.UPPER, part.b, True),
    ):
        pcs = part.pieces.take(part.labels == region)
        if not len(pcs):
            continue
        h = alpha * bound + p_v
        sub, nonneg, _, _ = clip(mesh, pcs, h)
        sub = sub.take(nonneg if keep_nonneg else ~nonneg)
        lam, wq = midpoint_quadrature(mesh, sub)
        hq = np.einsum("pqi,pi->pq", lam, h[mesh.triangles[sub.parent]])
        hq = np.maximum(hq, 0.0) if keep_nonneg else np.minimum(hq, 0.0)
        total += np.sum(wq * hq * hq)
    return float(np.sqrt(max(total, 0.0)) / alpha)


def merit_function(p: np.ndarray, problem) -> float:
    """|p - S*S clamp(-p/alpha) + S*z|^2."""
    d = p - problem.adjoint(problem.project(p))
    return problem.disc.inner(d, d)


def residual(p: np.ndarray, problem) -> tuple[float, VariationalControl]:
    """|v - clamp(-p(v)/alpha)| for v = clamp(-p/alpha), together with v."""
    v = problem.project(p)
    return l2_distance(v, problem.project(problem.adjoint(v))), v


@dataclass
class _Candidate:
    """Admissible control reconstructed from an adjoint iterate."""

    p: np.ndarray
    v: VariationalControl
    p_v: np.ndarray
    merit: float

    @classmethod
    def from_adjoint(cls, problem, p):
        v = problem.project(p)
        p_v = problem.adjoint(v)
        d = p - p_v
        return cls(p, v, p_v, problem.disc.inner(d, d))

    def quality(self, problem) -> float:
        return aposteriori_bound(self.v, problem, self.p_v)

    def residual(self, problem) -> float:
        return l2_distance(self.v, problem.project(self.p_v))


# ---------------------------------------------------------------- Newton step

def conjugate_gradient(apply, f, inner, x0, rtol, maxiter, atol=np.inf):
    """CG for an operator that is self-adjoint in the inner product ``inner``.

    Stops once the residual norm is below both ``rtol * |f|`` and ``atol``.
    """
    fnorm_sq = inner(f, f)
    if fnorm_sq <= 0.0:
        return np.zeros_like(f), 0
    x = x0.copy()
    r = f - apply(x)
    d = r.copy()
    rr = inner(r, r)
    target = min(rtol**2 * fnorm_sq, atol**2)
    for k in range(maxiter + 1):
        if rr <= target:
            return x, k
        if k == maxiter:
            break
        Ad = apply(d)
        dAd = inner(d, Ad)
        if not dAd > 0.0:
            raise SolverError("reduced operator is not positive definite")
        step = rr / dAd
        x += step * d
        r -= step * Ad
        rr_new = inner(r, r)
        d = r + (rr_new / rr) * d
        rr = rr_new
    raise SolverError(
        f"CG did not converge in {maxiter} iterations (relative residual {np.sqrt(rr / fnorm_sq):.3e})"
    )


@dataclass
class ReducedSystem:
    """Reduced Newton system on the inactive set of ``partition``.

    In coefficient form the unknown ``c`` (the inactive part of the next
    control) solves ``T c = f`` with ``T c = c + S*S(chi c) / alpha``; ``T`` is
    self-adjoint in the inner product ``<c, d> = c . M_chi d``. Degrees of
    freedom whose support meets the inactive set in (almost) no area are pinned
    to zero.
    """

    problem: object
    partition: ActivePartition
    free: np.ndarray
    M_chi: object
    rhs: np.ndarray

    @classmethod
    def build(cls, problem, part: ActivePartition, pin_area: float) -> "ReducedSystem":
        disc = problem.disc
        mesh = part.mesh
        alpha = part.alpha
        inactive = part.labels == Region.INACTIVE
        areas = part.pieces.areas(mesh)[inactive]
        tri = mesh.triangles[part.pieces.parent[inactive]]
        support = np.bincount(tri.ravel(), np.repeat(areas, 3), minlength=mesh.n_vertices)
        free = disc.free & (support > pin_area * mesh.h_max**2)
        mask = free.astype(float)
        M_chi = _mask_matrix(cut_mass_matrix(part), mask)

        load_act = region_load(part, {Region.LOWER: part.a, Region.UPPER: part.b})
        q_act = disc.solve_adjoint(disc.solve_load(load_act))
        rhs = mask * (problem.adjoint_of_target - q_act) / alpha
        return cls(problem, part, free, M_chi, rhs)

    def inner(self, c, d) -> float:
        return float(c @ (self.M_chi @ d))

    def apply(self, c: np.ndarray) -> np.ndarray:
        disc = self.problem.disc
        q = disc.solve_adjoint(disc.solve_load(self.M_chi @ c))
        return c + self.free * q / self.partition.alpha

    def matrix_form(self, c: np.ndarray) -> np.ndarray:
        """Euclidean-symmetric form M_chi T c."""
        return self.M_chi @ self.apply(c)


def _mask_matrix(M, mask):
    D = sp.diags(mask)
    return (D @ M @ D).tocsr()


@dataclass
class NewtonStep:
    v_plus: VariationalControl
    p_plus: np.ndarray
    cg_iterations: int
    partition: ActivePartition


def newton_step(p: np.ndarray, problem, cfg: SsnConfig | None = None, x0: np.ndarray | None = None) -> NewtonStep:
    """Full Newton step from the adjoint iterate ``p``."""
    cfg = cfg or SsnConfig()
    bounds = problem.bounds
    part = classify(problem.mesh, p, bounds.a, bounds.b, problem.alpha)
    system = ReducedSystem.build(problem, part, cfg.pin_area)
    if x0 is None:
        x0 = -p / problem.alpha
    x0 = np.where(system.free, x0, 0.0)
    maxiter = cfg.cg_max if cfg.cg_max is not None else 10 * problem.mesh.n_vertices
    atol = cfg.cg_abs_tol if cfg.cg_abs_tol is not None else 1e-2 * cfg.stop_tol
    c, its = conjugate_gradient(
        system.apply, system.rhs, system.inner, x0, cfg.cg_rel_tol, maxiter, atol
    )
    v_plus = VariationalControl(part, c)
    p_plus = problem.adjoint(v_plus)
    return NewtonStep(v_plus, p_plus, its, part)


# ------------------------------------------------------------------- drivers

def initial_adjoint(problem, v0) -> np.ndarray:
    """Adjoint state of the initial control (a constant, nodal vector or control)."""
    if np.isscalar(v0):
        v0 = np.full(problem.mesh.n_vertices, float(v0))
    return problem.adjoint(v0)


def _best_certified(problem, cand: "_Candidate", step: "NewtonStep"):
    """The better certified of ``clamp(-p/alpha)`` and the full-step iterate v+.

    Both are valid certificates when admissible. For small alpha the projected
    candidate amplifies the reduced-system residual by roughly |S|^2 / alpha,
    while v+ carries it directly.
    """
    best, quality = cand.v, cand.quality(problem)
    v_plus = step.v_plus
    if v_plus.is_admissible(_admissibility_tol(v_plus)):
        q_plus = aposteriori_bound(v_plus, problem, step.p_plus)
        if q_plus < quality:
            best, quality = v_plus, q_plus
    return best, quality


def _newton(problem, v0, cfg: SsnConfig, damped: bool, max_steps: int | None = None):
    p = initial_adjoint(problem, v0)
    cur = _Candidate.from_adjoint(problem, p)
    report = SolverReport(converged=False)
    report.initial_residual = cur.residual(problem)
    report.quality = cur.quality(problem)
    best = cur.v
    if report.quality <= cfg.stop_tol and max_steps is None:
        report.converged = True
        report.message = "initial guess satisfies the stopping criterion"
        return best, report, None
    warm = cur.v.inactive
    limit = cfg.max_newton if max_steps is None else max_steps
    step = None
    for k in range(1, limit + 1):
        step = newton_step(cur.p, problem, cfg, warm)
        lam = 1.0
        trial = _Candidate.from_adjoint(problem, step.p_plus)
        if damped:
            while trial.merit > (1.0 - cfg.armijo_sigma * lam) * cur.merit:
                lam *= cfg.armijo_beta
                if lam < cfg.lambda_min:
                    report.message = (
                        f"step size underflow at iteration {k} (merit {cur.merit:.3e})"
                    )
                    return best, report, step
                trial = _Candidate.from_adjoint(problem, lam * step.p_plus + (1.0 - lam) * cur.p)
        cur = trial
        best, quality = _best_certified(problem, cur, step)
        report.iterations = k
        report.quality = quality
        report.residuals.append(cur.residual(problem))
        report.merits.append(cur.merit)
        report.lambdas.append(lam)
        report.cg_iterations.append(step.cg_iterations)
        report.inactive_areas.append(step.partition.area(Region.INACTIVE))
        log.info(
            "newton %d: residual %.3e merit %.3e lambda %.3g cg %d quality %.3e",
            k, report.residuals[-1], cur.merit, lam, step.cg_iterations, quality,
        )
        if max_steps is None and quality <= cfg.stop_tol:
            report.converged = True
            report.message = "converged"
            return best, report, step
        warm = step.v_plus.inactive
    if max_steps is None:
        report.message = f"no convergence in {limit} Newton steps"
    else:
        report.converged = report.quality <= cfg.stop_tol
    return best, report, step


def solve_undamped(problem, v0, cfg: SsnConfig | None = None):
    """Full-step Newton iteration (primal-dual active set strategy).

    Returns the admissible control reconstructed from the final adjoint and a
    :class:`SolverReport`.
    """
    u, report, _ = _newton(problem, v0, cfg or SsnConfig(), damped=False)
    return u, report


def solve_damped(problem, v0, cfg: SsnConfig | None = None):
    """Newton iteration damped in the adjoint variable by Armijo backtracking on
    the merit function."""
    u, report, _ = _newton(problem, v0, cfg or SsnConfig(), damped=True)
    return u, report


def newton_steps(problem, v0, n: int, cfg: SsnConfig | None = None):
    """Exactly ``n`` undamped steps; returns the last full-step iterate ``v+``."""
    u, report, step = _newton(problem, v0, cfg or SsnConfig(), damped=False, max_steps=n)
    return (step.v_plus if step is not None else u), report


def fixed_point_solve(problem, v0, cfg: SsnConfig | None = None):
    """Projected fixed-point iteration u <- clamp(-p(u)/alpha)."""
    cfg = cfg or SsnConfig()
    if problem.alpha <= problem.operator_norm_sq():
        warnings.warn(
            "alpha does not exceed |S_h|^2; the fixed-point iteration may not converge",
            RuntimeWarning,
            stacklevel=2,
        )
    p = initial_adjoint(problem, v0)
    report = SolverReport(converged=False)
    v = problem.project(p)
    for k in range(1, cfg.max_fixed_point + 1):
        p = problem.adjoint(v)
        v_next = problem.project(p)
        res = l2_distance(v, v_next)
        report.iterations = k
        report.residuals.append(res)
        v = v_next
        if res < cfg.stop_tol:
            report.converged = True
            break
    else:
        report.message = f"no convergence in {cfg.max_fixed_point} fixed-point iterations"
    report.quality = aposteriori_bound(v, problem)
    return v, report
