import numpy as np
import pytest
import scipy.sparse as sp

from vdnewton.fem import (
    Discretization,
    FactorizedSpd,
    OperatorKind,
    assemble_mass,
    element_mass,
    element_stiffness,
    integrate_function,
    interpolate,
    load_function,
)
from vdnewton.mesh import TriMesh, h_of_level, unit_square

PI = np.pi


def reference_mesh():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return TriMesh(v, np.array([[0, 1, 2]]), np.ones(3, dtype=bool))


def test_reference_element_matrices():
    m = reference_mesh()
    K = element_stiffness(m)[0]
    np.testing.assert_allclose(K, [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]], atol=1e-15)
    M = element_mass(m)[0]
    np.testing.assert_allclose(M, 0.5 / 12 * (np.ones((3, 3)) + np.eye(3)), atol=1e-16)


def test_mass_total_and_stiffness_kernel():
    m = unit_square(3)
    M = assemble_mass(m)
    one = np.ones(m.n_vertices)
    assert abs(one @ M @ one - 1.0) < 1e-14
    disc = Discretization(m, OperatorKind.NEUMANN_HELMHOLTZ)
    # -Laplace + I applied to constants is the mass matrix
    np.testing.assert_allclose(disc.A @ one, M @ one, atol=1e-14)


@pytest.mark.parametrize("kind", list(OperatorKind))
def test_discrete_adjoint_identity(kind, rng):
    """<S u, w> = <u, S* w> for 100 random pairs, relative to |S u| |w|."""
    disc = Discretization(unit_square(3), kind)
    worst = 0.0
    for _ in range(100):
        u, w = rng.standard_normal((2, disc.n))
        su = disc.solve_state(u)
        lhs = disc.inner(su, w)
        rhs = disc.inner(u, disc.solve_adjoint(w))
        scale = max(disc.norm(su) * disc.norm(w), disc.norm(u) * disc.norm(disc.solve_adjoint(w)))
        worst = max(worst, abs(lhs - rhs) / scale)
    assert worst <= 1e-12


def test_dirichlet_state_vanishes_on_boundary(rng):
    disc = Discretization(unit_square(3), "dirichlet")
    y = disc.solve_state(rng.standard_normal(disc.n))
    assert np.all(y[disc.mesh.boundary] == 0.0)


def _l2_error(mesh, y, exact):
    from vdnewton.quadrature import degree7_rule

    bary, w = degree7_rule()
    pts = np.einsum("qi,tid->tqd", bary, mesh.corners)
    yh = np.einsum("qi,ti->tq", bary, y[mesh.triangles])
    e = yh - exact(pts[..., 0], pts[..., 1])
    return np.sqrt(np.sum(mesh.areas[:, None] * w * e**2))


@pytest.mark.parametrize(
    "kind,exact,source",
    [
        ("dirichlet", lambda x, y: np.sin(PI * x) * np.sin(PI * y),
         lambda x, y: 2 * PI**2 * np.sin(PI * x) * np.sin(PI * y)),
        ("neumann", lambda x, y: np.cos(PI * x) * np.cos(PI * y),
         lambda x, y: (2 * PI**2 + 1) * np.cos(PI * x) * np.cos(PI * y)),
    ],
)
def test_state_solver_converges_quadratically(kind, exact, source):
    errs = []
    for level in (3, 4, 5):
        m = unit_square(level)
        disc = Discretization(m, kind)
        errs.append(_l2_error(m, disc.solve_state(source), exact))
    rates = [np.log(errs[i] / errs[i + 1]) / np.log(h_of_level(3 + i) / h_of_level(4 + i)) for i in range(2)]
    assert all(1.9 <= r <= 2.1 for r in rates), rates


def test_load_function_and_integration():
    m = unit_square(2)
    f = lambda x, y: x**3 * y**2 + 1.0
    # exact: int x^3 y^2 = 1/12
    assert np.isclose(integrate_function(m, f), 1.0 + 1.0 / 12.0, rtol=1e-14)
    assert np.isclose(load_function(m, f).sum(), 1.0 + 1.0 / 12.0, rtol=1e-14)
    # load of a P1 function equals M times its interpolant
    g = lambda x, y: 2.0 - x + 3.0 * y
    np.testing.assert_allclose(load_function(m, g), assemble_mass(m) @ interpolate(m, g), atol=1e-15)


@pytest.mark.parametrize("kind,limit", [("dirichlet", 1.0 / (4 * PI**4)), ("neumann", 1.0)])
def test_operator_norm_limits(kind, limit):
    vals = [Discretization(unit_square(k), kind).operator_norm_sq() for k in (3, 4, 5)]
    errs = [abs(v - limit) / limit for v in vals]
    assert errs[-1] < 5e-3
    if kind == "dirichlet":
        assert errs[0] > errs[1] > errs[2]


def test_factorisation_reports_failure():
    A = sp.csc_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(np.linalg.LinAlgError):
        FactorizedSpd(A).solve(np.array([1.0, 0.0]))


def test_load_dispatch_rejects_bad_shapes():
    disc = Discretization(unit_square(1), "neumann")
    with pytest.raises(ValueError):
        disc.load(np.ones(3))
