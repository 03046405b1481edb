import dataclasses

import numpy as np
import pytest

from vdnewton.control import l2_error
from vdnewton.mesh import unit_square
from vdnewton.problems import (
    InconsistentTargetError,
    make_dirichlet_example,
    make_neumann_example,
    make_problem,
    verify_manufactured,
)
from vdnewton.ssn import solve_undamped


@pytest.mark.parametrize("name,alpha", [("dirichlet", 1e-3), ("dirichlet", 2e-3), ("neumann", 1.0), ("neumann", 2.0)])
def test_manufactured_solution_consistent(name, alpha):
    report = verify_manufactured(make_problem(name, alpha, unit_square(2)), fine_levels=2)
    assert all(r > 3.0 for r in report.ratios)


@pytest.mark.parametrize("factory", [make_dirichlet_example, make_neumann_example])
def test_flipped_sign_detected(factory):
    with pytest.raises(InconsistentTargetError):
        verify_manufactured(factory(1e-2 if factory is make_dirichlet_example else 1.0, unit_square(2), z_sign=-1.0), 2)


def test_exact_adjoint_matches_discrete(dirichlet3):
    u, _ = solve_undamped(dirichlet3, 0.3)
    p = dirichlet3.adjoint(u)
    x, y = dirichlet3.mesh.vertices.T
    exact = dirichlet3.exact_adjoint(x, y)
    assert np.max(np.abs(p - exact)) < 0.05 * np.max(np.abs(exact))


def test_assembly_deterministic():
    a = make_problem("dirichlet", 1e-3, unit_square(3))
    b = make_problem("dirichlet", 1e-3, unit_square(3))
    assert a.z_load.tobytes() == b.z_load.tobytes()
    assert a.z_norm_sq == b.z_norm_sq


def test_refined_target_restricts_consistently():
    """The restricted fine load of S r equals the coarse load of the prolongated
    function, so z_refine only changes how accurately S r is represented."""
    m = unit_square(2)
    p0 = make_problem("dirichlet", 1e-3, m)
    p1 = make_problem("dirichlet", 1e-3, m, z_refine=1)
    assert p1.params["z_refine"] == 1
    rel = np.linalg.norm(p1.z_load - p0.z_load) / np.linalg.norm(p0.z_load)
    assert 1e-4 < rel < 0.1
    # the squared norm is consistent with the load: |z|^2 >= <z, P z> pattern
    assert p1.z_norm_sq > 0
    u0, _ = solve_undamped(p0, 0.3)
    u1, _ = solve_undamped(p1, 0.3)
    assert l2_error(u1, p1.exact_control) < l2_error(u0, p0.exact_control)


def test_objective_value_at_exact_data():
    """With u equal to the control that generated z, the tracking part reduces
    to the smooth term only."""
    prob = make_problem("neumann", 1.0, unit_square(3))
    smooth_sq = (2.0 * (2 * np.pi**2 + 1)) ** 2 * 0.25  # |c cos cos|^2 = c^2 / 4
    y = prob.state(prob.exact_control)
    track = 0.5 * (prob.disc.inner(y, y) - 2 * y @ prob.z_load + prob.z_norm_sq)
    assert track == pytest.approx(0.5 * smooth_sq, rel=1e-4)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        make_problem("unknown", 1.0, unit_square(1))
    with pytest.raises(ValueError):
        make_problem("dirichlet", 0.0, unit_square(1))
    with pytest.raises(ValueError):
        make_problem("dirichlet", 1.0, unit_square(1), z_refine=-1)
    prob = make_problem("neumann", 1.0, unit_square(1))
    with pytest.raises(ValueError):
        dataclasses.replace(prob, bounds=make_problem("neumann", 1.0, unit_square(2)).bounds)
