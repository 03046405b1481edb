import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vdnewton.cut import (
    Region,
    chi_load,
    chi_load_complement,
    classify,
    cut_mass_matrix,
    integrate_chi_pair,
    write_segments_csv,
)
from vdnewton.fem import assemble_mass
from vdnewton.mesh import TriMesh, unit_square


def single_triangle():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return TriMesh(v, np.array([[0, 1, 2]]), np.ones(3, dtype=bool))


def clip_polygon_area(poly, g):
    """Oracle: area of {g >= 0} inside a convex polygon by Sutherland-Hodgman
    clipping against an affine ``g`` followed by the shoelace formula."""
    out = []
    n = len(poly)
    for i in range(n):
        p, q = np.asarray(poly[i]), np.asarray(poly[(i + 1) % n])
        gp, gq = g(*p), g(*q)
        if gp >= 0:
            out.append(p)
        if (gp >= 0) != (gq >= 0):
            out.append(p + gp / (gp - gq) * (q - p))
    if len(out) < 3:
        return 0.0
    x, y = np.array(out).T
    return 0.5 * abs(x @ np.roll(y, -1) - y @ np.roll(x, -1))


def test_clip_oracle_self_check():
    tri = [(0, 0), (1, 0), (0, 1)]
    assert np.isclose(clip_polygon_area(tri, lambda x, y: 1.0), 0.5)
    assert np.isclose(clip_polygon_area(tri, lambda x, y: 0.5 - x), 0.5 - 0.125)


@pytest.mark.parametrize("vals", [(-1.0, 1.0, 1.0), (-1.0, 2.0, 2.0), (0.5, -0.25, 1.0), (1.0, -2.0, -3.0)])
def test_inactive_fraction_matches_oracle(vals):
    """Vertex values of -p/alpha - a; (-1, +1, +1) cuts at the edge midpoints
    and leaves 3/4 of the element inactive."""
    m = single_triangle()
    g = np.array(vals)
    affine = lambda x, y: g[0] + (g[1] - g[0]) * x + (g[2] - g[0]) * y
    part = classify(m, -g, np.zeros(3), np.full(3, 10.0), 1.0)
    expected = clip_polygon_area([(0, 0), (1, 0), (0, 1)], affine)
    assert np.isclose(part.area(Region.INACTIVE), expected, atol=1e-15)
    assert np.isclose(part.area(Region.LOWER), 0.5 - expected, atol=1e-15)


def test_midpoint_cut_fraction_frozen():
    m = single_triangle()
    part = classify(m, np.array([1.0, -1.0, -1.0]), np.zeros(3), np.full(3, 10.0), 1.0)
    assert part.area(Region.INACTIVE) / m.areas[0] == pytest.approx(0.75, abs=1e-15)
    assert part.element_labels[0] == Region.CUT


@given(
    vals=st.lists(st.floats(-3, 3, allow_nan=False), min_size=3, max_size=3),
    gap=st.floats(0.05, 3.0),
)
def test_area_partition_single_element(vals, gap):
    m = single_triangle()
    w = np.array(vals)
    part = classify(m, -w, np.zeros(3), np.full(3, gap), 1.0)
    total = sum(part.area(r) for r in (Region.INACTIVE, Region.LOWER, Region.UPPER))
    assert abs(total - m.areas[0]) <= 1e-12 * m.areas[0]


def test_area_partition_per_element(rng):
    m = unit_square(3)
    for _ in range(10):
        p = rng.standard_normal(m.n_vertices)
        part = classify(m, p, -0.3, 0.4, 1.0)
        per = np.bincount(part.pieces.parent, part.pieces.areas(m), minlength=m.n_triangles)
        assert np.max(np.abs(per - m.areas) / m.areas) <= 1e-12


def test_cut_mass_extremes(rng):
    m = unit_square(3)
    M = assemble_mass(m).toarray()
    inactive = classify(m, np.zeros(m.n_vertices), -1.0, 1.0, 1.0)
    np.testing.assert_allclose(cut_mass_matrix(inactive).toarray(), M, atol=1e-15)
    active = classify(m, np.full(m.n_vertices, -5.0), -1.0, 1.0, 1.0)
    assert abs(cut_mass_matrix(active)).max() == 0.0
    assert active.area(Region.UPPER) == pytest.approx(1.0)


def test_cut_mass_consistency_and_psd(rng):
    m = unit_square(3)
    p = np.sin(7 * m.vertices[:, 0]) * np.cos(5 * m.vertices[:, 1])
    part = classify(m, p, -0.4, 0.5, 1.0)
    assert part.n_cut() > 0
    Mc = cut_mass_matrix(part)
    w = rng.standard_normal(m.n_vertices)
    np.testing.assert_allclose(chi_load(part, w), Mc @ w, atol=1e-13)
    # inactive + active loads add up to the full mass product
    full = assemble_mass(m) @ w
    np.testing.assert_allclose(chi_load(part, w) + chi_load_complement(part, w), full, atol=1e-13)
    dense = Mc.toarray()
    assert np.allclose(dense, dense.T, atol=1e-16)
    assert np.linalg.eigvalsh(dense).min() > -1e-15
    g = rng.standard_normal(m.n_vertices)
    assert np.isclose(integrate_chi_pair(part, w, g), w @ Mc @ g, rtol=1e-12)


def test_exact_integral_of_clamped_linear():
    """The inactive area of a linear function clamped to [0, 1/2] on the unit
    square, x in [0, 1]: the strip 0 < x < 1/2 has area 1/2."""
    m = unit_square(3)
    p = -m.vertices[:, 0]
    part = classify(m, p, 0.0, 0.5, 1.0)
    assert np.isclose(part.area(Region.INACTIVE), 0.5, atol=1e-14)
    assert np.isclose(part.area(Region.UPPER), 0.5, atol=1e-14)


def test_bounds_gap_enforced():
    m = single_triangle()
    with pytest.raises(ValueError):
        classify(m, np.zeros(3), 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        classify(m, np.zeros(3), 0.0, 1.0, 0.0)


def test_segments_csv(tmp_path):
    m = unit_square(2)
    part = classify(m, -m.vertices[:, 0] * 1.3, 0.2, 0.9, 1.0)
    write_segments_csv(part, tmp_path / "s.csv")
    data = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    # all segment endpoints lie on x = 0.2/1.3 or x = 0.9/1.3
    xs = data[:, [0, 2]].ravel()
    assert np.all(np.isclose(xs, 0.2 / 1.3) | np.isclose(xs, 0.9 / 1.3))
