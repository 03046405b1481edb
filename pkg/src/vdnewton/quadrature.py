"""Quadrature rules on triangles, expressed in barycentric coordinates.

Weights are normalised to sum to one, so an integral over a triangle T is
``area(T) * sum(w * f(points))``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


def edge_midpoint_rule() -> tuple[np.ndarray, np.ndarray]:
    """Three-point rule at the edge midpoints, exact for quadratics."""
    bary = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    return bary, np.full(3, 1.0 / 3.0)


@lru_cache(maxsize=None)
def conical_rule(npts: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Stroud conical product rule with ``npts**2`` points.

    Exact for polynomials of degree ``2*npts - 1``; the default gives degree 7
    with strictly positive weights.
    """
    xj, wj = roots_jacobi(npts, 1.0, 0.0)
    xl, wl = np.polynomial.legendre.leggauss(npts)
    u = 0.5 * (1.0 + xj)
    wu = wj / 4.0
    v = 0.5 * (1.0 + xl)
    wv = wl / 2.0
    U, V = np.meshgrid(u, v, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    w = np.outer(wu, wv).ravel()
    bary = np.column_stack([1.0 - x - y, x, y])
    w = w / w.sum()
    bary.setflags(write=False)
    w.setflags(write=False)
    return bary, w


def degree7_rule() -> tuple[np.ndarray, np.ndarray]:
    return conical_rule(4)
