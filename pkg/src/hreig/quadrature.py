"""Quadrature rules on the reference triangle and on segments.

Triangle rules are conical-product Gauss-Jacobi rules: exact for all
polynomials of total degree <= 2n-1 when built from n-point 1D rules,
with strictly positive weights.  All bilinear forms in this package are
polynomial, so exactness (not efficiency) is the contract.
"""

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def triangle_rule(degree: int):
    """Return (points, weights) exact for total degree <= ``degree``.

    Points are (nq, 2) coordinates on the reference triangle
    {x >= 0, y >= 0, x + y <= 1}; weights sum to 1/2 (its area).
    """
    if degree < 0:
        raise ValueError("quadrature degree must be nonnegative")
    n = degree // 2 + 1
    xg, wg = np.polynomial.legendre.leggauss(n)
    xg = 0.5 * (xg + 1.0)
    wg = 0.5 * wg
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xj = 0.5 * (xj + 1.0)
    wj = 0.25 * wj  # jacobi weight on [-1,1] carries the (1-x) factor
    X, Y = np.meshgrid(xj, xg, indexing="ij")
    W = np.outer(wj, wg)
    pts = np.column_stack([X.ravel(), ((1.0 - X) * Y).ravel()])
    wts = 2.0 * W.ravel()
    wts *= 0.5 / wts.sum()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


@lru_cache(maxsize=None)
def segment_rule(degree: int):
    """Gauss-Legendre rule on [0, 1] exact for degree <= ``degree``."""
    if degree < 0:
        raise ValueError("quadrature degree must be nonnegative")
    n = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def map_to_triangles(vertices: np.ndarray, pts: np.ndarray, wts: np.ndarray):
    """Map a reference rule to a batch of physical triangles.

    vertices: (T, 3, 2) triangle corner coordinates.
    Returns (T, nq, 2) points and (T, nq) weights scaled by 2*|K|.
    """
    v0 = vertices[:, 0]
    e1 = vertices[:, 1] - v0
    e2 = vertices[:, 2] - v0
    phys = (
        v0[:, None, :]
        + pts[None, :, 0, None] * e1[:, None, :]
        + pts[None, :, 1, None] * e2[:, None, :]
    )
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    w = wts[None, :] * np.abs(det)[:, None]
    return phys, w
