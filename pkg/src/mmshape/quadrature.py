"""Quadrature on triangles, segments and convex polygons."""
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Collapsed Gauss-Legendre rule on the reference triangle (0,0),(1,0),(0,1).

    Returns barycentric-style reference points (n, 2) and weights summing to
    1/2; exact for polynomials of total degree <= ``degree``.
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    nu = max(1, -(-(degree + 2) // 2))
    nv = max(1, -(-(degree + 1) // 2))
    xu, wu = np.polynomial.legendre.leggauss(nu)
    xv, wv = np.polynomial.legendre.leggauss(nv)
    xu = 0.5 * (xu + 1.0)
    xv = 0.5 * (xv + 1.0)
    wu = 0.5 * wu
    wv = 0.5 * wv
    U, V = np.meshgrid(xu, xv, indexing="ij")
    W = np.outer(wu, wv)
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    w = (W * (1.0 - U)).ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


def gauss_segment(n=2):
    """Gauss-Legendre points on [0, 1] and weights summing to 1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def map_triangle_rule(coords, degree):
    """Map the reference rule onto triangles ``coords`` (m, 3, 2).

    Returns points (m, q, 2), weights (m, q) and the reference points used,
    so callers can evaluate P1 basis functions as barycentric coordinates.
    """
    ref, w = triangle_rule(degree)
    coords = np.asarray(coords, dtype=float)
    e1 = coords[:, 1] - coords[:, 0]
    e2 = coords[:, 2] - coords[:, 0]
    det = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    pts = coords[:, None, 0] + ref[None, :, 0, None] * e1[:, None] + ref[None, :, 1, None] * e2[:, None]
    return pts, det[:, None] * w[None, :], ref


def polygon_quadrature(poly, degree):
    """Fan-triangulated rule on a convex polygon.

    Exact for bivariate polynomials of total degree <= ``degree``.  A
    degenerate polygon (area below 1e-14) gives an empty rule.
    """
    if not 1 <= degree <= 6:
        raise ValueError("degree must be in 1..6")
    p = np.asarray(poly, dtype=float).reshape(-1, 2)
    if len(p) < 3:
        return np.zeros((0, 2)), np.zeros(0)
    tris = np.stack([np.repeat(p[:1], len(p) - 2, axis=0), p[1:-1], p[2:]], axis=1)
    pts, w, _ = map_triangle_rule(tris, degree)
    if w.sum() < 1e-14:
        return np.zeros((0, 2)), np.zeros(0)
    return pts.reshape(-1, 2), w.ravel()


def polygon_moment(poly, a, b):
    """Exact integral of x^a y^b over a simple polygon via Green's theorem.

    Used as an independent oracle: integrate x^(a+1) y^b / (a+1) along the
    boundary with an exact Gauss rule per edge.
    """
    p = np.asarray(poly, dtype=float)
    q = np.roll(p, -1, axis=0)
    n = (a + b + 2) // 2 + 1
    t, w = gauss_segment(n)
    total = 0.0
    for (x0, y0), (x1, y1) in zip(p, q):
        x = x0 + t * (x1 - x0)
        y = y0 + t * (y1 - y0)
        total += np.sum(w * x ** (a + 1) * y**b) / (a + 1) * (y1 - y0)
    return float(total)
