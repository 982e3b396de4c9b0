"""Small planar geometry helpers shared across modules."""

import numpy as np


def point_in_polygon(x, y, poly):
    """Ray-casting point-in-polygon test.

    poly: (N, 2) array of vertices, ordered (either winding). Points exactly
    on an edge may land on either side; callers that care should not rely on
    boundary behaviour.
    """
    poly = np.asarray(poly, dtype=float)
    n = len(poly)
    inside = False
    x1, y1 = poly[-1]
    for i in range(n):
        x2, y2 = poly[i]
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
        x1, y1 = x2, y2
    return inside


def points_in_polygon(xs, ys, poly):
    """Vectorized point_in_polygon over equal-length coordinate arrays."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    poly = np.asarray(poly, dtype=float)
    inside = np.zeros(xs.shape, dtype=bool)
    x1, y1 = poly[-1]
    for x2, y2 in poly:
        crossing = (y1 > ys) != (y2 > ys)
        if np.any(crossing):
            x_cross = x1 + (ys - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crossing & (xs < x_cross)
        x1, y1 = x2, y2
    return inside


def unit(v):
    """Normalize a vector; raises on near-zero input."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero vector")
    return v / n
