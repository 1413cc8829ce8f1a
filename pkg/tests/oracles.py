"""Brute-force reference implementations used by the tests."""

import numpy as np


def dominates(a, b):
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def brute_fronts(points):
    remaining = set(range(len(points)))
    fronts = []
    while remaining:
        front = sorted(i for i in remaining
                       if not any(dominates(points[j], points[i]) for j in remaining if j != i))
        fronts.append(front)
        remaining -= set(front)
    return fronts


def brute_crowding(points):
    """Crowding distance for points with distinct values per objective."""
    pts = np.asarray(points, dtype=float)
    n, m = pts.shape
    out = np.zeros(n)
    for j in range(m):
        col = pts[:, j]
        span = col.max() - col.min()
        for i in range(n):
            lower = col[col < col[i]]
            upper = col[col > col[i]]
            if len(lower) == 0 or len(upper) == 0:
                out[i] = np.inf
            elif span > 0:
                out[i] += (upper.min() - lower.max()) / span
    return out


def grid_hypervolume(points, ref, resolution=400):
    xs = np.linspace(0, ref[0], resolution, endpoint=False) + ref[0] / resolution / 2
    ys = np.linspace(0, ref[1], resolution, endpoint=False) + ref[1] / resolution / 2
    gx, gy = np.meshgrid(xs, ys)
    covered = np.zeros_like(gx, dtype=bool)
    for x, y in points:
        covered |= (gx >= x) & (gy >= y)
    return covered.mean() * ref[0] * ref[1]
