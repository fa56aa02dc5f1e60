"""Small exact helpers for convex polygons in the plane."""

import numpy as np


def polygon_area(poly):
    """Signed shoelace area; positive for counter-clockwise rings."""
    p = np.asarray(poly, dtype=float)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_to_halfspaces(poly):
    """Return (H, h) with the CCW convex polygon equal to {x | H x <= h}.

    Rows are normalised to unit length so that ``H x - h`` is a distance.
    """
    p = np.asarray(poly, dtype=float)
    rows, rhs = [], []
    for k in range(len(p)):
        a, b = p[k], p[(k + 1) % len(p)]
        d = b - a
        nrm = np.hypot(d[0], d[1])
        if nrm == 0.0:
            continue
        normal = np.array([d[1], -d[0]]) / nrm
        rows.append(normal)
        rhs.append(float(normal @ a))
    return np.array(rows), np.array(rhs)


def clip_halfplane(poly, normal, offset, eps=0.0):
    """Sutherland-Hodgman clip of a polygon against ``normal . x <= offset``."""
    out = []
    n = len(poly)
    if n == 0:
        return out
    for k in range(n):
        cur = np.asarray(poly[k], dtype=float)
        nxt = np.asarray(poly[(k + 1) % n], dtype=float)
        fc = float(normal @ cur) - offset
        fn = float(normal @ nxt) - offset
        if fc <= eps:
            out.append(cur)
        if (fc < -eps and fn > eps) or (fc > eps and fn < -eps):
            t = fc / (fc - fn)
            out.append(cur + t * (nxt - cur))
    return out


def halfspaces_to_polygon(H, h, box=1e6):
    """CCW vertex list of a bounded 2D polytope {x | H x <= h}."""
    poly = [np.array(v, dtype=float) for v in
            [(-box, -box), (box, -box), (box, box), (-box, box)]]
    for row, rhs in zip(np.asarray(H, float), np.asarray(h, float)):
        poly = clip_halfplane(poly, row, rhs)
        if not poly:
            break
    poly = _dedupe(poly)
    if poly and np.max(np.abs(poly)) >= 0.5 * box:
        raise ValueError("halfspaces describe an unbounded set")
    return poly


def convex_intersection(p, q):
    """Intersection of two convex CCW polygons (possibly empty)."""
    H, h = polygon_to_halfspaces(q)
    out = [np.asarray(v, float) for v in p]
    for row, rhs in zip(H, h):
        out = clip_halfplane(out, row, rhs)
        if not out:
            break
    return _dedupe(out)


def _dedupe(poly, tol=1e-12):
    out = []
    for v in poly:
        if not out or np.max(np.abs(v - out[-1])) > tol:
            out.append(v)
    if len(out) > 1 and np.max(np.abs(out[0] - out[-1])) <= tol:
        out.pop()
    return out


def point_segment_distance(x, a, b):
    a, b, x = (np.asarray(v, float) for v in (a, b, x))
    d = b - a
    L2 = float(d @ d)
    t = 0.0 if L2 == 0.0 else min(1.0, max(0.0, float((x - a) @ d) / L2))
    return float(np.linalg.norm(x - (a + t * d)))
