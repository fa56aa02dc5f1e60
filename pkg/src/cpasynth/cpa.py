"""Continuous piecewise-affine (CPA) fields on a triangulation.

A CPA field is fixed by its vertex values; on simplex ``i`` it is the affine map
``W(x) = W[x_i0] + (x - x_i0) . grad_i`` with ``grad_i = X_i^{-1} dW_i``, where the
rows of ``X_i`` are ``x_ij - x_i0`` and ``dW_i[j] = W[x_ij] - W[x_i0]``.
"""

from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional

import numpy as np
from scipy.spatial import ConvexHull

from .errors import CpaSynthError, OutOfDomainError
from .mesh import locate

EPS_R = 1e-6
LEVEL_BISECTIONS = 40


class CpaScalarField:
    def __init__(self, mesh, values):
        v = np.array(values, dtype=float).reshape(-1)
        if len(v) != mesh.num_vertices:
            raise ValueError("one value per mesh vertex required")
        v.setflags(write=False)
        self.mesh = mesh
        self.values = v
        self._grads = None

    @property
    def gradients(self):
        if self._grads is None:
            self._grads = gradients(self.mesh, self.values)
            self._grads.setflags(write=False)
        return self._grads

    def __call__(self, x):
        return evaluate(self.mesh, self, x)


class CpaVectorField:
    def __init__(self, mesh, values):
        v = np.array(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != mesh.num_vertices:
            raise ValueError("one value per mesh vertex required")
        v.setflags(write=False)
        self.mesh = mesh
        self.values = v

    @property
    def m(self):
        return self.values.shape[1]

    def __call__(self, x):
        T = self.mesh
        i = min(locate(T, x))
        lam = T.barycentric(x)[i]
        return lam @ self.values[T.simplexes[i]]


def _values(W):
    return W.values if isinstance(W, (CpaScalarField, CpaVectorField)) else np.asarray(W, float)


def gradients(T, values):
    """Per-simplex gradients, shape (M, n) for scalar values or (M, n, m) for vector values."""
    W = np.asarray(values, dtype=float)
    dW = W[T.simplexes[:, 1:]] - W[T.simplexes[:, :1]]
    if W.ndim == 1:
        return np.einsum("mij,mj->mi", T.shape_inv, dW)
    return np.einsum("mij,mjk->mik", T.shape_inv, dW)


def gradient(T, W, i):
    W = _values(W)
    dW = W[T.simplexes[i, 1:]] - W[T.simplexes[i, 0]]
    return T.shape_inv[i] @ dW


def evaluate(T, W, x):
    """Value of the CPA interpolant at ``x`` (first containing simplex)."""
    W = _values(W)
    x = np.asarray(x, dtype=float)
    i = min(locate(T, x))
    g = gradient(T, W, i)
    x0 = T.vertices[T.simplexes[i, 0]]
    return float(W[T.simplexes[i, 0]] + (x - x0) @ g)


def dini(T, V, u, sys, i, j):
    """``(A_s x + e_s) . grad V_i + u_x . (B_s^T grad V_i)`` at local vertex ``j`` of simplex ``i``."""
    g = gradient(T, V, i)
    md = sys.mode(int(T.modes[i]))
    v = T.simplexes[i, j]
    x = T.vertices[v]
    ux = _values(u).reshape(T.num_vertices, -1)[v]
    return float((md.A @ x + md.e) @ g + ux @ (md.B.T @ g))


def dini_table(T, V, U, sys):
    """All Dini values, shape (M, n+1)."""
    G = gradients(T, _values(V))
    Uv = _values(U).reshape(T.num_vertices, -1)
    X = T.vertices[T.simplexes]
    Ux = Uv[T.simplexes]
    out = np.empty(T.simplexes.shape)
    for md in sys.modes:
        sel = T.modes == md.index
        if not np.any(sel):
            continue
        f = X[sel] @ md.A.T + Ux[sel] @ md.B.T + md.e
        out[sel] = np.einsum("mjk,mk->mj", f, G[sel])
    return out


def _nonzero_mask(T):
    mask = np.ones(T.simplexes.shape, dtype=bool)
    if T.origin_id is not None:
        mask &= T.simplexes != T.origin_id
    return mask


def largest_b2(T, V, U, sys):
    """Largest ``b2`` with ``D+_{ij} V <= -b2 V_{x_ij}`` at every nonzero vertex."""
    Vv = _values(V)
    nz = _nonzero_mask(T)
    Vx = Vv[T.simplexes]
    if np.any(Vx[nz] <= 0):
        raise CpaSynthError("V must be positive at every nonzero vertex")
    D = dini_table(T, Vv, U, sys)
    return float(np.min(-D[nz] / Vx[nz]))


@dataclass
class DecreaseSubset:
    simplex_indices: frozenset
    b2hat: Optional[float]


def decrease_subset(T, V, U, sys):
    """Simplexes whose nonzero vertices all have strictly negative Dini values."""
    Vv = _values(V)
    D = dini_table(T, Vv, U, sys)
    nz = _nonzero_mask(T)
    keep = np.all(np.where(nz, D < 0, True), axis=1)
    idx = np.flatnonzero(keep)
    if len(idx) == 0:
        return DecreaseSubset(frozenset(), None)
    Vx = Vv[T.simplexes[idx]]
    ratios = (-D[idx] / np.where(nz[idx], Vx, 1.0))[nz[idx]]
    return DecreaseSubset(frozenset(idx.tolist()), float(np.min(ratios)))


# ------------------------------------------------------------ sublevel sets


@dataclass
class SublevelSet:
    level: float
    pieces: Dict[int, np.ndarray]
    components: List[List[int]]
    volume: float
    piece_volumes: Dict[int, float] = field(default_factory=dict)

    @property
    def connected(self):
        return len(self.components) == 1

    @property
    def simplexes(self):
        return sorted(self.pieces)


def _clip_points(P, vals, r):
    pts = [P[k] for k in range(len(P)) if vals[k] <= r]
    for a, b in combinations(range(len(P)), 2):
        va, vb = vals[a], vals[b]
        if (va < r < vb) or (vb < r < va):
            t = (r - va) / (vb - va)
            pts.append(P[a] + t * (P[b] - P[a]))
    return np.array(pts)


def _order_ccw(pts):
    c = pts.mean(axis=0)
    ang = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])
    return pts[np.argsort(ang, kind="stable")]


def _piece_volume(pts, n):
    if len(pts) < n + 1:
        return 0.0
    if n == 2:
        from .geometry import polygon_area
        return abs(polygon_area(pts))
    try:
        return float(ConvexHull(pts).volume)
    except Exception:
        return 0.0


def _facet_measure(T, facet, vals, r):
    fv = np.array([vals[k] for k in facet])
    if fv.min() >= r:
        return 0.0
    if T.n == 2:
        a, b = facet
        L = float(np.linalg.norm(T.vertices[a] - T.vertices[b]))
        if fv.max() <= r:
            return L
        return L * (r - fv.min()) / (fv.max() - fv.min())
    return float(r - fv.min())


def sublevel(T, V, r):
    """Exact per-simplex clip of ``{V <= r}`` with facet-adjacency components."""
    vals = _values(V)
    P = T.vertices[T.simplexes]
    Vx = vals[T.simplexes]
    pieces, pvol = {}, {}
    full = T.volumes()
    for i in range(len(T)):
        if Vx[i].min() >= r:
            continue
        if Vx[i].max() <= r:
            pts = P[i]
            vol = float(full[i])
        else:
            pts = _clip_points(P[i], Vx[i], r)
            if T.n == 2:
                pts = _order_ccw(pts)
            vol = _piece_volume(pts, T.n)
        if T.n == 2:
            pts = _order_ccw(pts)
        pieces[i] = pts
        pvol[i] = vol
    parent = {i: i for i in pieces}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for facet, owners in T.facets.items():
        if len(owners) != 2 or owners[0] not in pieces or owners[1] not in pieces:
            continue
        if _facet_measure(T, facet, vals, r) > 1e-12:
            ra, rb = find(owners[0]), find(owners[1])
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups = {}
    for i in sorted(pieces):
        groups.setdefault(find(i), []).append(i)
    comps = [groups[k] for k in sorted(groups)]
    return SublevelSet(float(r), pieces, comps, float(sum(pvol.values())), pvol)


def max_invariant_level(T, V, eps_r=EPS_R, iters=LEVEL_BISECTIONS):
    """Largest connected sublevel set below the boundary-vertex minimum of V."""
    vals = _values(V)
    bnd = T.boundary_vertex_flags.copy()
    if T.origin_id is not None:
        # an origin on the mesh boundary would force a zero level
        bnd[T.origin_id] = False
    if not np.any(bnd):
        raise CpaSynthError("mesh has no boundary vertex besides the origin")
    cap = (1.0 - eps_r) * float(vals[bnd].min())
    if not cap > 0:
        raise CpaSynthError(f"degenerate level cap {cap}: V must be positive on the boundary")
    region = sublevel(T, vals, cap)
    if region.connected:
        return cap, region
    lo, hi = 0.0, cap
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if sublevel(T, vals, mid).connected:
            lo = mid
        else:
            hi = mid
    if lo <= 0:
        raise CpaSynthError("no connected sublevel set found")
    return lo, sublevel(T, vals, lo)


def contains_origin(T, region):
    if T.origin_id is None:
        return False
    return any(T.origin_id in T.simplexes[i] for i in region.pieces)
