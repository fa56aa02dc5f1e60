"""Conforming simplicial meshes of the synthesis domain.

Generation (2D only) fans every convex mode region from a single apex and then
applies longest-edge bisection until the size field is respected. Refinement,
queries and validation work in any dimension.
"""

import json
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from math import factorial
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linprog

from . import geometry
from .errors import MeshError, MinimumSizeError, OutOfDomainError
from .model import TOL_GEO, ValidationReport, chebyshev_center

TOL_DET = 1e-12


@dataclass(frozen=True)
class SizeField:
    """Target maximum edge length ``factor * base * shape(x)``."""

    base: float
    factor: float = 1.0
    shape: Optional[Callable] = None

    def __call__(self, x):
        v = self.factor * self.base
        if self.shape is not None:
            v *= float(self.shape(np.asarray(x, float)))
        return v

    def scaled(self, gamma):
        return SizeField(self.base, self.factor * gamma, self.shape)


def as_size_field(rho):
    if isinstance(rho, SizeField):
        return rho
    if callable(rho):
        return SizeField(1.0, 1.0, rho)
    return SizeField(float(rho))


class Triangulation:
    """Immutable simplicial mesh; local vertex 0 of an origin simplex is the origin."""

    def __init__(self, vertices, simplexes, modes, size_field=None, check=True):
        V = np.array(vertices, dtype=float)
        S = np.array(simplexes, dtype=int)
        if V.ndim != 2 or S.ndim != 2 or S.shape[1] != V.shape[1] + 1:
            raise MeshError("simplexes must list n+1 vertex ids")
        if S.size and (S.min() < 0 or S.max() >= len(V)):
            raise MeshError("simplex references a missing vertex")
        self.origin_id = _find_origin(V)
        S = _origin_first(S, self.origin_id)
        for a in (V, S):
            a.setflags(write=False)
        self.vertices = V
        self.simplexes = S
        self.modes = np.array(modes, dtype=int)
        self.modes.setflags(write=False)
        if len(self.modes) != len(S):
            raise MeshError("one mode index per simplex required")
        self.size_field = size_field
        X = V[S[:, 1:]] - V[S[:, :1]]
        self.shape = X
        det = np.linalg.det(X) if len(S) else np.zeros(0)
        if check and np.any(det == 0.0):
            raise MeshError("singular simplex")
        with np.errstate(all="ignore"):
            self.shape_inv = np.linalg.inv(X) if len(S) else X.copy()
        self.det = det
        self.shape.setflags(write=False)
        self.shape_inv.setflags(write=False)

    @property
    def n(self):
        return self.vertices.shape[1]

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_simplexes(self):
        return len(self.simplexes)

    def __len__(self):
        return len(self.simplexes)

    def volumes(self):
        return np.abs(self.det) / factorial(self.n)

    def volume(self):
        return float(np.sum(self.volumes()))

    def diameters(self):
        P = self.vertices[self.simplexes]
        d = np.linalg.norm(P[:, :, None, :] - P[:, None, :, :], axis=-1)
        return d.max(axis=(1, 2))

    def centroids(self):
        return self.vertices[self.simplexes].mean(axis=1)

    @cached_property
    def facets(self):
        """Map from sorted facet vertex tuple to the simplexes containing it."""
        out = {}
        for i, simp in enumerate(self.simplexes):
            for f in combinations(sorted(simp.tolist()), self.n):
                out.setdefault(f, []).append(i)
        return out

    @cached_property
    def adjacency(self):
        adj = [[] for _ in range(len(self))]
        for owners in self.facets.values():
            if len(owners) == 2:
                a, b = owners
                adj[a].append(b)
                adj[b].append(a)
        return [sorted(a) for a in adj]

    @cached_property
    def boundary_facets(self):
        return [f for f, owners in self.facets.items() if len(owners) == 1]

    @cached_property
    def boundary_vertex_flags(self):
        flags = np.zeros(self.num_vertices, dtype=bool)
        for f in self.boundary_facets:
            flags[list(f)] = True
        flags.setflags(write=False)
        return flags

    @cached_property
    def constraint_surfaces(self):
        """Facets shared by simplexes of different modes (the switching surfaces)."""
        return [f for f, owners in self.facets.items()
                if len(owners) == 2 and self.modes[owners[0]] != self.modes[owners[1]]]

    def barycentric(self, x):
        """Barycentric coordinates of ``x`` in every simplex, shape (M, n+1)."""
        x = np.asarray(x, dtype=float)
        x0 = self.vertices[self.simplexes[:, 0]]
        lam = np.einsum("mji,mj->mi", self.shape_inv, x - x0)
        return np.hstack([1.0 - lam.sum(axis=1, keepdims=True), lam])

    def with_size_field(self, size_field):
        return Triangulation(self.vertices, self.simplexes, self.modes, size_field)

    def to_dict(self):
        d = {
            "vertices": self.vertices.tolist(),
            "simplexes": [{"v": s.tolist(), "mode": int(md)}
                          for s, md in zip(self.simplexes, self.modes)],
        }
        if self.size_field is not None and self.size_field.shape is None:
            d["rho"] = self.size_field(np.zeros(self.n))
        return d


def _find_origin(V):
    if len(V) == 0:
        return None
    hits = np.flatnonzero(np.max(np.abs(V), axis=1) <= TOL_GEO)
    return int(hits[0]) if len(hits) else None


def _origin_first(S, origin_id):
    S = S.copy()
    if origin_id is None:
        return S
    for row in S:
        pos = np.flatnonzero(row == origin_id)
        if len(pos) and pos[0] != 0:
            k = pos[0]
            row[0], row[k] = row[k], row[0]
    return S


# -------------------------------------------------------------- queries


def locate(T, x, tol=TOL_GEO):
    """All simplexes whose closed set contains ``x``."""
    lam = T.barycentric(x)
    hits = np.flatnonzero(np.all((lam >= -tol) & (lam <= 1.0 + tol), axis=1))
    if len(hits) == 0:
        raise OutOfDomainError(f"point {np.asarray(x).tolist()} lies outside the mesh")
    return set(hits.tolist())


class Locator:
    """Batched point location returning one simplex (lowest index) per point, -1 if none."""

    def __init__(self, T, tol=TOL_GEO):
        self.T = T
        self.tol = tol
        n, M = T.n, len(T)
        # barycentric coordinates as one affine map per simplex: lam = W_i [x; 1]
        W = np.zeros((M, n + 1, n + 1))
        x0 = T.vertices[T.simplexes[:, 0]]
        W[:, 1:, :n] = T.shape_inv.transpose(0, 2, 1)
        W[:, 1:, n] = -np.einsum("mij,mj->mi", W[:, 1:, :n], x0)
        W[:, 0, :n] = -W[:, 1:, :n].sum(axis=1)
        W[:, 0, n] = 1.0 - W[:, 1:, n].sum(axis=1)
        self.W = W
        self.W2 = W.reshape(M * (n + 1), n + 1).T.copy()
        self.M, self.n = M, n

    def containing(self, X):
        """(P, M) membership table and the (P, M, n+1) barycentric coordinates."""
        X = np.atleast_2d(X)
        lam = (X @ self.W2[:-1] + self.W2[-1]).reshape(len(X), self.M, self.n + 1)
        ok = lam[:, :, 0] >= -self.tol
        for k in range(1, self.n + 1):
            ok &= lam[:, :, k] >= -self.tol
        return ok, lam

    def barycentric(self, X):
        """(index, lam) with lam the barycentric coordinates in the located simplex."""
        X = np.atleast_2d(X)
        P = len(X)
        chunk = max(1, 2_000_000 // (self.M * (self.n + 1)))
        if P > chunk:
            parts = [self.barycentric(X[k:k + chunk]) for k in range(0, P, chunk)]
            return (np.concatenate([a for a, _ in parts]),
                    np.concatenate([b for _, b in parts]))
        lam = (X @ self.W2[:-1] + self.W2[-1]).reshape(P, self.M, self.n + 1)
        ok = lam[:, :, 0] >= -self.tol
        for k in range(1, self.n + 1):
            ok &= lam[:, :, k] >= -self.tol
        idx = np.argmax(ok, axis=1)
        rows = np.arange(P)
        idx[~ok[rows, idx]] = -1
        return idx, lam[rows, np.maximum(idx, 0)]

    def barycentric_hint(self, X, hint):
        """Like :meth:`barycentric` but tries simplex ``hint[p]`` first for each point.

        The returned simplex is any containing one, not necessarily the lowest index.
        """
        X = np.atleast_2d(X)
        h = np.maximum(hint, 0)
        Wh = self.W[h]
        lam = np.einsum("pij,pj->pi", Wh[:, :, :-1], X) + Wh[:, :, -1]
        ok = (hint >= 0) & np.all(lam >= -self.tol, axis=1)
        idx = np.where(ok, hint, -1)
        miss = np.flatnonzero(~ok)
        if len(miss):
            idx[miss], lam[miss] = self.barycentric(X[miss])
        return idx, lam

    def __call__(self, X):
        return self.barycentric(X)[0]


def boundary_vertices(T):
    return set(np.flatnonzero(T.boundary_vertex_flags).tolist())


# ------------------------------------------------------------ generation


def triangulate(sys, size_field):
    """Conforming 2D mesh of the mode regions respecting ``size_field``."""
    if sys.n != 2:
        raise MeshError("mesh generation is implemented for n = 2 only")
    rho = as_size_field(size_field)
    regions = [md.region for md in sys.modes]
    for md in sys.modes:
        if abs(geometry.polygon_area(md.region.polygon)) <= TOL_GEO:
            raise MeshError(f"degenerate region for mode {md.index}")
        for x in list(md.region.polygon) + [md.region.polygon.mean(axis=0)]:
            if not rho(x) > 0:
                raise MeshError(f"size field must be positive (got {rho(x)} at {list(x)})")

    points = []

    def vid(p):
        for k, q in enumerate(points):
            if np.max(np.abs(q - p)) <= TOL_GEO:
                return k
        points.append(np.asarray(p, dtype=float))
        return len(points) - 1

    origin = np.zeros(2)
    vid(origin)
    for R in regions:
        for p in R.polygon:
            vid(p)

    tris, modes = [], []
    for md in sys.modes:
        R = md.region
        ids = [k for k, p in enumerate(points)
               if R.contains(p) and np.max(R.Hx @ p - R.hx) >= -TOL_GEO]
        c = R.polygon.mean(axis=0)
        ids.sort(key=lambda k: np.arctan2(points[k][1] - c[1], points[k][0] - c[0]))
        apex = 0 if R.contains(origin) else _fan_apex(R.polygon, points, ids)
        ring = ids
        for a, b in zip(ring, ring[1:] + ring[:1]):
            if apex in (a, b):
                continue
            u, v = points[a] - points[apex], points[b] - points[apex]
            if abs(u[0] * v[1] - u[1] * v[0]) <= TOL_GEO * (1 + np.hypot(*u) * np.hypot(*v)):
                continue
            tris.append([apex, a, b])
            modes.append(md.index)
    used = sorted({k for t in tris for k in t} | {0})
    remap = {k: r for r, k in enumerate(used)}
    V = np.array([points[k] for k in used])
    S = [[remap[k] for k in t] for t in tris]
    T = Triangulation(V, S, modes, rho)
    return _refine_to_size(T, rho)


def _fan_apex(polygon, points, ids):
    """Strict corner of the region nearest to the origin (first in ring order on ties)."""
    best, best_d = None, np.inf
    corners = {tuple(np.round(p, 12)) for p in polygon}
    for k in ids:
        if tuple(np.round(points[k], 12)) not in corners:
            continue
        d = float(np.linalg.norm(points[k]))
        if d < best_d - 1e-12:
            best, best_d = k, d
    return best


def _refine_to_size(T, rho):
    for _ in range(200):
        diam = T.diameters()
        cent = T.centroids()
        marked = {i for i in range(len(T)) if diam[i] > rho(cent[i]) * (1 + 1e-12)}
        if not marked:
            return T.with_size_field(rho)
        T = refine_local(T, marked)
    raise MeshError("size field not reached after 200 bisection sweeps")


def refine_global(T, sys, gamma, rho_min=None):
    """Regenerate the mesh with the size field scaled by ``gamma``."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if T.size_field is None:
        raise MeshError("mesh carries no size field")
    rho = T.size_field.scaled(gamma)
    if rho_min is not None:
        probe = np.vstack([T.vertices, T.centroids()])
        smallest = min(rho(x) for x in probe)
        if smallest < rho_min * (1 - 1e-12):
            raise MinimumSizeError(f"scaled size {smallest:g} is below rho_min = {rho_min:g}")
    return triangulate(sys, rho)


def refine_local(T, marked):
    """Longest-edge bisection of the marked simplexes, propagated until conforming."""
    marked = sorted(set(int(i) for i in marked))
    if not marked:
        return T
    verts = [v for v in T.vertices]
    simps = [list(s) for s in T.simplexes]
    modes = list(T.modes)
    alive = [True] * len(simps)
    edge_owners = {}
    for i, s in enumerate(simps):
        for e in combinations(sorted(s), 2):
            edge_owners.setdefault(e, set()).add(i)

    def longest(i):
        best, key = None, None
        for e in combinations(sorted(simps[i]), 2):
            L = float(np.sum((verts[e[0]] - verts[e[1]]) ** 2))
            k = (L, (-e[0], -e[1]))
            if key is None or k > key:
                best, key = e, k
        return best

    def split_edge(e):
        mid = len(verts)
        verts.append(0.5 * (verts[e[0]] + verts[e[1]]))
        for i in sorted(edge_owners[e]):
            s = simps[i]
            a = [mid if v == e[0] else v for v in s]
            b = [mid if v == e[1] else v for v in s]
            for f in combinations(sorted(s), 2):
                edge_owners[f].discard(i)
            simps[i] = a
            simps.append(b)
            modes.append(modes[i])
            alive.append(True)
            for f in combinations(sorted(a), 2):
                edge_owners.setdefault(f, set()).add(i)
            for f in combinations(sorted(b), 2):
                edge_owners.setdefault(f, set()).add(len(simps) - 1)
        del edge_owners[e]

    def bisect(i, depth=0):
        if depth > 500:
            raise MeshError("longest-edge propagation did not terminate")
        e = longest(i)
        while True:
            blockers = [t for t in sorted(edge_owners[e]) if longest(t) != e]
            if not blockers:
                break
            bisect(blockers[0], depth + 1)
            if e not in edge_owners:
                return
        split_edge(e)

    original = [tuple(s) for s in simps]
    for i in marked:
        if tuple(simps[i]) == original[i]:
            bisect(i)
    out = Triangulation(np.array(verts), np.array(simps), modes, T.size_field)
    return out


# ----------------------------------------------------------- validation


def validate_mesh(T, sys):
    rep = ValidationReport()
    n = T.n
    if T.n != sys.n:
        rep.add("error", "dimension", f"mesh dimension {T.n} differs from system n={sys.n}")
        return rep
    if len(T) == 0:
        rep.add("error", "empty", "mesh has no simplexes")
        return rep
    P = T.vertices[T.simplexes]
    edge_prod = np.prod(np.linalg.norm(T.shape, axis=2), axis=1)
    bad = np.flatnonzero(np.abs(T.det) <= TOL_DET * edge_prod)
    for i in bad:
        rep.add("error", "degenerate-simplex", "vertices are not affinely independent",
                f"simplex {i}")
    if len(bad):
        return rep
    eye = np.eye(n)
    err = np.max(np.abs(T.shape_inv @ T.shape - eye), axis=(1, 2))
    for i in np.flatnonzero(err > 1e-10):
        rep.add("error", "shape-inverse", "cached inverse is inaccurate", f"simplex {i}")

    # ordering convention
    if sys.X.contains(np.zeros(n), -TOL_GEO) and T.origin_id is None:
        rep.add("error", "origin-missing", "the origin is not a mesh vertex")
    if T.origin_id is not None:
        for i in np.flatnonzero(np.any(T.simplexes[:, 1:] == T.origin_id, axis=1)):
            rep.add("error", "origin-order", "origin is not local vertex 0", f"simplex {i}")

    # mode assignment and switching surfaces
    for i in range(len(T)):
        s = int(T.modes[i])
        if not 1 <= s <= len(sys.modes):
            rep.add("error", "mode-index", f"unknown mode {s}", f"simplex {i}")
            continue
        R = sys.mode(s).region
        viol = np.max(P[i] @ R.Hx.T - R.hx)
        if viol > TOL_GEO:
            others = [md.index for md in sys.modes
                      if md.index != s and _meets_interior(P[i], md.region)]
            code = "crosses-switching-surface" if others else "outside-region"
            msg = ("simplex crosses switching surface" if others
                   else "simplex leaves its mode region")
            rep.add("error", code, msg, f"simplex {i}")

    # facet multiplicity
    for f, owners in T.facets.items():
        if len(owners) > 2:
            rep.add("error", "non-face-intersection",
                    f"facet {f} is shared by {len(owners)} simplexes", f"simplexes {owners}")

    # hanging vertices: a vertex inside or on a simplex it does not belong to
    lo, hi = P.min(axis=1) - TOL_GEO, P.max(axis=1) + TOL_GEO
    for v, x in enumerate(T.vertices):
        cand = np.flatnonzero(np.all((x >= lo) & (x <= hi), axis=1))
        for i in cand:
            if v in T.simplexes[i]:
                continue
            lam = _bary(T, i, x)
            if np.all(lam >= -TOL_GEO):
                rep.add("error", "non-face-intersection",
                        f"vertex {v} touches simplex {i} without being one of its vertices",
                        f"simplex {i}")

    # interior overlaps between simplexes with overlapping bounding boxes
    for i in range(len(T)):
        cand = np.flatnonzero(np.all((lo[i] <= hi) & (hi[i] >= lo), axis=1))
        for j in cand[cand > i]:
            if _interiors_overlap(P[i], P[j]):
                rep.add("error", "non-face-intersection", "non-face intersection",
                        f"simplexes {i},{j}")

    vol_x = sys.X.volume()
    vol_t = T.volume()
    if abs(vol_t - vol_x) > 1e-8 * vol_x:
        rep.add("error", "coverage", f"simplex volume {vol_t:.12g} differs from domain "
                f"volume {vol_x:.12g}")
    return rep


def _bary(T, i, x):
    lam = T.shape_inv[i].T @ (x - T.vertices[T.simplexes[i, 0]])
    return np.concatenate([[1.0 - lam.sum()], lam])


def _interiors_overlap(p, q, tol=1e-10):
    if p.shape[1] == 2:
        for poly in (p, q):
            for k in range(3):
                d = poly[(k + 1) % 3] - poly[k]
                axis = np.array([d[1], -d[0]])
                a, b = p @ axis, q @ axis
                scale = tol * (1 + np.linalg.norm(axis))
                if a.max() <= b.min() + scale or b.max() <= a.min() + scale:
                    return False
        return True
    # generic: Chebyshev ball of the intersection
    H, h = [], []
    for poly in (p, q):
        Hp, hp = _simplex_halfspaces(poly)
        H.append(Hp)
        h.append(hp)
    H, h = np.vstack(H), np.concatenate(h)
    n = H.shape[1]
    res = linprog(np.r_[np.zeros(n), -1.0], A_ub=np.hstack([H, np.ones((len(H), 1))]),
                  b_ub=h, bounds=[(None, None)] * n + [(0, None)], method="highs")
    return res.status == 0 and res.x[-1] > tol


def _meets_interior(P, region, tol=1e-9):
    """True when the simplex and the region share an interior ball."""
    Hp, hp = _simplex_halfspaces(P)
    H = np.vstack([Hp, region.Hx])
    h = np.concatenate([hp, region.hx])
    return chebyshev_center(H, h)[1] > tol


def _simplex_halfspaces(P):
    n = P.shape[1]
    H, h = [], []
    for k in range(n + 1):
        face = np.delete(P, k, axis=0)
        M = np.hstack([face, np.ones((n, 1))])
        _, _, vt = np.linalg.svd(M)
        w = vt[-1]
        a, b = w[:n], -w[n]
        if a @ P[k] > b:
            a, b = -a, -b
        nrm = np.linalg.norm(a)
        H.append(a / nrm)
        h.append(b / nrm)
    return np.array(H), np.array(h)


# ------------------------------------------------------------------ I/O


def mesh_from_dict(d, sys=None):
    try:
        verts = d["vertices"]
        simps = [s["v"] for s in d["simplexes"]]
        modes = [s["mode"] for s in d["simplexes"]]
    except (KeyError, TypeError) as exc:
        raise MeshError(f"malformed mesh document: {exc}") from exc
    rho = SizeField(float(d["rho"])) if "rho" in d else None
    T = Triangulation(verts, simps, modes, rho)
    if sys is not None:
        rep = validate_mesh(T, sys)
        if not rep.ok:
            raise MeshError(f"invalid mesh:\n{rep}")
    return T


def load_mesh(text, sys=None):
    return mesh_from_dict(json.loads(text), sys)


def dump_mesh(T):
    return json.dumps(T.to_dict(), indent=1)
