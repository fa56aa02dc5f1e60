"""Piecewise-affine control systems and the problem file format.

A system is a list of modes ``xdot = A_s x + B_s u + e_s``, each active on a
convex polytopic region, together with an admissible state polytope and an
input polytope ``{u | H u <= h}``.
"""

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from . import geometry
from .errors import DimensionError, OutOfDomainError, ProblemError
from .options import SynthOptions

TOL_GEO = 1e-9


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Polytope:
    """Bounded convex polytope ``{x | Hx x <= hx}``; 2D polytopes also keep a CCW ring."""

    Hx: np.ndarray
    hx: np.ndarray
    polygon: Optional[np.ndarray] = None

    @classmethod
    def from_polygon(cls, poly):
        poly = np.asarray(poly, dtype=float)
        if geometry.polygon_area(poly) < 0:
            poly = poly[::-1]
        H, h = geometry.polygon_to_halfspaces(poly)
        return cls(_frozen(H), _frozen(h), _frozen(poly))

    @classmethod
    def from_halfspaces(cls, H, h):
        H = np.asarray(H, dtype=float)
        h = np.asarray(h, dtype=float)
        norms = np.linalg.norm(H, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero row in halfspace description")
        H, h = H / norms[:, None], h / norms
        poly = None
        if H.shape[1] == 2:
            poly = _frozen(geometry.halfspaces_to_polygon(H, h))
        return cls(_frozen(H), _frozen(h), poly)

    @property
    def dim(self):
        return self.Hx.shape[1]

    def contains(self, x, tol=TOL_GEO):
        return bool(np.max(self.Hx @ np.asarray(x, float) - self.hx) <= tol)

    def volume(self):
        if self.polygon is not None:
            return abs(geometry.polygon_area(self.polygon))
        from scipy.spatial import ConvexHull, HalfspaceIntersection
        c, r = chebyshev_center(self.Hx, self.hx)
        if r <= 0:
            return 0.0
        hs = HalfspaceIntersection(np.hstack([self.Hx, -self.hx[:, None]]), c)
        return float(ConvexHull(hs.intersections).volume)


def chebyshev_center(H, h):
    """Largest inscribed ball of ``{x | H x <= h}``; rows of H must be unit norm."""
    n = H.shape[1]
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    A = np.hstack([H, np.ones((H.shape[0], 1))])
    res = linprog(cost, A_ub=A, b_ub=h, bounds=[(None, None)] * n + [(0, None)],
                  method="highs")
    if res.status != 0:
        return np.zeros(n), 0.0
    return res.x[:n], float(res.x[-1])


@dataclass(frozen=True)
class PwaMode:
    index: int
    A: np.ndarray
    B: np.ndarray
    e: np.ndarray
    region: Polytope


@dataclass(frozen=True)
class PwaSystem:
    n: int
    m: int
    modes: Tuple[PwaMode, ...]
    X: Polytope
    inputH: np.ndarray
    inputh: np.ndarray

    def mode(self, s):
        """Mode with index ``s`` (indices are 1-based, as in the problem file)."""
        return self.modes[s - 1]

    @property
    def origin_modes(self):
        return [md.index for md in self.modes if md.region.contains(np.zeros(self.n))]


@dataclass
class Finding:
    severity: str
    code: str
    message: str
    location: str = ""


@dataclass
class ValidationReport:
    findings: List[Finding] = field(default_factory=list)

    @property
    def ok(self):
        return not any(f.severity == "error" for f in self.findings)

    @property
    def errors(self):
        return [f for f in self.findings if f.severity == "error"]

    def add(self, severity, code, message, location=""):
        self.findings.append(Finding(severity, code, message, location))

    def __str__(self):
        lines = [f"ok={self.ok}"]
        lines += [f"{f.severity}: [{f.code}] {f.message} ({f.location})" for f in self.findings]
        return "\n".join(lines)


# ---------------------------------------------------------------- parsing


def _matrix(obj, path, shape=None):
    try:
        a = np.array(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProblemError("not a numeric array", path) from exc
    if a.ndim == 1 and shape is not None and len(shape) == 2:
        # column vectors such as B = [0, 1] for m = 1
        if shape[1] == 1 and a.shape[0] == shape[0]:
            a = a.reshape(shape)
    if shape is not None and a.shape != tuple(shape):
        raise DimensionError(f"expected shape {tuple(shape)}, got {a.shape}", path)
    if not np.all(np.isfinite(a)):
        raise ProblemError("non-finite entry", path)
    return a


def _region(obj, n, path):
    if not isinstance(obj, dict):
        raise ProblemError("must be an object", path)
    if "polygon" in obj and obj["polygon"] is not None:
        if n != 2:
            raise DimensionError("polygon only allowed for n = 2", path + ".polygon")
        poly = _matrix(obj["polygon"], path + ".polygon")
        if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
            raise DimensionError("polygon needs >= 3 points of dimension 2", path + ".polygon")
        return Polytope.from_polygon(poly)
    hs = obj.get("halfspaces")
    if not isinstance(hs, dict):
        raise ProblemError("needs 'polygon' or 'halfspaces'", path)
    H = _matrix(hs.get("Hx"), path + ".halfspaces.Hx")
    if H.ndim != 2 or H.shape[1] != n:
        raise DimensionError(f"Hx must have {n} columns", path + ".halfspaces.Hx")
    h = _matrix(hs.get("hx"), path + ".halfspaces.hx", (H.shape[0],))
    try:
        return Polytope.from_halfspaces(H, h)
    except ValueError as exc:
        raise ProblemError(str(exc), path + ".halfspaces") from exc


def system_from_dict(d):
    """Build (PwaSystem, SynthOptions) from a decoded problem document."""
    if not isinstance(d, dict):
        raise ProblemError("top level must be an object")
    for key in ("n", "m", "modes", "input", "domain"):
        if key not in d:
            raise ProblemError("missing field", key)
    n, m = d["n"], d["m"]
    if not (isinstance(n, int) and n >= 1):
        raise ProblemError("must be a positive integer", "n")
    if not (isinstance(m, int) and m >= 1):
        raise ProblemError("must be a positive integer", "m")
    if not isinstance(d["modes"], list) or not d["modes"]:
        raise ProblemError("must be a non-empty list", "modes")
    modes = []
    for k, md in enumerate(d["modes"]):
        p = f"modes[{k}]"
        if not isinstance(md, dict):
            raise ProblemError("must be an object", p)
        for key in ("A", "B", "e", "region"):
            if key not in md:
                raise ProblemError("missing field", f"{p}.{key}")
        A = _matrix(md["A"], f"{p}.A", (n, n))
        B = _matrix(md["B"], f"{p}.B", (n, m))
        e = _matrix(md["e"], f"{p}.e", (n,))
        modes.append(PwaMode(k + 1, _frozen(A), _frozen(B), _frozen(e),
                             _region(md["region"], n, f"{p}.region")))
    inp = d["input"]
    if not isinstance(inp, dict):
        raise ProblemError("must be an object", "input")
    H = _matrix(inp.get("H"), "input.H")
    if H.ndim == 1 and m == 1:
        H = H.reshape(-1, 1)
    if H.ndim != 2 or H.shape[1] != m:
        raise DimensionError(f"input.H must have {m} columns", "input.H")
    h = _matrix(inp.get("h"), "input.h", (H.shape[0],))
    X = _region(d["domain"], n, "domain")
    sys = PwaSystem(n, m, tuple(modes), X, _frozen(H), _frozen(h))
    return sys, SynthOptions.from_dict(d.get("options"))


def load_problem(text):
    """Parse problem-file text. Raises ProblemError with a line or field path."""
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemError(exc.msg, f"line {exc.lineno} col {exc.colno}") from exc
    sys, opts = system_from_dict(d)
    _check_origin_modes(sys)
    return sys, opts


def load_problem_file(path):
    with open(path) as fh:
        return load_problem(fh.read())


def _check_origin_modes(sys):
    for md in sys.modes:
        if md.region.contains(np.zeros(sys.n)) and np.any(md.e != 0):
            raise ProblemError("origin mode requires e=0", f"modes[{md.index - 1}].e")


def _region_dict(P):
    if P.polygon is not None:
        return {"polygon": P.polygon.tolist()}
    return {"halfspaces": {"Hx": P.Hx.tolist(), "hx": P.hx.tolist()}}


def system_to_dict(sys, options=None):
    d = {
        "n": sys.n,
        "m": sys.m,
        "modes": [
            {"A": md.A.tolist(), "B": md.B.tolist(), "e": md.e.tolist(),
             "region": _region_dict(md.region)}
            for md in sys.modes
        ],
        "input": {"H": sys.inputH.tolist(), "h": sys.inputh.tolist()},
        "domain": _region_dict(sys.X),
    }
    if options is not None:
        d["options"] = options.to_dict()
    return d


def serialize(sys, options=None):
    return json.dumps(system_to_dict(sys, options), indent=1)


# ------------------------------------------------------------- validation


def validate_system(sys):
    rep = ValidationReport()
    zero = np.zeros(sys.n)
    for md in sys.modes:
        loc = f"mode {md.index}"
        _, radius = chebyshev_center(md.region.Hx, md.region.hx)
        if radius <= TOL_GEO:
            rep.add("error", "degenerate-region", "region is empty or not full-dimensional", loc)
        if md.region.contains(zero) and np.any(md.e != 0):
            rep.add("error", "origin-mode-affine", "origin mode requires e=0", loc)
        if md.region.polygon is not None and sys.X.polygon is not None:
            for v in md.region.polygon:
                if not sys.X.contains(v):
                    rep.add("error", "region-outside-domain",
                            f"region vertex {v.tolist()} lies outside the domain", loc)
                    break
    for p, q in combinations(sys.modes, 2):
        H = np.vstack([p.region.Hx, q.region.Hx])
        h = np.concatenate([p.region.hx, q.region.hx])
        _, radius = chebyshev_center(H, h)
        if radius > 1e-7:
            rep.add("error", "regions-overlap", "regions overlap",
                    f"modes {p.index},{q.index}")
    total = sum(md.region.volume() for md in sys.modes)
    vol_x = sys.X.volume()
    if abs(total - vol_x) > 1e-8 * max(1.0, vol_x):
        rep.add("error", "coverage", f"mode regions cover volume {total:.12g} "
                f"but the domain has volume {vol_x:.12g}", "domain")
    if np.any(sys.inputh < 0):
        rep.add("error", "input-zero-inadmissible", "u = 0 violates the input polytope (h < 0)",
                "input")
    if np.max(sys.X.Hx @ zero - sys.X.hx) > -TOL_GEO:
        rep.add("error", "origin-not-interior", "origin is not interior to the domain", "domain")
    if not sys.origin_modes:
        rep.add("error", "origin-uncovered", "no mode region contains the origin", "domain")
    if sys.n == 2:
        _continuity_findings(sys, rep)
    return rep


def _continuity_findings(sys, rep):
    for p, q in combinations(sys.modes, 2):
        if p.region.polygon is None or q.region.polygon is None:
            continue
        pts = _shared_facet(p.region, q.region)
        if pts is None:
            continue
        for x in pts:
            fp = p.A @ x + p.e
            fq = q.A @ x + q.e
            if np.max(np.abs(fp - fq)) > 1e-9 or np.max(np.abs(p.B - q.B)) > 1e-9:
                rep.add("warning", "discontinuous-dynamics",
                        "open-loop dynamics differ across the shared facet",
                        f"modes {p.index},{q.index}")
                break


def _shared_facet(P, Q, tol=1e-9):
    """Endpoints of the common boundary segment of two 2D polytopes, if any."""
    pts = [v for v in P.polygon if Q.contains(v, tol)]
    pts += [v for v in Q.polygon if P.contains(v, tol)]
    if len(pts) < 2:
        return None
    pts = np.array(pts)
    d = np.max(np.linalg.norm(pts[:, None] - pts[None], axis=2))
    if d <= tol:
        return None
    return pts


# ---------------------------------------------------------------- queries


def mode_at(sys, x, tol=TOL_GEO):
    """Indices of every mode whose closed region contains ``x``."""
    x = np.asarray(x, dtype=float)
    found = {md.index for md in sys.modes if md.region.contains(x, tol)}
    if not found:
        raise OutOfDomainError(f"state {x.tolist()} lies outside every mode region")
    return found


class ModeLocator:
    """Vectorised lowest-index mode lookup for batches of states."""

    def __init__(self, sys, tol=TOL_GEO):
        self.tol = tol
        self.H = np.vstack([md.region.Hx for md in sys.modes])
        self.h = np.concatenate([md.region.hx for md in sys.modes])
        sizes = [len(md.region.hx) for md in sys.modes]
        self.starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)

    def inside(self, X):
        """(P, S) boolean table of region membership."""
        X = np.atleast_2d(X)
        viol = X @ self.H.T - self.h
        return np.maximum.reduceat(viol, self.starts, axis=1) <= self.tol

    def lowest_highest(self, X):
        ins = self.inside(X)
        S = ins.shape[1]
        any_ = ins.any(axis=1)
        lo = np.where(any_, np.argmax(ins, axis=1) + 1, -1)
        hi = np.where(any_, S - np.argmax(ins[:, ::-1], axis=1), -1)
        return lo, hi

    def __call__(self, X):
        return self.lowest_highest(X)[0]
