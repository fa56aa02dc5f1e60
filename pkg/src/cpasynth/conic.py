"""Solver-agnostic conic programs: linear rows plus quadratic-padding blocks.

A :class:`QuadBlock` encodes ``phi(x) + 1/2 * sum_k ||v_k(x)||^2 <= 0`` with affine
``phi`` and affine vectors ``v_k``. It is handed to the solver as the rotated
second-order cone ``2 * (-phi) * 1 >= ||v||^2``.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

TOL_SOLVER = 1e-8
MAX_ITER = 10_000

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"
ITERATION_LIMIT = "iteration-limit"


@dataclass
class Affine:
    """``sum(coef * x[idx]) + const``."""

    idx: np.ndarray
    coef: np.ndarray
    const: float = 0.0

    @classmethod
    def make(cls, terms=None, const=0.0):
        terms = terms or {}
        if isinstance(terms, dict):
            idx = np.fromiter(terms.keys(), dtype=int, count=len(terms))
            coef = np.fromiter(terms.values(), dtype=float, count=len(terms))
        else:
            idx, coef = (np.asarray(a) for a in terms)
        return cls(np.asarray(idx, dtype=int), np.asarray(coef, dtype=float), float(const))

    def value(self, x):
        return float(np.dot(self.coef, x[self.idx]) + self.const) if len(self.idx) else self.const


@dataclass
class QuadBlock:
    phi: Affine
    vectors: List[List[Affine]]

    def value(self, x):
        sq = sum(v.value(x) ** 2 for vec in self.vectors for v in vec)
        return self.phi.value(x) + 0.5 * sq


@dataclass
class LinearRow:
    row: Affine
    sense: str
    rhs: float

    def residual(self, x):
        lhs = self.row.value(x)
        if self.sense == "=":
            return abs(lhs - self.rhs)
        return max(0.0, lhs - self.rhs)


@dataclass
class ConicProgram:
    num_vars: int = 0
    names: List[str] = field(default_factory=list)
    c: dict = field(default_factory=dict)
    c0: float = 0.0
    # objective terms weight * ||M x + d||^2, each stored as a list of Affine rows
    quad_terms: List[tuple] = field(default_factory=list)
    linear: List[LinearRow] = field(default_factory=list)
    blocks: List[QuadBlock] = field(default_factory=list)

    def add_variable(self, name="", count=1):
        """Append ``count`` variables; returns the index of the first."""
        first = self.num_vars
        self.num_vars += count
        self.names += [f"{name}[{k}]" if count > 1 else name for k in range(count)]
        return first

    def _check(self, aff):
        if len(aff.idx) and (aff.idx.min() < 0 or aff.idx.max() >= self.num_vars):
            raise IndexError("variable index out of range")

    def add_linear(self, row, sense, rhs):
        if not isinstance(row, Affine):
            row = Affine.make(row)
        if sense not in ("<=", "=", ">="):
            raise ValueError(f"unknown sense {sense!r}")
        self._check(row)
        if sense == ">=":
            row = Affine(row.idx, -row.coef, -row.const)
            rhs, sense = -rhs, "<="
        self.linear.append(LinearRow(row, sense, float(rhs)))

    def add_quad_block(self, phi, vectors):
        for a in [phi] + [v for vec in vectors for v in vec]:
            self._check(a)
        self.blocks.append(QuadBlock(phi, [list(v) for v in vectors]))

    def minimize_linear(self, terms, const=0.0):
        for k, v in terms.items():
            if not 0 <= k < self.num_vars:
                raise IndexError("variable index out of range")
            self.c[k] = self.c.get(k, 0.0) + float(v)
        self.c0 += const

    def minimize_square(self, rows, weight=1.0):
        """Add ``weight * sum_k rows[k](x)^2`` to the objective."""
        for a in rows:
            self._check(a)
        self.quad_terms.append((float(weight), list(rows)))

    def objective(self, x):
        val = self.c0 + sum(v * x[k] for k, v in self.c.items())
        for w, rows in self.quad_terms:
            val += w * sum(a.value(x) ** 2 for a in rows)
        return float(val)

    def to_text(self):
        """Plain-text dump for cross-checking with external tools."""
        out = [f"VARS {self.num_vars}"]
        for k, nm in enumerate(self.names):
            out.append(f"  x{k} {nm}")
        out.append("OBJ " + " ".join(f"{v:+.17g}*x{k}" for k, v in sorted(self.c.items()))
                   + f" {self.c0:+.17g}")
        for w, rows in self.quad_terms:
            out.append(f"OBJSQ {w:.17g} " + " | ".join(_fmt(a) for a in rows))
        for r in self.linear:
            out.append(f"ROW {_fmt(r.row)} {r.sense} {r.rhs:.17g}")
        for b in self.blocks:
            vecs = " ; ".join(" | ".join(_fmt(a) for a in vec) for vec in b.vectors)
            out.append(f"QUAD {_fmt(b.phi)} :: {vecs}")
        return "\n".join(out) + "\n"


def _fmt(a):
    s = " ".join(f"{c:+.17g}*x{i}" for i, c in zip(a.idx, a.coef))
    return f"{s} {a.const:+.17g}".strip()


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    objective_value: float
    max_primal_residual: float
    info: str = ""


@dataclass
class ResidualReport:
    max_residual: float
    linear_max: float
    quad_max: float
    worst: Optional[str] = None


def verify_solution(p, sol):
    """Recompute every constraint residual from the raw program data."""
    x = sol.x if isinstance(sol, ConicSolution) else np.asarray(sol, dtype=float)
    lin = [r.residual(x) for r in p.linear]
    quad = [max(0.0, b.value(x)) for b in p.blocks]
    lmax = max(lin, default=0.0)
    qmax = max(quad, default=0.0)
    worst = None
    if lmax or qmax:
        worst = (f"row {int(np.argmax(lin))}" if lmax >= qmax
                 else f"block {int(np.argmax(quad))}")
    return ResidualReport(max(lmax, qmax), lmax, qmax, worst)


def _rows_to_coo(rows, offset, data, ri, ci):
    for k, a in enumerate(rows):
        data.extend(a.coef.tolist())
        ri.extend([offset + k] * len(a.idx))
        ci.extend(a.idx.tolist())


def solve(p, tol=TOL_SOLVER, max_iter=MAX_ITER):
    """Solve with Clarabel; never raises on solver trouble."""
    import clarabel

    N = p.num_vars
    if N == 0:
        x = np.zeros(0)
        res = verify_solution(p, x)
        status = OPTIMAL if res.max_residual <= tol else INFEASIBLE
        return ConicSolution(status, x, p.objective(x), res.max_residual)

    # objective 1/2 x'Px + q'x from linear terms and weighted squares
    q = np.zeros(N)
    for k, v in p.c.items():
        q[k] += v
    Pd, Pi, Pj = [], [], []
    for w, rows in p.quad_terms:
        for a in rows:
            # w * (a.x + c)^2 -> 2w a a^T / 2, linear 2 w c a
            ii, jj = np.meshgrid(a.idx, a.idx, indexing="ij")
            Pd.extend((2 * w * np.outer(a.coef, a.coef)).ravel().tolist())
            Pi.extend(ii.ravel().tolist())
            Pj.extend(jj.ravel().tolist())
            np.add.at(q, a.idx, 2 * w * a.const * a.coef)
    P = sp.csc_matrix((Pd, (Pi, Pj)), shape=(N, N))
    P = sp.triu(P, format="csc")

    data, ri, ci, b = [], [], [], []
    eq = [r for r in p.linear if r.sense == "="]
    ineq = [r for r in p.linear if r.sense == "<="]
    cones = []
    row = 0
    for group, cone in ((eq, clarabel.ZeroConeT), (ineq, clarabel.NonnegativeConeT)):
        if group:
            _rows_to_coo([r.row for r in group], row, data, ri, ci)
            b.extend(r.rhs - r.row.const for r in group)
            cones.append(cone(len(group)))
            row += len(group)
    s2 = np.sqrt(0.5)
    for blk in p.blocks:
        phi = blk.phi
        vec = [a for v in blk.vectors for a in v]
        # s = b - A x in SOC: ((1 - phi)/sqrt2, (-1 - phi)/sqrt2, v)
        head = [Affine(phi.idx, s2 * phi.coef), Affine(phi.idx, s2 * phi.coef)]
        _rows_to_coo(head, row, data, ri, ci)
        b.extend([s2 * (1.0 - phi.const), s2 * (-1.0 - phi.const)])
        _rows_to_coo([Affine(a.idx, -a.coef) for a in vec], row + 2, data, ri, ci)
        b.extend(a.const for a in vec)
        cones.append(clarabel.SecondOrderConeT(2 + len(vec)))
        row += 2 + len(vec)
    A = sp.csc_matrix((data, (ri, ci)), shape=(row, N))

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_feas = tol
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    try:
        solver = clarabel.DefaultSolver(P, q, A, np.array(b, dtype=float), cones, settings)
        out = solver.solve()
    except Exception as exc:  # solver-side panics surface as diagnostics
        return ConicSolution(NUMERICAL_FAILURE, np.zeros(N), np.nan, np.inf, repr(exc))
    x = np.array(out.x, dtype=float)
    st = str(out.status)
    res = verify_solution(p, x).max_residual if np.all(np.isfinite(x)) else np.inf
    if st.endswith("Solved") and not st.endswith("AlmostSolved"):
        status = OPTIMAL
    elif "Infeasible" in st:
        status = INFEASIBLE
    elif "MaxIterations" in st or "MaxTime" in st:
        status = ITERATION_LIMIT
    else:
        status = NUMERICAL_FAILURE
    if status == OPTIMAL and res > tol:
        status = NUMERICAL_FAILURE if res > 1e3 * tol else OPTIMAL
    return ConicSolution(status, x, p.objective(x), res, st)
