"""Simultaneous synthesis of a CPA Lyapunov function and CPA controller.

The decision tuple is ``y = (V, U, a, b1, b2)``: vertex values of the Lyapunov
function and controller, the lower-bound exponent and scale ``b1 ||x||^a <= V``,
and the certified decay rate ``D+V <= -b2 V``. Each iteration solves a convex
program in the increments about an incumbent feasible ``y``; the two bilinear
cross terms are bounded by quadratic padding, so every accepted step remains
feasible for the exact bilinear constraints.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import conic
from .conic import Affine, ConicProgram
from .cpa import dini_table, gradients, largest_b2, max_invariant_level
from .errors import CpaSynthError, NotStabilizableError
from .lqr import solve_care
from .mesh import refine_local, triangulate
from .options import SynthOptions

log = logging.getLogger(__name__)

EPS_POS = 1e-6
TOL_CERT = 1e-6
# a step may not lower b2 (or raise the phase-2 cost) by more than this
TOL_MONO = 1e-9
HIT_AND_RUN_STEPS = 50

B2_TARGET = "b2-target"
COST_TARGET = "cost-target"
STAGNATION = "stagnation"
REFINEMENT_EXHAUSTED = "refinement-exhausted"
SOLVER_FAILURE = "solver-failure"


@dataclass(frozen=True, eq=False)
class SynthState:
    mesh: object
    V: np.ndarray
    U: np.ndarray
    a: float
    b1: float
    b2: float

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        U = np.array(self.U, dtype=float).reshape(len(V), -1)
        V.setflags(write=False)
        U.setflags(write=False)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "U", U)

    @property
    def grad_V(self):
        g = self.__dict__.get("_grad")
        if g is None:
            g = gradients(self.mesh, self.V)
            object.__setattr__(self, "_grad", g)
        return g

    def replace(self, **kw):
        d = dict(mesh=self.mesh, V=self.V, U=self.U, a=self.a, b1=self.b1, b2=self.b2)
        d.update(kw)
        return SynthState(**d)


@dataclass
class StepResult:
    state: SynthState
    objective_before: float
    objective_after: float
    status: str
    max_cert_residual: float
    solver_residual: float = 0.0
    accepted: bool = True


@dataclass
class IterRecord:
    iter: int
    phase: int
    b2: float
    J: float
    status: str
    wall_ms: float = 0.0

    def to_dict(self, timing=False):
        d = {"iter": self.iter, "phase": self.phase, "b2": self.b2, "J": self.J,
             "status": self.status}
        if timing:
            d["wall_ms"] = self.wall_ms
        return d


@dataclass
class CertificateReport:
    ok: bool
    max_violation: float
    per_constraint: dict
    worst_pair: Optional[tuple] = None


@dataclass
class SynthResult:
    state: SynthState
    roa_level: Optional[float]
    roa_region: object
    history: List[IterRecord]
    termination_reason: str
    certificate: CertificateReport
    outer: list = field(default_factory=list)

    @property
    def success(self):
        return self.state.b2 > 0 and self.certificate.ok and self.roa_level is not None


# ------------------------------------------------------------------ costs


def cost_value(state, cost):
    if cost == "b2":
        return -state.b2
    if cost == "u2":
        return float(np.sum(state.U ** 2))
    if cost == "u1":
        return float(np.sum(np.abs(state.U)))
    if cost == "b1":
        return -state.b1
    raise ValueError(f"unknown cost {cost!r}")


# -------------------------------------------------------- initialisation


def _fill_b2(state, sys):
    return state.replace(b2=largest_b2(state.mesh, state.V, state.U, sys))


def _hit_and_run(H, h, m, rng, steps):
    u = np.zeros(m)
    for _ in range(steps):
        d = rng.standard_normal(m)
        d /= np.linalg.norm(d)
        Hd = H @ d
        slack = h - H @ u
        lo, hi = -np.inf, np.inf
        for hd, s in zip(Hd, slack):
            if hd > 1e-15:
                hi = min(hi, s / hd)
            elif hd < -1e-15:
                lo = max(lo, s / hd)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise CpaSynthError("input polytope is unbounded; cannot sample it uniformly")
        lo, hi = min(lo, 0.0), max(hi, 0.0)
        u = u + rng.uniform(lo, hi) * d
    return u


def init_random(T, sys, a=2.0, b1=1.0, seed=0):
    """``V = b1 ||x||^a`` with admissible inputs sampled by hit-and-run."""
    if not (a > 0 and b1 > 0):
        raise ValueError("a and b1 must be positive")
    X = T.vertices
    V = b1 * np.linalg.norm(X, axis=1) ** a
    rng = np.random.default_rng(seed)
    U = np.zeros((T.num_vertices, sys.m))
    for v in range(T.num_vertices):
        if v == T.origin_id:
            continue
        U[v] = _hit_and_run(sys.inputH, sys.inputh, sys.m, rng, HIT_AND_RUN_STEPS)
    if T.origin_id is not None:
        V[T.origin_id] = 0.0
    return _fill_b2(SynthState(T, V, U, float(a), float(b1), 0.0), sys)


def _origin_lqr_mode(sys):
    for s in sys.origin_modes:
        md = sys.mode(s)
        if np.all(md.e == 0):
            return md
    raise NotStabilizableError("no mode with e = 0 contains the origin")


def init_lqr(T, sys, q=2.0, r=1.0):
    """Sample an LQR design of the origin mode, scaled into the input polytope."""
    md = _origin_lqr_mode(sys)
    Q = q * np.eye(sys.n)
    R = r * np.eye(sys.m)
    P = solve_care(md.A, md.B, Q, R)
    K = np.linalg.solve(R, md.B.T @ P)
    X = T.vertices
    V = np.einsum("vi,ij,vj->v", X, P, X)
    U = -X @ K.T
    kappa = 1.0
    HU = U @ sys.inputH.T
    for k, hk in enumerate(sys.inputh):
        worst = HU[:, k].max()
        if worst <= hk:
            continue
        if hk <= 0:
            log.warning("input bound %d is zero; LQR input cannot be scaled into it", k)
            kappa = np.inf
            break
        kappa = max(kappa, worst / hk)
    U = np.zeros_like(U) if not np.isfinite(kappa) else U / kappa
    if T.origin_id is not None:
        V[T.origin_id] = 0.0
        U[T.origin_id] = 0.0
    b1 = float(np.linalg.eigvalsh(P).min())
    if b1 < EPS_POS:
        raise NotStabilizableError("LQR Lyapunov matrix is not positive definite")
    return _fill_b2(SynthState(T, V, U, 2.0, b1, 0.0), sys)


def initial_state(T, sys, opts):
    if opts.init == "lqr":
        return init_lqr(T, sys, opts.lqr_q, opts.lqr_r)
    return init_random(T, sys, opts.a, opts.b1, opts.seed)


# ---------------------------------------------------------- the convex step


def build_step_program(st, sys, cost="b2", freeze_b2=False):
    """Convex program in the increments (dV, dU, db1[, db2]) about ``st``."""
    T = st.mesh
    N, m, n = T.num_vertices, sys.m, T.n
    if T.origin_id is None:
        raise CpaSynthError("the origin must be a mesh vertex")
    o = T.origin_id
    p = ConicProgram()
    oV = p.add_variable("dV", N)
    oU = p.add_variable("dU", N * m)
    ob1 = p.add_variable("db1")
    ob2 = None if freeze_b2 else p.add_variable("db2")

    def u_idx(v, k):
        return oU + v * m + k

    # pinned origin values and the b1 bounds
    p.add_linear({oV + o: 1.0}, "=", 0.0)
    for k in range(m):
        p.add_linear({u_idx(o, k): 1.0}, "=", 0.0)
    p.add_linear({ob1: -1.0}, "<=", st.b1 - EPS_POS)
    nx = np.linalg.norm(T.vertices, axis=1) ** st.a
    for v in range(N):
        if v == o:
            continue
        p.add_linear({ob1: nx[v], oV + v: -1.0}, "<=", st.V[v] - st.b1 * nx[v])
    H, h = sys.inputH, sys.inputh
    slack = h[None, :] - st.U @ H.T
    for v in range(N):
        for r in range(len(h)):
            p.add_linear({u_idx(v, k): H[r, k] for k in range(m)}, "<=", slack[v, r])

    G = st.grad_V
    for i in range(len(T)):
        md = sys.mode(int(T.modes[i]))
        ids = T.simplexes[i]
        Ginv = T.shape_inv[i]
        # d grad V_i = C @ dV[ids]
        C = np.hstack([-Ginv.sum(axis=1, keepdims=True), Ginv])
        grad_rows = [Affine(oV + ids, C[r].copy()) for r in range(n)]
        BtG = md.B.T @ G[i]
        for j in range(n + 1):
            v = int(ids[j])
            x = T.vertices[v]
            f = md.A @ x + md.B @ st.U[v] + md.e
            terms = {}
            for jj, coef in zip(ids, f @ C):
                terms[oV + int(jj)] = terms.get(oV + int(jj), 0.0) + coef
            terms[oV + v] = terms.get(oV + v, 0.0) + st.b2
            for k in range(m):
                terms[u_idx(v, k)] = terms.get(u_idx(v, k), 0.0) + BtG[k]
            if ob2 is not None:
                terms[ob2] = st.V[v]
            phi = Affine.make(terms, float(G[i] @ f + st.b2 * st.V[v]))
            if v == o:
                # bilinear terms vanish where dV and dU are pinned to zero
                p.add_linear(Affine(phi.idx, phi.coef), "<=", -phi.const)
                continue
            ui = np.array([u_idx(v, k) for k in range(m)])
            bdu = [Affine(ui, md.B[r].copy()) for r in range(n)]
            vecs = [grad_rows, bdu, [Affine.make({oV + v: 1.0})]]
            if ob2 is not None:
                vecs.append([Affine.make({ob2: 1.0})])
            p.add_quad_block(phi, vecs)

    if cost == "b2":
        if ob2 is None:
            raise ValueError("cost b2 needs a free b2")
        p.minimize_linear({ob2: -1.0}, -st.b2)
    elif cost == "u2":
        rows = [Affine.make({u_idx(v, k): 1.0}, st.U[v, k]) for v in range(N) for k in range(m)]
        p.minimize_square(rows)
    elif cost == "u1":
        ot = p.add_variable("t", N * m)
        for v in range(N):
            for k in range(m):
                t = ot + v * m + k
                p.add_linear({u_idx(v, k): 1.0, t: -1.0}, "<=", -st.U[v, k])
                p.add_linear({u_idx(v, k): -1.0, t: -1.0}, "<=", st.U[v, k])
        p.minimize_linear({ot + k: 1.0 for k in range(N * m)})
    elif cost == "b1":
        p.minimize_linear({ob1: -1.0}, -st.b1)
    else:
        raise ValueError(f"unknown cost {cost!r}")
    layout = dict(oV=oV, oU=oU, ob1=ob1, ob2=ob2)
    return p, layout


def sdp_step(st, sys, cost="b2", freeze_b2=False, tighten_b2=True):
    """One convex improvement step; state unchanged on solver failure."""
    T = st.mesh
    N, m = T.num_vertices, sys.m
    J0 = cost_value(st, cost)
    p, L = build_step_program(st, sys, cost, freeze_b2)
    sol = conic.solve(p)
    if sol.status != conic.OPTIMAL:
        log.warning("step solve failed: %s (%s)", sol.status, sol.info)
        return StepResult(st, J0, J0, sol.status, np.nan, sol.max_primal_residual, False)
    x = sol.x
    V = st.V + x[L["oV"]:L["oV"] + N]
    U = st.U + x[L["oU"]:L["oU"] + N * m].reshape(N, m)
    V[T.origin_id] = 0.0
    U[T.origin_id] = 0.0
    b1 = st.b1 + x[L["ob1"]]
    b2 = st.b2 if freeze_b2 else st.b2 + x[L["ob2"]]
    new = SynthState(T, V, U, st.a, float(b1), float(b2))
    if tighten_b2 and not freeze_b2:
        # exact decay rate of the new (V, U) is never below the padded one
        new = new.replace(b2=max(new.b2, largest_b2(T, V, U, sys)))
    cert = verify_certificate(new, T, sys)
    J1 = cost_value(new, cost)
    return StepResult(new, J0, J1, sol.status, cert.max_violation, sol.max_primal_residual)


# -------------------------------------------------------------- phases


def _stagnant(old, new, tol):
    return abs(new - old) < tol * max(1.0, abs(new))


def phase1_maximize_b2(y0, sys, opts, history=None, step_hook=None):
    """Repeat the b2-maximising step until target, stagnation or the iteration cap."""
    history = [] if history is None else history
    st = y0
    t0 = time.perf_counter()
    history.append(IterRecord(0, 1, st.b2, -st.b2, "init", 0.0))
    if st.b2 >= opts.b2_target:
        return st, history, B2_TARGET
    streak = 0
    reason = STAGNATION
    for k in range(1, opts.max_iters + 1):
        res = sdp_step(st, sys, "b2")
        wall = 1e3 * (time.perf_counter() - t0)
        if not res.accepted:
            history.append(IterRecord(k, 1, st.b2, -st.b2, res.status, wall))
            reason = SOLVER_FAILURE
            break
        good = (res.state.b2 >= st.b2 - TOL_MONO and res.max_cert_residual <= TOL_CERT)
        old = st.b2
        if good:
            st = res.state
        if step_hook is not None:
            step_hook(res, good)
        history.append(IterRecord(k, 1, st.b2, -st.b2, res.status if good else "rejected", wall))
        log.info("phase 1 iter %d: b2 = %.6g", k, st.b2)
        if st.b2 >= opts.b2_target:
            reason = B2_TARGET
            break
        streak = streak + 1 if _stagnant(old, st.b2, opts.tol_stag) else 0
        if streak >= opts.k_stag:
            reason = STAGNATION
            break
    return st, history, reason


def phase2_minimize_cost(y, sys, opts, history=None, step_hook=None):
    """Minimise the performance cost with b2 frozen."""
    history = [] if history is None else history
    st = y
    cost = opts.cost
    J = cost_value(st, cost)
    t0 = time.perf_counter()
    start = history[-1].iter + 1 if history else 0
    streak = 0
    reason = STAGNATION
    for k in range(opts.phase2_iters):
        if opts.cost_target is not None and J <= opts.cost_target:
            reason = COST_TARGET
            break
        res = sdp_step(st, sys, cost, freeze_b2=True)
        wall = 1e3 * (time.perf_counter() - t0)
        if not res.accepted:
            history.append(IterRecord(start + k, 2, st.b2, J, res.status, wall))
            reason = SOLVER_FAILURE
            break
        good = (res.objective_after <= J + TOL_MONO * max(1.0, abs(J))
                and res.max_cert_residual <= TOL_CERT)
        oldJ = J
        if good:
            st = res.state
            J = res.objective_after
        if step_hook is not None:
            step_hook(res, good)
        history.append(IterRecord(start + k, 2, st.b2, J, res.status if good else "rejected",
                                  wall))
        streak = streak + 1 if _stagnant(oldJ, J, opts.tol_stag) else 0
        if streak >= opts.k_stag:
            break
    else:
        if opts.cost_target is not None and J <= opts.cost_target:
            reason = COST_TARGET
    return st, history, reason


# --------------------------------------------------------- verification


def verify_certificate(y, T, sys, tol=TOL_CERT):
    """Direct re-evaluation of every constraint of the synthesis program."""
    per = {}
    o = T.origin_id
    nz = np.ones(T.num_vertices, dtype=bool)
    if o is not None:
        nz[o] = False
        per["V0"] = abs(float(y.V[o]))
        per["u0"] = float(np.max(np.abs(y.U[o]))) if sys.m else 0.0
    else:
        per["V0"] = np.inf
        per["u0"] = np.inf
    per["a"] = max(0.0, 1.0 - y.a)
    per["b1"] = max(0.0, EPS_POS - y.b1) if y.b1 < EPS_POS * (1 - 1e-9) else 0.0
    nx = np.linalg.norm(T.vertices, axis=1) ** y.a
    per["lower_bound"] = float(max(0.0, np.max((y.b1 * nx - y.V)[nz], initial=0.0)))
    per["input"] = float(max(0.0, np.max(y.U @ sys.inputH.T - sys.inputh, initial=0.0)))
    D = dini_table(T, y.V, y.U, sys)
    viol = D + y.b2 * y.V[T.simplexes]
    worst = np.unravel_index(np.argmax(viol), viol.shape)
    per["decrease"] = float(max(0.0, viol[worst]))
    mx = max(per.values())
    pair = (int(worst[0]), int(worst[1])) if per["decrease"] > 0 else None
    return CertificateReport(mx <= tol, mx, per, pair)


def mark_for_local_refinement(y, T, sys, tol=TOL_CERT):
    """Simplexes with a nonzero vertex violating ``D+ <= -max(b2, 0) V``."""
    b2 = max(y.b2, 0.0)
    D = dini_table(T, y.V, y.U, sys)
    Vx = y.V[T.simplexes]
    nz = np.ones(T.simplexes.shape, dtype=bool)
    if T.origin_id is not None:
        nz &= T.simplexes != T.origin_id
    bad = (D > -b2 * Vx + tol) | ((b2 == 0.0) & (D >= 0.0))
    return set(np.flatnonzero(np.any(bad & nz, axis=1)).tolist())


# ------------------------------------------------------------- drivers


def synthesize(sys, opts=None, mesh=None, step_hook=None):
    """Algorithm: initialise, maximise b2, then minimise cost, then extract the ROA."""
    opts = opts or SynthOptions()
    T = mesh if mesh is not None else triangulate(sys, opts.rho0)
    try:
        st = initial_state(T, sys, opts)
    except NotStabilizableError as exc:
        if opts.init != "lqr":
            raise
        # phase 1 still runs and reports stagnation for such systems
        log.warning("LQR initialisation unavailable (%s); using random init", exc)
        st = init_random(T, sys, opts.a, opts.b1, opts.seed)
    history = []
    st, history, reason = phase1_maximize_b2(st, sys, opts, history, step_hook)
    level, region = None, None
    if st.b2 > 0:
        st, history, reason2 = phase2_minimize_cost(st, sys, opts, history, step_hook)
        if reason2 in (COST_TARGET, SOLVER_FAILURE):
            reason = reason2
        level, region = max_invariant_level(T, st.V)
    cert = verify_certificate(st, T, sys)
    return SynthResult(st, level, region, history, reason, cert)


def synthesize_with_refinement(sys, opts=None, step_hook=None):
    """Refine the mesh (rho := gamma * rho) until synthesis succeeds or rho_min is passed."""
    opts = opts or SynthOptions()
    rho = opts.rho0
    T = triangulate(sys, rho)
    outer = []
    result = None
    while True:
        result = synthesize(sys, opts, T, step_hook)
        outer.append({"rho": rho, "simplexes": len(T), "b2": result.state.b2,
                      "success": result.success, "reason": result.termination_reason})
        log.info("mesh rho=%.4g (%d simplexes): b2=%.4g", rho, len(T), result.state.b2)
        if result.success:
            break
        rho *= opts.gamma
        if rho < opts.rho_min * (1 - 1e-12):
            result.termination_reason = REFINEMENT_EXHAUSTED
            break
        if opts.refine == "local":
            marked = mark_for_local_refinement(result.state, T, sys)
            T = refine_local(T, marked) if marked else triangulate(sys, rho)
        else:
            T = triangulate(sys, rho)
    result.outer = outer
    return result
