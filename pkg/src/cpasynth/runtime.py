"""Closed-loop execution: controller evaluation, RK4 simulation, Monte-Carlo checks."""

from dataclasses import dataclass, field
from itertools import combinations
from typing import List, Optional

import numpy as np

from .cpa import gradients
from .errors import InfeasibleQPError, OutOfDomainError
from .geometry import polygon_area
from .mesh import Locator, locate
from .model import ModeLocator

SETTLE_RADIUS = 0.01
DEFAULT_H = 1e-3

SETTLED = "settled"
ESCAPED = "escaped-domain"
TIME_LIMIT = "time-limit"


@dataclass(frozen=True, eq=False)
class Controller:
    """``kind`` is ``"cpa"`` (vertex interpolation of U) or ``"min-norm"`` (online QP)."""

    kind: str
    mesh: object
    sys: object
    U: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    b2: float = 0.0
    Hhat: Optional[np.ndarray] = None
    hhat: Optional[np.ndarray] = None

    @property
    def m(self):
        return self.sys.m


def cpa_controller(state, sys):
    return Controller("cpa", state.mesh, sys, U=state.U)


def min_norm_controller(state, sys, Hhat=None, hhat=None):
    m = sys.m
    Hhat = np.eye(m) if Hhat is None else np.atleast_2d(np.asarray(Hhat, float))
    hhat = np.zeros(m) if hhat is None else np.asarray(hhat, float).reshape(m)
    if np.linalg.eigvalsh(0.5 * (Hhat + Hhat.T)).min() <= 0:
        raise ValueError("Hhat must be positive definite")
    return Controller("min-norm", state.mesh, sys, U=state.U, V=state.V, b2=state.b2,
                      Hhat=Hhat, hhat=hhat)


def solve_small_qp(Hq, hq, G, g, tol=1e-9):
    """Exact ``min u'Hu + h'u  s.t.  G u <= g`` for a handful of variables.

    The optimum of a strictly convex QP is the equality-constrained minimiser for
    some linearly independent subset of at most m active rows, so every such
    subset is tried and the best feasible candidate kept.
    """
    m = len(hq)
    G = np.atleast_2d(np.asarray(G, float)).reshape(-1, m)
    g = np.asarray(g, float).reshape(-1)
    H2 = Hq + Hq.T
    slack_tol = tol * (1.0 + np.abs(g))
    best, best_val = None, np.inf
    for size in range(0, min(m, len(g)) + 1):
        for S in combinations(range(len(g)), size):
            S = list(S)
            if size:
                GS = G[S]
                if np.linalg.matrix_rank(GS) < size:
                    continue
                K = np.block([[H2, GS.T], [GS, np.zeros((size, size))]])
                rhs = np.concatenate([-hq, g[S]])
                try:
                    u = np.linalg.solve(K, rhs)[:m]
                except np.linalg.LinAlgError:
                    continue
            else:
                u = np.linalg.solve(H2, -hq)
            if np.all(G @ u - g <= slack_tol):
                val = float(u @ Hq @ u + hq @ u)
                if val < best_val - 1e-15:
                    best, best_val = u, val
        if best is not None and size == 0:
            return best
    if best is None:
        raise InfeasibleQPError("min-norm QP is infeasible")
    return best


def _min_norm_rows(c, x):
    T, sys = c.mesh, c.sys
    x = np.asarray(x, float)
    I = sorted(locate(T, x))
    G = gradients(T, c.V)
    i0 = I[0]
    x0 = T.vertices[T.simplexes[i0, 0]]
    Vx = float(c.V[T.simplexes[i0, 0]] + (x - x0) @ G[i0])
    rows, rhs = [sys.inputH], [sys.inputh]
    for i in I:
        md = sys.mode(int(T.modes[i]))
        rows.append((md.B.T @ G[i])[None, :])
        rhs.append(np.array([-(G[i] @ (md.A @ x + md.e)) - c.b2 * Vx]))
    return np.vstack(rows), np.concatenate(rhs)


def eval_controller(c, x):
    """Input at state ``x``; raises OutOfDomainError outside the mesh."""
    x = np.asarray(x, float)
    if c.kind == "cpa":
        T = c.mesh
        i = min(locate(T, x))
        lam = T.barycentric(x)[i]
        return lam @ c.U[T.simplexes[i]]
    G, g = _min_norm_rows(c, x)
    return solve_small_qp(c.Hhat, c.hhat, G, g)


class _BatchPolicy:
    """Vectorised controller evaluation; returns (U, ok) with ok False outside the mesh."""

    def __init__(self, c):
        self.c = c
        self.loc = Locator(c.mesh)
        self.hint = None
        if c.kind == "min-norm" and c.m == 1:
            self._prepare_scalar()

    def _prepare_scalar(self):
        c, T, sys = self.c, self.c.mesh, self.c.sys
        G = gradients(T, c.V)
        A = np.array([sys.mode(int(s)).A for s in T.modes])
        B = np.array([sys.mode(int(s)).B[:, 0] for s in T.modes])
        E = np.array([sys.mode(int(s)).e for s in T.modes])
        # CLF row of simplex i: beta_i u <= -(x . Q_i + q_i) - b2 V(x)
        self.Q = np.einsum("mji,mj->im", A, G)
        self.q = np.einsum("mj,mj->m", G, E)
        self.beta = np.einsum("mj,mj->m", G, B)
        self.v0 = c.V[T.simplexes[:, 0]]
        self.x0 = T.vertices[T.simplexes[:, 0]]
        self.G = G
        H = sys.inputH[:, 0]
        hh = sys.inputh
        up = H > 0
        dn = H < 0
        self.u_hi = np.min(hh[up] / H[up]) if np.any(up) else np.inf
        self.u_lo = np.max(hh[dn] / H[dn]) if np.any(dn) else -np.inf
        self.u_free = -c.hhat[0] / (2.0 * c.Hhat[0, 0])

    def _scalar_min_norm(self, X):
        """Closed-form min-norm QP for m = 1: clip the free minimiser into the interval."""
        inside, _ = self.loc.containing(X)
        ok = inside.any(axis=1)
        first = np.argmax(inside, axis=1)
        Vx = self.v0[first] + np.einsum("pi,pi->p", X - self.x0[first], self.G[first])
        rhs = -(X @ self.Q + self.q) - self.c.b2 * Vx[:, None]
        beta = self.beta[None, :]
        tol = 1e-9 * (1.0 + np.abs(rhs))
        pos = inside & (beta > 1e-14)
        neg = inside & (beta < -1e-14)
        zero = inside & ~pos & ~neg
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = rhs / beta
        hi = np.minimum(self.u_hi, np.min(np.where(pos, ratio, np.inf), axis=1))
        lo = np.maximum(self.u_lo, np.max(np.where(neg, ratio, -np.inf), axis=1))
        bad = np.any(zero & (rhs < -tol), axis=1) | (lo > hi + 1e-9 * (1 + np.abs(hi)))
        if np.any(ok & bad):
            raise InfeasibleQPError("min-norm QP is infeasible")
        u = np.where(lo > hi, 0.5 * (lo + hi), np.clip(self.u_free, lo, hi))
        return np.where(ok, u, 0.0)[:, None], ok

    def __call__(self, X, rows=None):
        c, T = self.c, self.c.mesh
        if c.kind == "min-norm" and c.m == 1:
            return self._scalar_min_norm(X)
        if rows is None or self.hint is None:
            idx, lam = self.loc.barycentric(X)
        else:
            idx, lam = self.loc.barycentric_hint(X, self.hint[rows])
        if rows is not None:
            if self.hint is None:
                self.hint = np.full(int(rows.max()) + 1, -1)
            self.hint[rows] = idx
        ok = idx >= 0
        U = np.zeros((len(X), c.m))
        if c.kind == "cpa":
            j = idx[ok]
            U[ok] = np.einsum("pk,pkm->pm", lam[ok], c.U[T.simplexes[j]])
        else:
            for p in np.flatnonzero(ok):
                U[p] = eval_controller(c, X[p])
        return U, ok


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    settling_time: Optional[float]
    outcome: str
    max_input_violation: float = 0.0
    warnings: List[str] = field(default_factory=list)

    def input_energy(self):
        """Time integral of ``||u||^2`` by the trapezoidal rule."""
        e = np.sum(self.inputs ** 2, axis=1)
        if len(e) < 2:
            return 0.0
        return float(np.sum(0.5 * (e[1:] + e[:-1]) * np.diff(self.times)))


def _settling(times, states, radius=SETTLE_RADIUS):
    norms = np.linalg.norm(states, axis=1)
    above = np.flatnonzero(norms > radius)
    if len(above) == 0:
        return float(times[0])
    last = above[-1]
    if last + 1 >= len(times):
        return None
    return float(times[last + 1])


def simulate_batch(sys, c, X0, h=DEFAULT_H, tmax=10.0):
    """Fixed-step RK4 of many closed-loop trajectories at once."""
    X0 = np.atleast_2d(np.asarray(X0, float))
    P, n = X0.shape
    steps = int(round(tmax / h))
    modes = ModeLocator(sys)
    A = np.array([md.A for md in sys.modes])
    B = np.array([md.B for md in sys.modes])
    E = np.array([md.e for md in sys.modes])
    policy = _BatchPolicy(c)
    Hin, hin = sys.inputH, sys.inputh
    viol = np.zeros(P)
    disagree = np.zeros(P, dtype=bool)

    def field(X, rows):
        s, s_hi = modes.lowest_highest(X)
        U, ok = policy(X, rows)
        ok &= s >= 0
        si = np.where(s > 0, s - 1, 0)
        F = np.einsum("pij,pj->pi", A[si], X) + np.einsum("pij,pj->pi", B[si], U) + E[si]
        v = np.max(U @ Hin.T - hin, axis=1)
        np.maximum.at(viol, rows[ok], v[ok])
        # on a switching surface compare with the highest-index containing mode
        sw = np.flatnonzero(ok & (s_hi != s))
        if len(sw):
            k = s_hi[sw] - 1
            Fk = (np.einsum("pij,pj->pi", A[k], X[sw]) + np.einsum("pij,pj->pi", B[k], U[sw])
                  + E[k])
            disagree[rows[sw[np.max(np.abs(Fk - F[sw]), axis=1) > 1e-9]]] = True
        return F, U, ok

    states = np.full((steps + 1, P, n), np.nan)
    inputs = np.full((steps + 1, P, c.m), np.nan)
    alive = np.ones(P, dtype=bool)
    escaped = np.zeros(P, dtype=bool)
    last = np.full(P, steps)
    X = X0.copy()
    F1, U0, ok = field(X, np.arange(P))
    escaped |= ~ok
    alive &= ok
    last[~ok] = 0
    states[0] = X
    inputs[0] = U0
    for k in range(steps):
        if not np.any(alive):
            break
        a = np.flatnonzero(alive)
        Xa = X[a]
        k1 = F1[a]
        k2, _, o2 = field(Xa + 0.5 * h * k1, a)
        k3, _, o3 = field(Xa + 0.5 * h * k2, a)
        k4, _, o4 = field(Xa + h * k3, a)
        Xn = Xa + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        Fn, Un, on = field(Xn, a)
        good = o2 & o3 & o4 & on
        bad = a[~good]
        escaped[bad] = True
        alive[bad] = False
        last[bad] = k
        g = a[good]
        X[g] = Xn[good]
        F1[g] = Fn[good]
        states[k + 1, g] = Xn[good]
        inputs[k + 1, g] = Un[good]
    times = h * np.arange(steps + 1)
    out = []
    for p in range(P):
        L = last[p] + 1
        tr_s, tr_u, tr_t = states[:L, p], inputs[:L, p], times[:L]
        ts = None if escaped[p] else _settling(tr_t, tr_s)
        outcome = ESCAPED if escaped[p] else (SETTLED if ts is not None else TIME_LIMIT)
        warn = ["closed-loop dynamics disagree across a switching surface"] if disagree[p] else []
        out.append(Trajectory(tr_t, tr_s, tr_u, ts, outcome, float(viol[p]), warn))
    return out


def simulate(sys, c, x0, h=DEFAULT_H, tmax=10.0):
    return simulate_batch(sys, c, [x0], h, tmax)[0]


# ------------------------------------------------------------ metrics


def cpa_values(T, V, X):
    """Batch CPA evaluation of vertex values V at points X (nan outside the mesh)."""
    X = np.atleast_2d(X)
    idx = Locator(T)(X)
    out = np.full(len(X), np.nan)
    ok = idx >= 0
    j = idx[ok]
    x0 = T.vertices[T.simplexes[j, 0]]
    G = gradients(T, V)
    out[ok] = V[T.simplexes[j, 0]] + np.einsum("pi,pi->p", X[ok] - x0, G[j])
    return out


def sample_region(T, V, r, N, seed=0, batch=4096):
    """Uniform samples of the open sublevel set ``{V < r}`` by box rejection."""
    rng = np.random.default_rng(seed)
    X = T.vertices
    Vv = np.asarray(V, float)
    inside = Vv <= r
    pts = X[T.simplexes[np.any(Vv[T.simplexes] < r, axis=1)].ravel()]
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    out = []
    while sum(len(o) for o in out) < N:
        cand = rng.uniform(lo, hi, size=(batch, T.n))
        v = cpa_values(T, Vv, cand)
        out.append(cand[np.isfinite(v) & (v < r * (1 - 1e-9))])
    del inside
    return np.vstack(out)[:N]


@dataclass
class MonteCarloReport:
    n: int
    settled_fraction: float = 0.0
    escaped_roa_fraction: float = 0.0
    escaped_domain_fraction: float = 0.0
    envelope_violation: float = 0.0
    max_v_increase: float = 0.0
    max_decay_excess: float = 0.0
    max_input_violation: float = 0.0
    mean_settling_time: Optional[float] = None
    initial_states: Optional[np.ndarray] = None
    settling_times: Optional[list] = None

    def to_dict(self):
        d = {k: v for k, v in self.__dict__.items()
             if k not in ("initial_states", "settling_times")}
        return d


def monte_carlo_invariance(sys, c, state, level, N, seed=0, h=1e-2, tmax=30.0):
    """Simulate N uniform initial states of the invariant set and check the decay bounds."""
    if N == 0:
        return MonteCarloReport(0)
    T = state.mesh
    X0 = sample_region(T, state.V, level, N, seed)
    trajs = simulate_batch(sys, c, X0, h, tmax)
    amp = (level / state.b1) ** (1.0 / state.a)
    settled = esc_roa = esc_dom = 0
    env = vinc = dexc = 0.0
    vin = 0.0
    ts = []
    for tr in trajs:
        Vt = cpa_values(T, state.V, tr.states)
        if tr.outcome == ESCAPED:
            esc_dom += 1
        if np.any(~np.isfinite(Vt)) or np.any(Vt > level * (1 + 1e-9)):
            esc_roa += 1
        if tr.outcome == SETTLED:
            settled += 1
            ts.append(tr.settling_time)
        bound = amp * np.exp(-(state.b2 / state.a) * tr.times)
        norms = np.linalg.norm(tr.states, axis=1)
        env = max(env, float(np.max(norms / bound)) - 1.0)
        dV = np.diff(Vt)
        vinc = max(vinc, float(np.max(dV, initial=0.0)))
        dexc = max(dexc, float(np.max(Vt[1:] - Vt[:-1] * np.exp(-state.b2 * h), initial=0.0)))
        vin = max(vin, tr.max_input_violation)
    return MonteCarloReport(
        N, settled / N, esc_roa / N, esc_dom / N, max(env, 0.0), vinc, dexc, vin,
        float(np.mean(ts)) if ts else None, X0, [tr.settling_time for tr in trajs])


def roa_metrics(roa, sys):
    """Areas of the invariant set and of the admissible set, and their ratio."""
    if hasattr(roa, "volume"):
        area = float(roa.volume)
    else:
        area = float(sum(abs(polygon_area(p)) for p in roa))
    area_x = sys.X.volume()
    return {"area_roa": area, "area_X": area_x, "ratio": min(1.0, area / area_x)}
