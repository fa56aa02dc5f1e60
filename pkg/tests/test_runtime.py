import numpy as np
import pytest

from cpasynth.errors import InfeasibleQPError, OutOfDomainError
from cpasynth.mesh import triangulate
from cpasynth.model import system_from_dict
from cpasynth.runtime import (
    ESCAPED, SETTLED, TIME_LIMIT, Controller, _BatchPolicy, cpa_controller, cpa_values,
    eval_controller, min_norm_controller, monte_carlo_invariance, roa_metrics, sample_region,
    simulate, simulate_batch, solve_small_qp,
)
from cpasynth.synth import SynthState


def decay_system(half=2.0):
    sq = [[-half, -half], [half, -half], [half, half], [-half, half]]
    d = {"n": 2, "m": 1,
         "modes": [{"A": [[-1, 0], [0, -1]], "B": [[0], [1]], "e": [0, 0],
                    "region": {"polygon": sq}}],
         "input": {"H": [[1], [-1]], "h": [1, 1]},
         "domain": {"polygon": sq}}
    return system_from_dict(d)[0]


@pytest.fixture(scope="module")
def certified(case2_result, case2):
    return case2_result, case2[0]


def test_origin_input_zero(certified):
    r, sys = certified
    for c in (cpa_controller(r.state, sys), min_norm_controller(r.state, sys)):
        assert np.all(eval_controller(c, [0.0, 0.0]) == 0.0)


def test_out_of_domain(certified):
    r, sys = certified
    with pytest.raises(OutOfDomainError):
        eval_controller(cpa_controller(r.state, sys), [9.0, 0.0])


def test_min_norm_inactive_constraint():
    sys = decay_system()
    T = triangulate(sys, 1.0)
    V = np.sum(T.vertices ** 2, axis=1)
    st = SynthState(T, V, np.zeros(T.num_vertices), 2.0, 1.0, 0.5)
    c = min_norm_controller(st, sys)
    for x in ([0.3, 0.2], [-1.0, 1.5], [1.9, -0.4]):
        assert eval_controller(c, x)[0] == 0.0


def test_min_norm_scalar_kkt(certified, rng):
    r, sys = certified
    st = r.state
    T = st.mesh
    c = min_norm_controller(st, sys)
    from cpasynth.cpa import gradients
    G = gradients(T, st.V)
    hits = 0
    for x in sample_region(T, st.V, r.roa_level, 300, seed=2):
        I = [i for i in range(len(T)) if np.all(T.barycentric(x)[i] >= -1e-9)]
        if len(I) != 1:
            continue
        i = I[0]
        md = sys.mode(int(T.modes[i]))
        Vx = cpa_values(T, st.V, x[None])[0]
        a = G[i] @ (md.A @ x + md.e) + st.b2 * Vx
        beta = G[i] @ md.B[:, 0]
        if a <= 0 or abs(beta) < 1e-9:
            continue
        # only the CLF row binds: u = -a / beta, clipped
        exp = np.clip(-a / beta, -2.0, 2.0)
        assert eval_controller(c, x)[0] == pytest.approx(exp, abs=1e-9)
        hits += 1
    assert hits > 10


def test_small_qp_matches_scalar_path(certified):
    r, sys = certified
    st = r.state
    c = min_norm_controller(st, sys)
    X = np.vstack([sample_region(st.mesh, st.V, r.roa_level, 500, seed=9), st.mesh.vertices])
    U, ok = _BatchPolicy(c)(X)
    assert ok.all()
    ref = np.array([eval_controller(c, x) for x in X])
    assert np.abs(U - ref).max() <= 1e-9


def test_small_qp_general():
    Hq = np.array([[2.0, 0.3], [0.3, 1.0]])
    hq = np.array([-1.0, 0.5])
    G = np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [1.0, -2.0]])
    g = np.array([0.2, 1.0, 1.0, 0.1])
    u = solve_small_qp(Hq, hq, G, g)
    # brute force over a fine grid of the feasible set
    s = np.linspace(-1, 1.2, 441)
    P = np.stack(np.meshgrid(s, s), -1).reshape(-1, 2)
    P = P[np.all(P @ G.T <= g + 1e-12, axis=1)]
    vals = np.einsum("pi,ij,pj->p", P, Hq, P) + P @ hq
    assert u @ Hq @ u + hq @ u <= vals.min() + 1e-12
    assert np.all(G @ u <= g + 1e-9)
    with pytest.raises(InfeasibleQPError):
        solve_small_qp(Hq, hq, np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([-1.0, -1.0]))


def test_min_norm_objective_below_cpa(certified):
    r, sys = certified
    st = r.state
    cm, cc = min_norm_controller(st, sys), cpa_controller(st, sys)
    X = sample_region(st.mesh, st.V, r.roa_level, 300, seed=4)
    for x in X:
        assert eval_controller(cm, x) @ eval_controller(cm, x) <= \
            eval_controller(cc, x) @ eval_controller(cc, x) + 1e-12


def test_equilibrium_trajectory(certified):
    r, sys = certified
    tr = simulate(sys, cpa_controller(r.state, sys), [0.0, 0.0], 1e-2, 1.0)
    assert tr.outcome == SETTLED and tr.settling_time == 0.0
    assert np.all(tr.states == 0.0)


def exp_controller(sys, T):
    st = SynthState(T, np.sum(T.vertices ** 2, axis=1), np.zeros(T.num_vertices), 2.0, 1.0, 1.0)
    return cpa_controller(st, sys)


def test_exponential_settling():
    sys = decay_system()
    T = triangulate(sys, 1.0)
    tr = simulate(sys, exp_controller(sys, T), [0.6, 0.8], 1e-3, 8.0)
    assert tr.outcome == SETTLED
    assert abs(tr.settling_time - np.log(100)) <= 1e-3
    after = tr.times >= tr.settling_time
    assert np.all(np.linalg.norm(tr.states[after], axis=1) <= 0.01)


def test_time_limit_and_escape():
    sys = decay_system()
    T = triangulate(sys, 1.0)
    tr = simulate(sys, exp_controller(sys, T), [0.6, 0.8], 1e-2, 1.0)
    assert tr.outcome == TIME_LIMIT and tr.settling_time is None
    from cpasynth.model import system_from_dict as sfd
    d = {"n": 2, "m": 1,
         "modes": [{"A": [[1, 0], [0, 1]], "B": [[0], [1]], "e": [0, 0],
                    "region": {"polygon": [[-2, -2], [2, -2], [2, 2], [-2, 2]]}}],
         "input": {"H": [[1], [-1]], "h": [1, 1]},
         "domain": {"polygon": [[-2, -2], [2, -2], [2, 2], [-2, 2]]}}
    unstable = sfd(d)[0]
    tr = simulate(unstable, exp_controller(unstable, T), [0.5, 0.5], 1e-2, 5.0)
    assert tr.outcome == ESCAPED
    assert np.all(np.abs(tr.states) <= 2.0 + 1e-9)


def test_certified_decay_along_trajectory(certified):
    r, sys = certified
    st = r.state
    X0 = sample_region(st.mesh, st.V, r.roa_level, 5, seed=11)
    h = 1e-3
    for tr in simulate_batch(sys, cpa_controller(st, sys), X0, h, 10.0):
        assert tr.outcome == SETTLED
        V = cpa_values(st.mesh, st.V, tr.states)
        assert np.all(V <= V[0] * np.exp(-st.b2 * tr.times) * (1 + 1e-3) + 1e-12)
        assert np.all(V[1:] <= V[:-1] * np.exp(-st.b2 * h) + 1e-6)
        assert tr.max_input_violation <= 1e-9
        assert np.all(np.abs(tr.inputs) <= 2.0 + 1e-9)


def test_halving_step_settling_times(certified):
    r, sys = certified
    st = r.state
    X0 = sample_region(st.mesh, st.V, r.roa_level, 4, seed=12)
    c = cpa_controller(st, sys)
    a = simulate_batch(sys, c, X0, 2e-3, 10.0)
    b = simulate_batch(sys, c, X0, 1e-3, 10.0)
    for ta, tb in zip(a, b):
        assert abs(ta.settling_time - tb.settling_time) <= 0.01 * tb.settling_time


def test_monte_carlo_empty(certified):
    r, sys = certified
    rep = monte_carlo_invariance(sys, cpa_controller(r.state, sys), r.state, r.roa_level, 0)
    assert rep.n == 0


def test_monte_carlo_inflated_level(certified):
    r, sys = certified
    st = r.state
    rep = monte_carlo_invariance(sys, cpa_controller(st, sys), st, 1.1 * r.roa_level, 20,
                                 seed=3, h=1e-2, tmax=10.0)
    assert 0.0 <= rep.escaped_roa_fraction <= 1.0
    assert rep.n == 20


def test_roa_metrics(certified):
    class Region:
        volume = 0.5
    from cpasynth.problems import benchmark
    sys = benchmark(2.0)[0]
    assert roa_metrics(Region(), sys)["ratio"] == pytest.approx(1 / 48)
    Region.volume = 24.0
    assert roa_metrics(Region(), sys)["ratio"] == 1.0
    r, _ = certified
    m = roa_metrics(r.roa_region, sys)
    assert 0 < m["ratio"] < 1
    # regression pin for the default-domain Case-2 run
    assert m["area_roa"] == pytest.approx(1.6212859106537638, rel=1e-6)


def test_sampling_is_uniform_and_deterministic(certified):
    r, _ = certified
    st = r.state
    a = sample_region(st.mesh, st.V, r.roa_level, 2000, seed=1)
    b = sample_region(st.mesh, st.V, r.roa_level, 2000, seed=1)
    assert np.array_equal(a, b)
    assert np.all(cpa_values(st.mesh, st.V, a) < r.roa_level)
    # fraction of samples in each piece tracks its area
    from cpasynth.mesh import Locator
    idx = Locator(st.mesh)(a)
    vol = r.roa_region.piece_volumes
    big = max(vol, key=vol.get)
    frac = np.mean(idx == big)
    assert abs(frac - vol[big] / r.roa_region.volume) < 0.05


def test_controller_is_immutable(certified):
    r, sys = certified
    c = cpa_controller(r.state, sys)
    with pytest.raises(Exception):
        c.kind = "x"
    with pytest.raises(ValueError):
        c.U[0, 0] = 1.0
    assert isinstance(c, Controller)


def test_input_energy(certified):
    r, sys = certified
    tr = simulate(sys, cpa_controller(r.state, sys), [0.3, 0.3], 1e-2, 5.0)
    e = np.sum(tr.inputs ** 2, axis=1)
    assert tr.input_energy() == pytest.approx(np.trapezoid(e, tr.times))
