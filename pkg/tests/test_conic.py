import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpasynth import conic
from cpasynth.conic import Affine, ConicProgram, verify_solution


def lp_x_ge_3():
    p = ConicProgram()
    x = p.add_variable("x")
    p.add_linear({x: 1.0}, ">=", 3.0)
    p.minimize_linear({x: 1.0})
    return p


def test_program_assembly():
    p = lp_x_ge_3()
    assert p.num_vars == 1 and len(p.linear) == 1
    assert "ROW" in p.to_text()


def test_quad_block_definition():
    p = ConicProgram()
    x = p.add_variable("x")
    y = p.add_variable("y")
    p.add_quad_block(Affine.make({x: 1.0}, -1.0), [[Affine.make({y: 1.0})]])
    b = p.blocks[0]
    for xv, yv in [(0.0, 0.0), (1.0, 1.0), (0.5, 1.0), (-2.0, 3.0)]:
        assert b.value(np.array([xv, yv])) == xv - 1 + 0.5 * yv ** 2


def test_bad_index_rejected():
    p = ConicProgram()
    p.add_variable("x")
    with pytest.raises(IndexError):
        p.add_linear({3: 1.0}, "<=", 0.0)
    with pytest.raises(IndexError):
        p.add_quad_block(Affine.make({0: 1.0}), [[Affine.make({1: 1.0})]])


def test_empty_program():
    p = ConicProgram()
    sol = conic.solve(p)
    assert p.num_vars == 0
    assert sol.status == conic.OPTIMAL and sol.objective_value == 0.0
    assert verify_solution(p, sol).max_residual == 0.0


def test_lp_corner():
    p = lp_x_ge_3()
    sol = conic.solve(p)
    assert sol.status == conic.OPTIMAL
    assert sol.x[0] == pytest.approx(3.0, abs=1e-7)
    assert verify_solution(p, sol).max_residual <= 1e-8


def test_residual_reports_perturbation():
    p = lp_x_ge_3()
    sol = conic.solve(p)
    x = sol.x.copy()
    x[0] = 3.0 - 1e-3
    assert verify_solution(p, x).max_residual == pytest.approx(1e-3, rel=1e-6)


def test_quad_block_stationarity():
    # min t  s.t.  1 - t + (y - 2)^2 / 2 <= 0
    p = ConicProgram()
    t = p.add_variable("t")
    y = p.add_variable("y")
    p.add_quad_block(Affine.make({t: -1.0}, 1.0), [[Affine.make({y: 1.0}, -2.0)]])
    p.minimize_linear({t: 1.0})
    sol = conic.solve(p)
    assert sol.status == conic.OPTIMAL
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.x[1] == pytest.approx(2.0, abs=1e-3)
    assert verify_solution(p, sol).max_residual <= 10 * conic.TOL_SOLVER


def test_infeasible():
    p = ConicProgram()
    x = p.add_variable("x")
    p.add_linear({x: 1.0}, ">=", 1.0)
    p.add_linear({x: 1.0}, "<=", 0.0)
    p.minimize_linear({x: 1.0})
    assert conic.solve(p).status == conic.INFEASIBLE


def test_equality_and_square_objective():
    p = ConicProgram()
    a = p.add_variable("a", 2)
    p.add_linear({a: 1.0, a + 1: 1.0}, "=", 1.0)
    p.minimize_square([Affine.make({a: 1.0}), Affine.make({a + 1: 1.0}, -1.0)])
    sol = conic.solve(p)
    # min a0^2 + (a1 - 1)^2 on a0 + a1 = 1 -> (0, 1)
    np.testing.assert_allclose(sol.x, [0.0, 1.0], atol=1e-6)
    assert sol.objective_value == pytest.approx(0.0, abs=1e-8)


def explicit_P(phi, gv, bu, dv, db):
    """The (2n+3) x (2n+3) block matrix with -2 identity diagonal blocks."""
    n = len(gv)
    N = 2 * n + 3
    P = np.zeros((N, N))
    P[0, 0] = phi
    col = np.concatenate([gv, bu, [dv], [db]])
    P[1:, 0] = col
    P[0, 1:] = col
    P[1:, 1:] = -2.0 * np.eye(N - 1)
    return P


def test_schur_equivalence_random(rng):
    """QuadBlock satisfaction iff the explicit block matrix is NSD."""
    n = 2
    done = 0
    while done < 100:
        gv = rng.normal(size=n)
        bu = rng.normal(size=n)
        dv, db = rng.normal(size=2)
        phi = rng.normal() * 3 - 0.5 * (gv @ gv + bu @ bu + dv ** 2 + db ** 2)
        p = ConicProgram()
        x = p.add_variable("x", 2 * n + 3)
        vals = np.concatenate([[phi], gv, bu, [dv, db]])
        vecs = [[Affine.make({x + 1 + k: 1.0}) for k in range(n)],
                [Affine.make({x + 1 + n + k: 1.0}) for k in range(n)],
                [Affine.make({x + 1 + 2 * n: 1.0})], [Affine.make({x + 2 + 2 * n: 1.0})]]
        p.add_quad_block(Affine.make({x: 1.0}), vecs)
        q = p.blocks[0].value(vals)
        if abs(q) < 1e-6:
            continue
        lam = np.linalg.eigvalsh(explicit_P(phi, gv, bu, dv, db)).max()
        assert (q <= 0) == (lam <= 1e-8)
        done += 1


@settings(max_examples=40, deadline=None)
@given(c=st.floats(-5, 5), lo=st.floats(-3, 3), w=st.floats(0.1, 4))
def test_box_lp_hypothesis(c, lo, w):
    p = ConicProgram()
    x = p.add_variable("x")
    p.add_linear({x: 1.0}, ">=", lo)
    p.add_linear({x: 1.0}, "<=", lo + w)
    p.minimize_linear({x: c})
    sol = conic.solve(p)
    assert sol.status == conic.OPTIMAL
    assert verify_solution(p, sol).max_residual <= 10 * conic.TOL_SOLVER
    if abs(c) > 1e-3:
        assert sol.x[0] == pytest.approx(lo if c > 0 else lo + w, abs=1e-6)
