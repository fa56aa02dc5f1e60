import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpasynth.errors import DimensionError, OutOfDomainError, ProblemError
from cpasynth.model import (
    ModeLocator, Polytope, load_problem, mode_at, serialize, system_from_dict,
    validate_system,
)
from cpasynth.problems import benchmark_dict


def test_benchmark_file_parses():
    sys, opts = load_problem(json.dumps(benchmark_dict(1.0)))
    assert (sys.n, sys.m, len(sys.modes)) == (2, 1, 3)
    for md, p in zip(sys.modes, (0.1, -0.9, -1.9)):
        np.testing.assert_array_equal(md.A, [[0.1, 1.1], [p, -1.0]])
        np.testing.assert_array_equal(md.B, [[0.0], [1.0]])
    np.testing.assert_array_equal(sys.mode(2).e, [0, 0])
    np.testing.assert_array_equal(sys.mode(1).e, [0, 1])
    np.testing.assert_array_equal(sys.mode(3).e, [0, 1])
    np.testing.assert_array_equal(sys.inputH, [[1.0], [-1.0]])
    np.testing.assert_array_equal(sys.inputh, [1.0, 1.0])


def test_single_zero_mode_is_valid():
    d = {"n": 2, "m": 2,
         "modes": [{"A": [[0, 0], [0, 0]], "B": [[1, 0], [0, 1]], "e": [0, 0],
                    "region": {"polygon": [[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]}}],
         "input": {"H": [[1, 0], [-1, 0], [0, 1], [0, -1]], "h": [1, 1, 1, 1]},
         "domain": {"polygon": [[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]}}
    sys, _ = load_problem(json.dumps(d))
    assert validate_system(sys).ok


def test_origin_mode_with_offset_rejected():
    d = benchmark_dict(1.0)
    d["modes"][1]["e"] = [0.0, 1.0]
    with pytest.raises(ProblemError, match="origin mode requires e=0"):
        load_problem(json.dumps(d))
    sys, _ = system_from_dict(d)
    rep = validate_system(sys)
    assert not rep.ok
    assert any(f.code == "origin-mode-affine" and "mode 2" in f.location for f in rep.errors)


def test_parse_error_has_line():
    with pytest.raises(ProblemError) as exc:
        load_problem('{"n": 2,\n "m": }')
    assert "line 2" in exc.value.path


def test_dimension_error_names_mode():
    d = benchmark_dict(1.0)
    d["modes"][2]["A"] = [[1.0, 0.0]]
    with pytest.raises(DimensionError) as exc:
        load_problem(json.dumps(d))
    assert "modes[2].A" in exc.value.path


def test_missing_field_path():
    d = benchmark_dict(1.0)
    del d["modes"][0]["B"]
    with pytest.raises(ProblemError) as exc:
        load_problem(json.dumps(d))
    assert exc.value.path == "modes[0].B"


def test_benchmark_validates(bench2):
    rep = validate_system(bench2[0])
    assert rep.ok and not rep.errors


def test_overlapping_regions_reported():
    d = benchmark_dict(1.0)
    d["modes"][0]["region"] = {"polygon": [[-3, -2], [0.5, -2], [0.5, 2], [-3, 2]]}
    sys, _ = system_from_dict(d)
    rep = validate_system(sys)
    assert any(f.code == "regions-overlap" and f.message == "regions overlap" for f in rep.errors)


def test_negative_input_bound_rejected():
    d = benchmark_dict(1.0)
    d["input"]["h"] = [1.0, -0.5]
    sys, _ = system_from_dict(d)
    assert any(f.code == "input-zero-inadmissible" for f in validate_system(sys).errors)


def test_validation_ok_iff_no_errors():
    d = benchmark_dict(1.0)
    sys, _ = system_from_dict(d)
    rep = validate_system(sys)
    rep.add("warning", "x", "just a warning")
    assert rep.ok
    rep.add("error", "y", "now an error")
    assert not rep.ok


def test_mode_at_examples(bench2):
    sys = bench2[0]
    assert mode_at(sys, [-2, 0]) == {1}
    assert mode_at(sys, [-1, 0.5]) == {1, 2}
    assert mode_at(sys, [0, 0]) == {2}
    with pytest.raises(OutOfDomainError):
        mode_at(sys, [5, 0])


def test_mode_cover_on_grid(bench2):
    """Every grid point is covered; multiple modes only on their shared facet."""
    sys = bench2[0]
    g = np.linspace(-3, 3, 61)
    h = np.linspace(-2, 2, 41)
    for x1 in g:
        for x2 in h:
            found = mode_at(sys, [x1, x2])
            if len(found) > 1:
                assert min(abs(x1 + 1), abs(x1 - 1)) <= 1e-9


def test_mode_locator_matches_mode_at(bench2, rng):
    sys = bench2[0]
    X = rng.uniform([-3.5, -2.5], [3.5, 2.5], size=(500, 2))
    X[:50, 0] = rng.choice([-1.0, 1.0], 50)
    loc = ModeLocator(sys)(X)
    for x, s in zip(X, loc):
        try:
            assert s == min(mode_at(sys, x))
        except OutOfDomainError:
            assert s == -1


@settings(max_examples=25, deadline=None)
@given(u=st.floats(0.1, 10.0), sw=st.floats(0.2, 2.5))
def test_serialize_roundtrip(u, sw):
    sys, opts = system_from_dict(benchmark_dict(u, switch=sw))
    sys2, opts2 = load_problem(serialize(sys, opts))
    for a, b in zip(sys.modes, sys2.modes):
        for f in ("A", "B", "e"):
            assert np.array_equal(getattr(a, f), getattr(b, f))
        assert np.array_equal(a.region.Hx, b.region.Hx)
        assert np.array_equal(a.region.hx, b.region.hx)
    assert np.array_equal(sys.inputh, sys2.inputh)
    assert opts == opts2


def test_halfspace_region():
    P = Polytope.from_halfspaces([[1, 0], [-1, 0], [0, 2], [0, -1]], [1, 1, 2, 1])
    assert P.contains([0.9, 0.9]) and not P.contains([0, 1.1])
    assert P.volume() == pytest.approx(4.0)


def test_unknown_option_rejected():
    d = benchmark_dict(1.0, options={"rho0": 1.0, "bogus": 3})
    with pytest.raises(ProblemError) as exc:
        system_from_dict(d)
    assert exc.value.path == "options.bogus"


def test_option_range_checked():
    d = benchmark_dict(1.0, options={"gamma": 1.5})
    with pytest.raises(ProblemError) as exc:
        system_from_dict(d)
    assert exc.value.path == "options.gamma"
