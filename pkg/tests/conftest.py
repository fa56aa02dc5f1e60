from importlib import resources

import numpy as np
import pytest

from cpasynth.model import load_problem
from cpasynth.problems import benchmark
from cpasynth.synth import synthesize


def data_text(name):
    return resources.files("cpasynth").joinpath("data", name).read_text()


@pytest.fixture(scope="session")
def case2():
    return load_problem(data_text("case2.json"))


@pytest.fixture(scope="session")
def case1():
    return load_problem(data_text("case1.json"))


@pytest.fixture(scope="session")
def case2_result(case2):
    sys, opts = case2
    return synthesize(sys, opts)


@pytest.fixture(scope="session")
def bench2():
    return benchmark(2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """``record(k, ok, detail)`` prints and stores one line for criterion ``k``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(k, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {k:2d}: {detail}"
        lines[k] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
