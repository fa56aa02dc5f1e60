"""Built-in benchmark: the three-mode planar PWA system used for evaluation."""

import json

import numpy as np

from .model import system_from_dict
from .options import SynthOptions

P_COEFFS = (0.1, -0.9, -1.9)


def benchmark_dict(u_max=2.0, x1=(-3.0, 3.0), x2=(-2.0, 2.0), switch=1.0, options=None):
    """Problem document for ``xdot = A_s x + B u + e_s`` with ``|u| <= u_max``.

    The domain is the box ``x1 x x2`` split at ``x1 = -switch`` and ``x1 = switch``.
    """
    lo, hi = x1
    b, t = x2

    def box(a, c):
        return [[a, b], [c, b], [c, t], [a, t]]

    cuts = [(lo, -switch), (-switch, switch), (switch, hi)]
    modes = []
    for k, (p, (a, c)) in enumerate(zip(P_COEFFS, cuts)):
        modes.append({
            "A": [[0.1, 1.1], [p, -1.0]],
            "B": [[0.0], [1.0]],
            "e": [0.0, 0.0] if k == 1 else [0.0, 1.0],
            "region": {"polygon": box(a, c)},
        })
    d = {
        "n": 2,
        "m": 1,
        "modes": modes,
        "input": {"H": [[1.0], [-1.0]], "h": [u_max, u_max]},
        "domain": {"polygon": box(lo, hi)},
    }
    if options is not None:
        d["options"] = options.to_dict() if isinstance(options, SynthOptions) else dict(options)
    return d


def benchmark(u_max=2.0, **kw):
    return system_from_dict(benchmark_dict(u_max, **kw))


def write_benchmark(path, u_max=2.0, **kw):
    with open(path, "w") as fh:
        json.dump(benchmark_dict(u_max, **kw), fh, indent=1)
