"""Synthesis and simulation options carried in the problem file's ``options`` block."""

from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

from .errors import ProblemError

INIT_KINDS = ("lqr", "random")
COST_KINDS = ("u2", "u1", "b1")
REFINE_KINDS = ("global", "local")


@dataclass(frozen=True)
class SynthOptions:
    init: str = "lqr"
    seed: int = 0
    # exponent and scale of V for the random initialisation
    a: float = 2.0
    b1: float = 1.0
    b2_target: float = 0.5
    max_iters: int = 50
    phase2_iters: int = 20
    tol_stag: float = 1e-4
    k_stag: int = 3
    cost: str = "u2"
    cost_target: Optional[float] = None
    rho0: float = 1.0
    gamma: float = 0.5
    rho_min: float = 0.25
    refine: str = "global"
    lqr_q: float = 2.0
    lqr_r: float = 1.0
    h: float = 1e-3
    tmax: float = 30.0
    n_mc: int = 100

    def __post_init__(self):
        checks = [
            (self.init in INIT_KINDS, "init", f"must be one of {INIT_KINDS}"),
            (self.cost in COST_KINDS, "cost", f"must be one of {COST_KINDS}"),
            (self.refine in REFINE_KINDS, "refine", f"must be one of {REFINE_KINDS}"),
            (self.a >= 1.0, "a", "must be >= 1"),
            (self.b1 > 0.0, "b1", "must be > 0"),
            (self.max_iters >= 0, "max_iters", "must be >= 0"),
            (self.phase2_iters >= 0, "phase2_iters", "must be >= 0"),
            (self.tol_stag > 0.0, "tol_stag", "must be > 0"),
            (self.k_stag >= 1, "k_stag", "must be >= 1"),
            (self.rho0 > 0.0, "rho0", "must be > 0"),
            (0.0 < self.gamma < 1.0, "gamma", "must lie in (0, 1)"),
            (0.0 < self.rho_min <= self.rho0, "rho_min", "must lie in (0, rho0]"),
            (self.lqr_q > 0.0 and self.lqr_r > 0.0, "lqr_q", "LQR weights must be > 0"),
            (self.h > 0.0, "h", "must be > 0"),
            (self.tmax > 0.0, "tmax", "must be > 0"),
            (self.n_mc >= 0, "n_mc", "must be >= 0"),
            (self.seed >= 0, "seed", "must be >= 0"),
        ]
        for ok, name, msg in checks:
            if not ok:
                raise ProblemError(msg, f"options.{name}")

    def to_dict(self):
        return asdict(self)

    def override(self, **kw):
        """Copy with every non-None keyword applied."""
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return cls()
        if not isinstance(d, dict):
            raise ProblemError("must be an object", "options")
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, val in d.items():
            if key not in known:
                raise ProblemError("unknown option", f"options.{key}")
            kw[key] = val
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ProblemError(str(exc), "options") from exc
