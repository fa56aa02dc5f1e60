"""Offline synthesis of CPA Lyapunov functions and CPA controllers for PWA systems."""

from .errors import (
    CpaSynthError, DimensionError, InfeasibleQPError, MeshError, MinimumSizeError,
    NotStabilizableError, OutOfDomainError, ProblemError,
)
from .model import (
    Polytope, PwaMode, PwaSystem, ValidationReport, load_problem, load_problem_file,
    mode_at, serialize, validate_system,
)
from .options import SynthOptions
from .mesh import Triangulation, locate, refine_global, refine_local, triangulate, validate_mesh
from .cpa import (
    CpaScalarField, CpaVectorField, decrease_subset, dini, evaluate, gradient,
    largest_b2, max_invariant_level, sublevel,
)
from .lqr import solve_care
from .synth import (
    SynthResult, SynthState, init_lqr, init_random, phase1_maximize_b2,
    phase2_minimize_cost, sdp_step, synthesize, synthesize_with_refinement,
    verify_certificate,
)
from .runtime import (
    Controller, Trajectory, cpa_controller, eval_controller, min_norm_controller,
    monte_carlo_invariance, roa_metrics, simulate, simulate_batch,
)

__version__ = "0.1.0"
