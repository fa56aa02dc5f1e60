"""``cpasynth`` command line: synth, verify, simulate and mesh.

Exit codes for ``synth``: 0 certified success, 1 invalid input, 2 no positive
decay rate found (stagnation or refinement exhausted), 3 solver failure.
"""

import argparse
import logging
import os
import sys as _sys
import time

import numpy as np

from . import report
from .errors import CpaSynthError, MeshError, ProblemError
from .mesh import refine_global, refine_local, triangulate, validate_mesh, dump_mesh
from .model import load_problem_file, validate_system
from .results import dumps_result, load_result_file
from .runtime import (
    cpa_controller, cpa_values, min_norm_controller, sample_region, simulate_batch,
)
from .synth import SOLVER_FAILURE, synthesize_with_refinement, verify_certificate

log = logging.getLogger("cpasynth")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_STAGNATION = 2
EXIT_SOLVER = 3


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", help="problem file (JSON)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--b2-target", type=float, dest="b2_target")
    common.add_argument("--gamma", type=float)
    common.add_argument("--rho0", type=float)
    common.add_argument("--rho-min", type=float, dest="rho_min")
    common.add_argument("--init", choices=["random", "lqr"])
    common.add_argument("--cost", choices=["u2", "u1", "b1"])
    common.add_argument("--controller", choices=["cpa", "minnorm"], default="cpa")
    common.add_argument("--h", type=float)
    common.add_argument("--tmax", type=float)
    common.add_argument("--n", type=int, help="number of sampled initial states")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cpasynth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="synthesise V and u on a triangulation")
    v = sub.add_parser("verify", parents=[common], help="re-check a result file")
    v.add_argument("result")
    s = sub.add_parser("simulate", parents=[common], help="closed-loop simulation")
    s.add_argument("result")
    s.add_argument("--x0", action="append", default=[],
                   help="initial state as comma-separated values (repeatable)")
    s.add_argument("--grid", type=int, default=7, help="grid size when neither --x0 nor --n")
    m = sub.add_parser("mesh", parents=[common], help="generate or refine a triangulation")
    m.add_argument("--rounds", type=int, default=0, help="global refinement rounds")
    m.add_argument("--local", action="append", default=[], type=int,
                   help="simplex index to bisect locally (repeatable)")
    return p


def _overrides(args):
    return dict(seed=args.seed, b2_target=args.b2_target, gamma=args.gamma, rho0=args.rho0,
                rho_min=args.rho_min, init=args.init, cost=args.cost, h=args.h,
                tmax=args.tmax, n_mc=args.n)


def _load(args):
    if not args.problem:
        raise ProblemError("--problem is required")
    sysm, opts = load_problem_file(args.problem)
    kw = _overrides(args)
    if kw["rho0"] is not None and kw["rho_min"] is None and opts.rho_min > kw["rho0"]:
        kw["rho_min"] = kw["rho0"]
    opts = opts.override(**kw)
    rep = validate_system(sysm)
    if not rep.ok:
        raise ProblemError(str(rep), "problem")
    return sysm, opts


def cmd_synth(args):
    sysm, opts = _load(args)
    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    res = synthesize_with_refinement(sysm, opts)
    wall = time.perf_counter() - t0
    T = res.state.mesh
    with open(os.path.join(args.out, "result.json"), "w") as fh:
        fh.write(dumps_result(res, sysm, opts))
    with open(os.path.join(args.out, "mesh.json"), "w") as fh:
        fh.write(dump_mesh(T) + "\n")
    report.write_history_csv(res.history, os.path.join(args.out, "history.csv"))
    report.write_history_csv(res.history, os.path.join(args.out, "timing.csv"), timing=True)
    report.write_mesh_csv(T, os.path.join(args.out, "mesh.csv"))
    report.plot_history(res.history, os.path.join(args.out, "b2.svg"))
    if T.n == 2:
        report.plot_mesh(T, sysm, os.path.join(args.out, "mesh.svg"))
    if res.roa_region is not None:
        report.write_levelset_csv(res.roa_region, os.path.join(args.out, "levelset.csv"))
        if T.n == 2:
            report.plot_roa(T, res.roa_region, sysm, os.path.join(args.out, "roa.svg"),
                            res.roa_level)
    print(f"b2 = {res.state.b2:.6g}  simplexes = {len(T)}  r = {res.roa_level}  "
          f"termination = {res.termination_reason}  certificate = {res.certificate.ok}  "
          f"({wall:.2f} s)")
    if res.success:
        return EXIT_OK
    if res.termination_reason == SOLVER_FAILURE:
        return EXIT_SOLVER
    return EXIT_STAGNATION


def cmd_verify(args):
    lr = load_result_file(args.result)
    T = lr.state.mesh
    mrep = validate_mesh(T, lr.sys)
    if not mrep.ok:
        print(f"mesh invalid:\n{mrep}")
        return EXIT_INVALID
    cert = verify_certificate(lr.state, T, lr.sys)
    detail = ", ".join(f"{k}={v:.3g}" for k, v in cert.per_constraint.items())
    print(f"max violation {cert.max_violation:.3g} ({detail})")
    if not cert.ok:
        if cert.worst_pair is not None:
            i, j = cert.worst_pair
            print(f"worst pair: simplex {i}, vertex {j} (global {int(T.simplexes[i, j])})")
        return EXIT_INVALID
    if not lr.state.b2 > 0:
        print("b2 is not positive")
        return EXIT_INVALID
    print("certificate ok")
    return EXIT_OK


def _initial_states(args, lr, rng_seed):
    st = lr.state
    if args.x0:
        return np.array([[float(v) for v in s.split(",")] for s in args.x0])
    if args.n:
        return sample_region(st.mesh, st.V, lr.level, args.n, rng_seed)
    lo = st.mesh.vertices.min(axis=0)
    hi = st.mesh.vertices.max(axis=0)
    axes = [np.linspace(a, b, args.grid + 2)[1:-1] for a, b in zip(lo, hi)]
    G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, st.mesh.n)
    v = cpa_values(st.mesh, st.V, G)
    return G[np.isfinite(v) & (v < lr.level)]


def cmd_simulate(args):
    lr = load_result_file(args.result)
    if lr.level is None:
        print("result has no certified invariant set")
        return EXIT_INVALID
    st, sysm = lr.state, lr.sys
    opts = lr.opts.override(**_overrides(args))
    X0 = _initial_states(args, lr, opts.seed)
    if X0.ndim != 2 or X0.shape[1] != sysm.n:
        raise ProblemError(f"initial states must have {sysm.n} components", "--x0")
    v0 = cpa_values(st.mesh, st.V, X0)
    outside = np.flatnonzero(~np.isfinite(v0) | (v0 > lr.level))
    if len(outside):
        for k in outside:
            print(f"x0 #{k} = {X0[k].tolist()} is outside the invariant set")
        return EXIT_INVALID
    c = cpa_controller(st, sysm) if args.controller == "cpa" else min_norm_controller(st, sysm)
    trajs = simulate_batch(sysm, c, X0, opts.h, opts.tmax)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for k, tr in enumerate(trajs):
        V = cpa_values(st.mesh, st.V, tr.states)
        report.write_trajectory_csv(tr, V, os.path.join(args.out, f"traj_{k:03d}.csv"))
        rows.append([k, *X0[k], args.controller, tr.settling_time, tr.outcome,
                     tr.input_energy()])
    header = ["id"] + [f"x0_{i + 1}" for i in range(sysm.n)] + [
        "controller", "settling_time", "outcome", "input_energy"]
    report.write_csv(os.path.join(args.out, "settling.csv"), header, rows)
    if sysm.n == 2:
        report.plot_phase_plane(trajs, sysm, os.path.join(args.out, "phase_plane.svg"),
                                st.mesh, lr.region)
    ts = [tr.settling_time for tr in trajs if tr.settling_time is not None]
    print(f"{len(trajs)} trajectories, {len(ts)} settled, "
          f"mean settling time {np.mean(ts) if ts else float('nan'):.4g} s")
    return EXIT_OK


def cmd_mesh(args):
    sysm, opts = _load(args)
    T = triangulate(sysm, opts.rho0)
    for _ in range(args.rounds):
        T = refine_global(T, sysm, opts.gamma)
    if args.local:
        T = refine_local(T, set(args.local))
    rep = validate_mesh(T, sysm)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "mesh.json"), "w") as fh:
        fh.write(dump_mesh(T) + "\n")
    report.write_mesh_csv(T, os.path.join(args.out, "mesh.csv"))
    if T.n == 2:
        report.plot_mesh(T, sysm, os.path.join(args.out, "mesh.svg"))
    print(f"{len(T)} simplexes, {T.num_vertices} vertices, volume {T.volume():.12g}")
    if not rep.ok:
        print(rep)
        return EXIT_INVALID
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "verify": cmd_verify, "simulate": cmd_simulate,
            "mesh": cmd_mesh}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ProblemError, MeshError, OSError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INVALID
    except CpaSynthError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_STAGNATION


if __name__ == "__main__":
    _sys.exit(main())
