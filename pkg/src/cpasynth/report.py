"""CSV records and static SVG figures for synthesis and simulation runs.

Every figure is written next to the CSV holding its data. Figures go through
matplotlib's SVG backend with a fixed hash salt and no date stamp, so repeated
runs produce identical files.
"""

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection, PolyCollection  # noqa: E402

plt.rcParams["svg.hashsalt"] = "cpasynth"
plt.rcParams["svg.fonttype"] = "none"

_SVG_META = {"Date": None, "Creator": None}


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return v


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def _domain_axes(sys, title):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    poly = np.vstack([sys.X.polygon, sys.X.polygon[:1]])
    ax.plot(poly[:, 0], poly[:, 1], color="black", lw=1.2)
    ax.set_aspect("equal")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_title(title)
    return fig, ax


def _mesh_edges(T):
    segs = [T.vertices[[f[0], f[1]]] for f in sorted(T.facets)]
    return LineCollection(segs, colors="0.7", linewidths=0.6)


# ------------------------------------------------------------------ CSV records


def mesh_rows(T):
    return [[i, *map(int, s), int(md)] for i, (s, md) in enumerate(zip(T.simplexes, T.modes))]


def write_mesh_csv(T, path):
    n = T.n
    write_csv(path, ["simplex_id"] + [f"v{k}" for k in range(n + 1)] + ["mode"], mesh_rows(T))
    base, ext = os.path.splitext(path)
    write_csv(base + "_vertices" + ext, ["vertex_id"] + [f"x{k + 1}" for k in range(n)],
              [[k, *x] for k, x in enumerate(T.vertices)])


def levelset_rows(region):
    rows = []
    for i in sorted(region.pieces):
        for p in region.pieces[i]:
            rows.append([i, float(p[0]), float(p[1])])
    return rows


def write_levelset_csv(region, path):
    write_csv(path, ["simplex_id", "vertex_x", "vertex_y"], levelset_rows(region))


def write_history_csv(history, path, timing=False):
    keys = ["iter", "phase", "b2", "J", "status"] + (["wall_ms"] if timing else [])
    write_csv(path, keys, [[r.to_dict(timing)[k] for k in keys] for r in history])


def write_trajectory_csv(tr, V_values, path):
    n, m = tr.states.shape[1], tr.inputs.shape[1]
    header = ["t"] + [f"x{k + 1}" for k in range(n)] + [f"u{k + 1}" for k in range(m)] + ["V"]
    rows = [[t, *x, *u, v] for t, x, u, v in zip(tr.times, tr.states, tr.inputs, V_values)]
    write_csv(path, header, rows)


# ------------------------------------------------------------------- figures


def plot_mesh(T, sys, path):
    fig, ax = _domain_axes(sys, f"triangulation ({len(T)} simplexes)")
    ax.add_collection(_mesh_edges(T))
    for md in sys.modes:
        P = np.vstack([md.region.polygon, md.region.polygon[:1]])
        ax.plot(P[:, 0], P[:, 1], color="tab:blue", lw=0.9)
    ax.plot([0], [0], "k+", ms=8)
    _save(fig, path)


def plot_roa(T, region, sys, path, level=None):
    title = "invariant sublevel set" + (f" (r = {level:.4g})" if level is not None else "")
    fig, ax = _domain_axes(sys, title)
    ax.add_collection(_mesh_edges(T))
    if region is not None and region.pieces:
        polys = [region.pieces[i] for i in sorted(region.pieces)]
        ax.add_collection(PolyCollection(polys, facecolors="tab:orange", edgecolors="none",
                                         alpha=0.6))
    ax.plot([0], [0], "k+", ms=8)
    _save(fig, path)


def plot_history(history, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    p1 = [r for r in history if r.phase == 1]
    p2 = [r for r in history if r.phase == 2]
    if p1:
        ax.plot([r.iter for r in p1], [r.b2 for r in p1], "o-", ms=3, label="phase 1")
    if p2:
        ax.plot([r.iter for r in p2], [r.b2 for r in p2], "s-", ms=3, label="phase 2")
    ax.axhline(0.0, color="0.5", lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("b2")
    ax.legend(loc="lower right")
    _save(fig, path)


def plot_phase_plane(trajs, sys, path, T=None, region=None):
    fig, ax = _domain_axes(sys, "closed-loop trajectories")
    if T is not None:
        ax.add_collection(_mesh_edges(T))
    if region is not None and region.pieces:
        polys = [region.pieces[i] for i in sorted(region.pieces)]
        ax.add_collection(PolyCollection(polys, facecolors="tab:orange", edgecolors="none",
                                         alpha=0.3))
    for tr in trajs:
        ax.plot(tr.states[:, 0], tr.states[:, 1], color="tab:blue", lw=0.8)
        ax.plot(tr.states[0, 0], tr.states[0, 1], "o", color="tab:blue", ms=2.5)
    ax.plot([0], [0], "k+", ms=8)
    _save(fig, path)
