import csv
import json
import subprocess
import sys as _sys

import numpy as np
import pytest

from cpasynth import cli
from cpasynth.cpa import largest_b2
from cpasynth.results import load_result_file

from conftest import data_text


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    prob = d / "case2.json"
    prob.write_text(data_text("case2.json"))
    code = cli.main(["synth", "--problem", str(prob), "--out", str(d / "out")])
    return d, code


def unstabilisable(path):
    sq = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]
    d = {"n": 2, "m": 1,
         "modes": [{"A": [[1.0, 0.0], [0.0, 1.0]], "B": [[0.0], [0.0]], "e": [0.0, 0.0],
                    "region": {"polygon": sq}}],
         "input": {"H": [[1.0], [-1.0]], "h": [1.0, 1.0]},
         "domain": {"polygon": sq},
         "options": {"rho0": 1.0, "rho_min": 0.5, "max_iters": 10}}
    path.write_text(json.dumps(d))


def test_synth_success_outputs(synth_dir):
    d, code = synth_dir
    out = d / "out"
    assert code == 0
    for f in ("result.json", "mesh.json", "history.csv", "timing.csv", "mesh.csv",
              "mesh_vertices.csv", "levelset.csv", "b2.svg", "mesh.svg", "roa.svg"):
        assert (out / f).is_file(), f
    hist = read_csv(out / "history.csv")
    assert "wall_ms" not in hist[0]
    assert "wall_ms" in read_csv(out / "timing.csv")[0]


def test_every_figure_has_its_data(synth_dir):
    out = synth_dir[0] / "out"
    pairs = {"b2.svg": "history.csv", "mesh.svg": "mesh.csv", "roa.svg": "levelset.csv"}
    for svg in out.glob("*.svg"):
        assert (out / pairs[svg.name]).is_file()


def test_result_file_reconstructs_certificate(synth_dir, case2):
    lr = load_result_file(synth_dir[0] / "out" / "result.json")
    st = lr.state
    assert st.b2 > 0.3 and lr.level > 0
    assert largest_b2(st.mesh, st.V, st.U, lr.sys) >= st.b2 - 1e-9


def test_malformed_problem_exit_1(tmp_path, capsys):
    d = json.loads(data_text("case2.json"))
    d["modes"][1]["A"] = [[1.0, 2.0]]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    assert cli.main(["synth", "--problem", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "modes" in capsys.readouterr().err


def test_not_json_exit_1(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert cli.main(["synth", "--problem", str(p), "--out", str(tmp_path / "o")]) == 1


def test_missing_problem_exit_1(tmp_path):
    assert cli.main(["synth", "--out", str(tmp_path)]) == 1


def test_unstabilisable_exit_2(tmp_path):
    p = tmp_path / "ab.json"
    unstabilisable(p)
    assert cli.main(["synth", "--problem", str(p), "--out", str(tmp_path / "o")]) == 2
    assert (tmp_path / "o" / "result.json").is_file()


def test_verify_untouched(synth_dir, capsys):
    assert cli.main(["verify", str(synth_dir[0] / "out" / "result.json")]) == 0
    assert "certificate ok" in capsys.readouterr().out


def _edited(synth_dir, tmp_path, edit):
    d = json.loads((synth_dir[0] / "out" / "result.json").read_text())
    edit(d)
    p = tmp_path / "edited.json"
    p.write_text(json.dumps(d))
    return p


def test_verify_raised_b2_fails(synth_dir, tmp_path, capsys):
    lr = load_result_file(synth_dir[0] / "out" / "result.json")
    st = lr.state
    # 10% above the exact decay rate must violate at least one pair
    exact = largest_b2(st.mesh, st.V, st.U, lr.sys)
    p = _edited(synth_dir, tmp_path, lambda d: d.update(b2=1.1 * exact))
    assert cli.main(["verify", str(p)]) == 1
    assert "worst pair: simplex" in capsys.readouterr().out


def test_verify_edited_V_fails(synth_dir, tmp_path, capsys):
    def halve(d):
        k = int(np.argmax(d["V"]))
        d["V"][k] *= 0.5

    p = _edited(synth_dir, tmp_path, halve)
    assert cli.main(["verify", str(p)]) == 1


def test_simulate_grid(synth_dir, tmp_path):
    res = synth_dir[0] / "out" / "result.json"
    out = tmp_path / "sim"
    assert cli.main(["simulate", str(res), "--out", str(out), "--grid", "3",
                     "--tmax", "10"]) == 0
    rows = read_csv(out / "settling.csv")
    assert rows and all(r["controller"] == "cpa" for r in rows)
    assert (out / "phase_plane.svg").is_file()
    traj = read_csv(out / "traj_000.csv")
    assert list(traj[0]) == ["t", "x1", "x2", "u1", "V"]


def test_simulate_origin_settles_at_zero(synth_dir, tmp_path):
    res = synth_dir[0] / "out" / "result.json"
    out = tmp_path / "sim0"
    assert cli.main(["simulate", str(res), "--out", str(out), "--x0", "0,0",
                     "--tmax", "1"]) == 0
    rows = read_csv(out / "settling.csv")
    assert float(rows[0]["settling_time"]) == 0.0
    assert float(rows[0]["input_energy"]) == 0.0


def test_simulate_outside_exit_1(synth_dir, tmp_path, capsys):
    res = synth_dir[0] / "out" / "result.json"
    assert cli.main(["simulate", str(res), "--out", str(tmp_path), "--x0", "2.9,1.9"]) == 1
    assert "outside" in capsys.readouterr().out


def test_simulate_min_norm(synth_dir, tmp_path):
    res = synth_dir[0] / "out" / "result.json"
    out = tmp_path / "mn"
    assert cli.main(["simulate", str(res), "--out", str(out), "--controller", "minnorm",
                     "--x0", "0.3,-0.2", "--tmax", "15"]) == 0
    rows = read_csv(out / "settling.csv")
    assert rows[0]["controller"] == "minnorm" and rows[0]["outcome"] == "settled"


def test_mesh_command(tmp_path, capsys):
    p = tmp_path / "case2.json"
    p.write_text(data_text("case2.json"))
    out = tmp_path / "m"
    assert cli.main(["mesh", "--problem", str(p), "--out", str(out), "--rho0", "4",
                     "--rounds", "1", "--local", "0"]) == 0
    assert "volume 24" in capsys.readouterr().out
    assert (out / "mesh.svg").is_file() and (out / "mesh.csv").is_file()


def test_module_entry_point(tmp_path):
    p = tmp_path / "case2.json"
    p.write_text(data_text("case2.json"))
    r = subprocess.run([_sys.executable, "-m", "cpasynth", "mesh", "--problem", str(p),
                        "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "simplexes" in r.stdout
