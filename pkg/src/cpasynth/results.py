"""Result-file documents: the certified tuple, its mesh, history and source problem."""

import json
from dataclasses import dataclass
from typing import List, Optional

from .cpa import sublevel
from .errors import ProblemError
from .mesh import mesh_from_dict
from .model import system_from_dict, system_to_dict
from .synth import IterRecord, SynthState


def result_to_dict(result, sys, opts=None):
    st = result.state
    return {
        "a": st.a,
        "b1": st.b1,
        "b2": st.b2,
        "r": result.roa_level,
        "vertices": st.mesh.vertices.tolist(),
        "V": st.V.tolist(),
        "U": st.U.tolist(),
        "mesh": st.mesh.to_dict(),
        "history": [h.to_dict() for h in result.history],
        "termination": result.termination_reason,
        "refinement": result.outer,
        "problem": system_to_dict(sys, opts),
    }


def dumps_result(result, sys, opts=None):
    # repr-exact floats and a fixed key order keep identical runs byte-identical
    return json.dumps(result_to_dict(result, sys, opts), indent=1) + "\n"


@dataclass
class LoadedResult:
    sys: object
    opts: object
    state: SynthState
    level: Optional[float]
    history: List[IterRecord]
    termination: str

    @property
    def region(self):
        if self.level is None:
            return None
        return sublevel(self.state.mesh, self.state.V, self.level)


def load_result(text):
    """Rebuild a result document; the mesh is taken from its ``mesh`` entry."""
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemError(exc.msg, f"line {exc.lineno} col {exc.colno}") from exc
    for key in ("a", "b1", "b2", "V", "U", "mesh", "problem"):
        if key not in d:
            raise ProblemError("missing field", key)
    sys, opts = system_from_dict(d["problem"])
    T = mesh_from_dict(d["mesh"])
    st = SynthState(T, d["V"], d["U"], float(d["a"]), float(d["b1"]), float(d["b2"]))
    hist = [IterRecord(**h) for h in d.get("history", [])]
    return LoadedResult(sys, opts, st, d.get("r"), hist, d.get("termination", ""))


def load_result_file(path):
    with open(path) as fh:
        return load_result(fh.read())
