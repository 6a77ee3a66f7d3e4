"""Problem files (JSON), report documents and their round trips.

A problem file looks like::

    {
      "masses": [1, 1], "dim": 2, "regime": "hyperbolic",
      "a": [[1, 0], [-1, 0]], "x0": [[1, 0], [-1, 0]],
      "grid": {"T_max": 1e4, "nodes": 512, "grading": "powerlaw"},
      "solver": {"grad_tol": 1e-8, "multistart": 4},
      "cc": {"seeds": 32, "rng_seed": 0},
      "verification": {"ode_window": [2, 100]}
    }

``a`` is omitted for parabolic problems; ``x0_shift`` (offset from
``r0(1)``) may replace ``x0``.  Units: G = 1.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .central import Regime, make_reference
from .core import MassSystem
from .errors import ExpansiveError, SpecError
from .minimize import SolveConfig
from .paths import DiscretePath, TimeGrid, read_table, write_table
from .verify import DEFAULT_CHECKS

_TOP = {"masses", "dim", "regime", "a", "x0", "x0_shift", "tol_cluster",
        "grid", "solver", "cc", "verification"}
_GRID = {"T_max", "nodes", "grading", "param"}
_CC = {"seeds", "rng_seed"}


@dataclass
class ProblemSpec:
    masses: list
    dim: int
    regime: str | None
    a: list | None
    x0: list | None
    x0_shift: list | None
    tol_cluster: float
    grid: dict
    solver: SolveConfig
    cc: dict
    verification: dict

    def system(self):
        return MassSystem(self.masses, self.dim)

    def reference(self, threads=1):
        return make_reference(
            self.system(), self.a, self.x0, x0_shift=self.x0_shift,
            regime=self.regime, tol_cluster=self.tol_cluster,
            cc_seeds=self.cc["seeds"], cc_rng_seed=self.cc["rng_seed"],
            threads=threads)

    def time_grid(self):
        g = self.grid
        if g["grading"] == "geometric":
            return TimeGrid.geometric(g["T_max"], g["nodes"], g.get("param", 1.01))
        return TimeGrid.power_law(g["T_max"], g["nodes"], g.get("param", 1.0))

    def to_dict(self):
        out = {"masses": self.masses, "dim": self.dim, "regime": self.regime,
               "tol_cluster": self.tol_cluster, "grid": self.grid,
               "solver": {f.name: getattr(self.solver, f.name)
                          for f in fields(self.solver)},
               "cc": self.cc, "verification": self.verification}
        for key in ("a", "x0", "x0_shift"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out


def _number(val, where, positive=False, integer=False):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise SpecError("expected a number", where)
    if not math.isfinite(val):
        raise SpecError("must be finite", where)
    if integer and int(val) != val:
        raise SpecError("expected an integer", where)
    if positive and not val > 0:
        raise SpecError("must be positive", where)
    return int(val) if integer else float(val)


def _matrix(val, n, d, where):
    if not isinstance(val, list) or len(val) != n:
        raise SpecError(f"expected {n} rows", where)
    out = []
    for i, row in enumerate(val):
        if not isinstance(row, list) or len(row) != d:
            raise SpecError(f"expected {d} numbers", f"{where}[{i}]")
        out.append([_number(x, f"{where}[{i}][{k}]") for k, x in enumerate(row)])
    return out


def _unknown(keys, allowed, where):
    extra = sorted(set(keys) - allowed)
    if extra:
        raise SpecError(f"unknown key {extra[0]!r}", where or "problem")


def parse_spec(text, source="<spec>"):
    """Parse and validate a problem document; raises :class:`SpecError`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{exc.msg} at line {exc.lineno} column {exc.colno}",
                        source) from None
    if not isinstance(doc, dict):
        raise SpecError("top level must be an object", source)
    _unknown(doc, _TOP, "")
    if "masses" not in doc:
        raise SpecError("missing", "masses")
    masses = doc["masses"]
    if not isinstance(masses, list) or len(masses) < 2:
        raise SpecError("need a list of at least two masses", "masses")
    masses = [_number(m, f"masses[{i}]", positive=True) for i, m in enumerate(masses)]
    dim = _number(doc.get("dim", 2), "dim", integer=True)
    if dim < 2:
        raise SpecError("must be at least 2", "dim")
    n = len(masses)
    regime = doc.get("regime")
    if regime is not None:
        try:
            regime = Regime(regime).value
        except ValueError:
            raise SpecError(f"unknown regime {regime!r}", "regime") from None
    a = _matrix(doc["a"], n, dim, "a") if "a" in doc else None
    if a is None and regime not in (None, Regime.PARABOLIC.value):
        raise SpecError("required for this regime", "a")
    x0 = _matrix(doc["x0"], n, dim, "x0") if "x0" in doc else None
    shift = _matrix(doc["x0_shift"], n, dim, "x0_shift") if "x0_shift" in doc else None
    if x0 is not None and shift is not None:
        raise SpecError("give x0 or x0_shift, not both", "x0_shift")
    tol = _number(doc.get("tol_cluster", 1e-9), "tol_cluster", positive=True)

    g = doc.get("grid", {})
    if not isinstance(g, dict):
        raise SpecError("expected an object", "grid")
    _unknown(g, _GRID, "grid")
    grid = {"T_max": _number(g.get("T_max", 1e4), "grid.T_max", positive=True),
            "nodes": _number(g.get("nodes", 512), "grid.nodes", positive=True,
                             integer=True),
            "grading": g.get("grading", "powerlaw")}
    if grid["T_max"] < 10:
        raise SpecError("must be >= 10", "grid.T_max")
    if grid["grading"] not in ("powerlaw", "geometric"):
        raise SpecError("expected 'powerlaw' or 'geometric'", "grid.grading")
    if "param" in g:
        grid["param"] = _number(g["param"], "grid.param", positive=True)

    s = doc.get("solver", {})
    if not isinstance(s, dict):
        raise SpecError("expected an object", "solver")
    known = {f.name: f for f in fields(SolveConfig)}
    _unknown(s, set(known), "solver")
    kw = {}
    for key, val in s.items():
        default = known[key].default
        where = f"solver.{key}"
        if isinstance(default, bool):
            if not isinstance(val, bool):
                raise SpecError("expected true or false", where)
            kw[key] = val
        else:
            kw[key] = _number(val, where, integer=isinstance(default, int))
    try:
        solver = SolveConfig(**kw)
    except ValueError as exc:
        raise SpecError(str(exc), "solver") from None

    c = doc.get("cc", {})
    if not isinstance(c, dict):
        raise SpecError("expected an object", "cc")
    _unknown(c, _CC, "cc")
    cc = {"seeds": _number(c.get("seeds", 32), "cc.seeds", positive=True, integer=True),
          "rng_seed": _number(c.get("rng_seed", 0), "cc.rng_seed", integer=True)}

    v = doc.get("verification", {})
    if not isinstance(v, dict):
        raise SpecError("expected an object", "verification")
    _unknown(v, set(DEFAULT_CHECKS), "verification")
    ver = copy.deepcopy(DEFAULT_CHECKS)
    ver.update(v)
    unknown = sorted(set(ver["enabled"]) - set(DEFAULT_CHECKS["enabled"]))
    if unknown:
        raise SpecError(f"unknown check {unknown[0]!r}", "verification.enabled")
    return ProblemSpec(masses, dim, regime, a, x0, shift, tol, grid, solver, cc, ver)


def load_spec(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecError(exc.strerror or str(exc), str(path)) from None
    return parse_spec(text, str(path))


def set_field(doc, dotted, value):
    """Assign ``value`` at a dotted key path inside a nested dict."""
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise SpecError("not an object", dotted)
    node[keys[-1]] = value


# -- documents --------------------------------------------------------------

def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(doc):
    """Deterministic JSON (sorted keys, shortest round-trip floats)."""
    return json.dumps(_plain(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_path(fh, ref, path):
    from .motion import positions
    write_table(fh, path.grid.nodes, positions(ref, path))


def read_trajectory(fh, ref):
    """Read a trajectory table back into a perturbation path."""
    t, x, _ = read_table(fh, ref.system.dim)
    if x.shape[1] != ref.system.n:
        raise ValueError(f"table has {x.shape[1]} bodies, problem has {ref.system.n}")
    grid = TimeGrid(t)
    phi = x - ref.r0(t) - ref.x0_shift.coords
    return DiscretePath(grid, phi, ref.system)


def write_trace(fh, trace):
    fh.write("iteration,action,grad_norm,step,hardy_ok\n")
    for r in trace:
        fh.write(f"{r.iteration},{r.action!r},{r.grad_norm!r},{r.step!r},"
                 f"{int(r.hardy_ok)}\n")


__all__ = ["ProblemSpec", "parse_spec", "load_spec", "dumps", "set_field",
           "write_path", "read_trajectory", "write_trace", "ExpansiveError"]
