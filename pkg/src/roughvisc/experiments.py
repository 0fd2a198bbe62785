"""Configuration-driven experiments: schema, presets, runners and the manifest."""
from __future__ import annotations

import copy
import csv
import json
import os
import platform
from dataclasses import dataclass, field

import jsonschema
import numpy as np
import scipy

from . import __version__
from .controlled import WeakControlled, _SpatialDerivatives, rough_integral, strong_as_integral_check, \
    taylor_box_remainder
from .flow import FlowExitError, NewtonFailure, exponential_jacobian, solve_flow, solve_points
from .increments import TimeGrid, fit_log2_slope
from .oracles import box_shrink_slope, direct_transport_scheme, quadrature
from .registry import RegistryError, make_hamiltonian, make_initial, make_noise_family, make_vector_fields
from .rough_path import check_chen, check_geometric, synth_driver
from .semilinear import MonotonicityError, SemilinearProblem, scalar_vector_field, solve_semilinear
from .spatial import DomainError, SpaceGrid, embed_index
from .transport import CFLError, HJSolution, NumericalAbort, TransportProblem, solve_deterministic, \
    solve_transport
from .viscosity import default_test_family, make_test_transport, viscosity_verify

KINDS = ("lift", "flow", "transport", "semilinear", "verify", "convergence")
STUDIES = ("rough_integral", "flow", "flow_inverse", "flow_integral", "taylor")
POW2 = [2 ** k for k in range(1, 17)]
NUMERICAL_ERRORS = (DomainError, FlowExitError, NewtonFailure, NumericalAbort, CFLError, MonotonicityError,
                    FloatingPointError, np.linalg.LinAlgError)


class ConfigError(ValueError):
    pass


_named = {"oneOf": [{"type": "string"}, {"type": "object", "required": ["name"]}]}
_cells = {"oneOf": [{"enum": POW2}, {"type": "array", "items": {"enum": POW2}, "minItems": 1, "maxItems": 4}]}
_bound = {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}, "minItems": 1}]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["kind", "driver"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": list(KINDS)},
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "driver": {
            "type": "object",
            "required": ["kind", "n"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["sinusoid", "brownian_pl", "weierstrass_pl", "linear"]},
                "dim": {"type": "integer", "minimum": 1, "maximum": 4},
                "n": {"enum": POW2[:14]},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "gamma": {"type": "number", "exclusiveMinimum": 0.3333333333333333, "maximum": 1},
                "scale": {"type": "number"},
                "hurst": {"type": "number"},
                "velocity": {"type": "array", "items": {"type": "number"}},
            },
        },
        "space": {
            "type": "object",
            "required": ["lower", "upper", "cells"],
            "additionalProperties": False,
            "properties": {"lower": _bound, "upper": _bound, "cells": _cells},
        },
        "problem": {
            "type": "object",
            "properties": {
                "F": _named, "A": _named, "H": _named, "alpha": _named,
                "v_cells": {"enum": POW2},
                "cfl": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "solution": {"enum": ["pipeline", "closed_form"]},
                "fault": {"type": "object", "properties": {"amp": {"type": "number"}, "width": {"type": "number"}}},
                "expect": {"enum": ["pass", "violations"]},
                "study": {"enum": list(STUDIES)},
                "levels": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 14}, "minItems": 2},
                "radii": {"type": "array", "items": {"type": "integer", "minimum": 0, "maximum": 20}, "minItems": 2},
            },
        },
        "tolerances": {"type": "object", "additionalProperties": {"type": "number"}},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"stride": {"type": "integer", "minimum": 1}},
        },
    },
}

DEFAULT_TOLERANCES = {
    "chen": 1e-12,
    "geometric": 1e-12,
    "inverse_residual": 1e-3,
    "jacobian_routes": 1e-3,
    "closed_form_flow": 1e-6,
    "characteristics": 1e-2,
    "direct_scheme": 5e-2,
    "pointwise_flow": 1e-8,
    "exponential_closed_form": 1e-6,
    "viscosity": 1e-2,
    "slope_min": 1.0,
    "slope_max": float("inf"),
}


def _driver(n, kind="brownian_pl", dim=1, **kw):
    return {"kind": kind, "n": n, "dim": dim, **kw}


def _space(lo, hi, cells):
    return {"lower": lo, "upper": hi, "cells": cells}


PRESETS = {
    "lift-linear": {"kind": "lift", "driver": _driver(64, "linear", 2, velocity=[1.0, -0.5])},
    "lift-brownian": {"kind": "lift", "seed": 7, "driver": _driver(1024, "brownian_pl", 3)},
    "flow-linear": {
        "kind": "flow", "driver": _driver(1024, "sinusoid", scale=0.3), "space": _space(-1, 1, 32),
        "problem": {"A": {"name": "linear", "a": 1.0}},
    },
    "flow-sine-brownian": {
        "kind": "flow", "seed": 3, "driver": _driver(512, scale=0.5), "space": _space(-1, 1, 32),
        "problem": {"A": {"name": "sine", "amp": 0.5}},
    },
    "transport-const": {
        "kind": "transport", "seed": 1, "driver": _driver(256, scale=0.5), "space": _space(-2, 2, 512),
        "problem": {"F": "zero", "A": {"name": "const", "c": 0.7}, "alpha": {"name": "gaussian", "width": 0.3}},
    },
    "transport-smooth": {
        "kind": "transport", "driver": _driver(256, "sinusoid", scale=0.5), "space": _space(-2, 2, 256),
        "problem": {"F": {"name": "abs_grad", "c": -1.0}, "A": {"name": "sine", "amp": 0.8},
                    "alpha": {"name": "gaussian", "width": 0.4}},
        "output": {"stride": 8},
    },
    "transport-zero": {
        "kind": "transport", "seed": 2, "driver": _driver(128), "space": _space(-2, 2, 128),
        "problem": {"F": {"name": "abs_grad", "c": -1.0}, "A": "zero", "alpha": "neg_abs"},
    },
    "semilinear-linear": {
        "kind": "semilinear", "driver": _driver(4096, "sinusoid", scale=0.5), "space": _space(-2, 2, 64),
        "problem": {"F": "zero", "H": {"name": "linear", "a": 1.0}, "alpha": {"name": "gaussian", "width": 0.4}},
        "output": {"stride": 64},
    },
    "semilinear-tanh": {
        "kind": "semilinear", "seed": 5, "driver": _driver(512, scale=0.5), "space": _space(-2, 2, 64),
        "problem": {"F": {"name": "abs_grad", "c": -1.0}, "H": {"name": "tanh", "a": 0.8},
                    "alpha": {"name": "gaussian", "width": 0.4}},
        "output": {"stride": 8},
    },
    "verify-transport": {
        "kind": "verify", "seed": 1, "driver": _driver(256, scale=0.5), "space": _space(-2, 2, 256),
        "problem": {"F": "zero", "A": {"name": "const", "c": 0.7}, "alpha": {"name": "gaussian", "width": 0.3},
                    "solution": "closed_form"},
        "output": {"stride": 8},
    },
    "verify-fault": {
        "kind": "verify", "driver": _driver(128), "space": _space(-2, 2, 128),
        "problem": {"F": "zero", "A": "zero", "alpha": {"name": "gaussian", "width": 0.3},
                    "solution": "closed_form", "fault": {"amp": 1.0, "width": 0.2}, "expect": "violations"},
        "output": {"stride": 8},
    },
    "convergence-integral": {
        "kind": "convergence", "driver": _driver(64, "sinusoid", T=0.75, scale=0.8),
        "problem": {"study": "rough_integral", "levels": [6, 7, 8, 9, 10]},
    },
    "convergence-flow": {
        "kind": "convergence", "driver": _driver(256, "sinusoid", scale=0.3), "space": _space(-1, 1, 16),
        "problem": {"study": "flow", "A": {"name": "linear", "a": 1.0}, "levels": [8, 9, 10, 11, 12]},
        "tolerances": {"slope_min": 0.8, "slope_max": 2.2},
    },
    "convergence-inverse": {
        "kind": "convergence", "seed": 4, "driver": _driver(256, scale=0.5), "space": _space(-1, 1, 16),
        "problem": {"study": "flow_inverse", "A": {"name": "sine", "amp": 0.5}, "levels": [4, 5, 6, 7]},
    },
    "convergence-taylor": {
        "kind": "convergence", "seed": 2, "driver": _driver(1024, scale=0.5), "space": _space(-1, 1, 64),
        "problem": {"study": "taylor", "A": {"name": "sine", "amp": 0.5}, "levels": [2, 3, 4, 5, 6]},
    },
}


# -- configuration ------------------------------------------------------------------

def resolve_config(arg: str) -> dict:
    """``preset:<name>``, inline JSON (starting with ``{``) or a path to a JSON file."""
    if arg.startswith("preset:"):
        name = arg.split(":", 1)[1]
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
        cfg = copy.deepcopy(PRESETS[name])
        cfg.setdefault("name", name)
        return cfg
    if arg.lstrip().startswith("{"):
        try:
            return json.loads(arg)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"inline config is not valid JSON: {exc}") from exc
    try:
        with open(arg, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc


def validate_config(cfg: dict) -> None:
    """Schema validation plus semantic checks (registry names, required blocks)."""
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        msg = exc.message
        if {"cells", "n", "v_cells"} & {str(p) for p in exc.absolute_path}:
            msg += " (resolutions must be powers of two)"
        raise ConfigError(f"schema error at {path}: {msg}") from exc
    kind = cfg["kind"]
    prob = cfg.get("problem", {})
    need_space = kind in ("flow", "transport", "semilinear", "verify") or prob.get("study") in (
        "flow", "flow_inverse", "flow_integral", "taylor")
    if need_space and "space" not in cfg:
        raise ConfigError(f"kind {kind!r} needs a 'space' block")
    required = {
        "flow": ("A",), "transport": ("F", "A", "alpha"), "semilinear": ("F", "H", "alpha"),
        "verify": ("F", "A", "alpha"), "convergence": ("study",),
    }.get(kind, ())
    for key in required:
        if key not in prob:
            raise ConfigError(f"kind {kind!r} needs problem.{key}")
    if kind == "convergence" and prob["study"] in ("flow", "flow_inverse", "flow_integral", "taylor") \
            and "A" not in prob:
        raise ConfigError("this convergence study needs problem.A")
    extra = set(cfg.get("tolerances", {})) - set(DEFAULT_TOLERANCES)
    if extra:
        raise ConfigError(f"unknown tolerance keys {sorted(extra)}")
    try:
        _build(cfg, resolve_only=True)
    except (RegistryError, TypeError, ValueError) as exc:
        raise ConfigError(f"problem description does not resolve: {exc}") from exc


# -- building blocks -------------------------------------------------------------------

def _make_space(spec) -> SpaceGrid:
    lo = np.atleast_1d(np.asarray(spec["lower"], dtype=float))
    hi = np.atleast_1d(np.asarray(spec["upper"], dtype=float))
    cells = np.atleast_1d(np.asarray(spec["cells"], dtype=int))
    m = max(lo.size, hi.size, cells.size)
    return SpaceGrid(tuple(np.broadcast_to(lo, m)), tuple(np.broadcast_to(hi, m)), tuple(np.broadcast_to(cells, m)))


def _make_driver(spec, seed: int, n: int | None = None):
    n = spec["n"] if n is None else n
    grid = TimeGrid(0.0, float(spec.get("T", 1.0)), n)
    kw = {k: spec[k] for k in ("gamma", "scale", "hurst") if k in spec}
    if "velocity" in spec:
        kw["velocity"] = np.asarray(spec["velocity"], dtype=float)
    return synth_driver(spec["kind"], int(spec.get("dim", 1)), grid, seed, **kw)


@dataclass
class _Built:
    space: SpaceGrid | None = None
    F: object = None
    A: object = None
    H: object = None
    alpha: object = None


def _build(cfg: dict, resolve_only: bool = False) -> _Built:
    prob = cfg.get("problem", {})
    d = int(cfg["driver"].get("dim", 1))
    b = _Built()
    if "space" in cfg:
        b.space = _make_space(cfg["space"])
    m = b.space.m if b.space is not None else 1
    if "F" in prob:
        b.F = make_hamiltonian(prob["F"])
    if "A" in prob:
        b.A = make_vector_fields(prob["A"], m, d)
    if "H" in prob:
        b.H = make_noise_family(prob["H"], d)
    if "alpha" in prob:
        b.alpha = make_initial(prob["alpha"])
    return b


# -- manifest ---------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    value: float
    tolerance: object
    relation: str
    oracle: str
    passed: bool

    def to_dict(self):
        return dict(self.__dict__)


def _check(name, value, tol, oracle, relation="<=") -> Check:
    value = float(value)
    if relation == "<=":
        ok = value <= tol
    elif relation == ">=":
        ok = value >= tol
    elif relation == ">":
        ok = value > tol
    elif relation == "in":
        ok = tol[0] <= value <= tol[1]
    elif relation == "==":
        ok = value == tol
    else:
        raise ValueError(relation)
    return Check(name, value, tol if relation != "in" else list(tol), relation, oracle, bool(ok and np.isfinite(value)))


@dataclass
class Manifest:
    config: dict
    seed: int
    threads: int | None
    checks: list = field(default_factory=list)
    files: list = field(default_factory=list)
    measured: dict = field(default_factory=dict)
    status: str = "pass"
    error: str | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks) and self.error is None

    def to_dict(self) -> dict:
        return {
            "format": "roughvisc.manifest",
            "versions": {"roughvisc": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "config": self.config,
            "seed": self.seed,
            "threads": self.threads,
            "checks": [c.to_dict() for c in self.checks],
            "measured": self.measured,
            "files": sorted(self.files),
            "status": self.status,
            "error": self.error,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else f"{v:.17g}" for v in r])


# -- runners ----------------------------------------------------------------------------------

def run_experiment(cfg: dict, out_dir, *, seed: int | None = None, threads: int | None = None) -> Manifest:
    """Run one validated configuration; artifacts are written to ``out_dir``."""
    cfg = copy.deepcopy(cfg)
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    cfg["seed"] = seed
    os.makedirs(out_dir, exist_ok=True)
    man = Manifest(cfg, seed, threads)
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(cfg.get("tolerances", {}))
    runner = {
        "lift": _run_lift, "flow": _run_flow, "transport": _run_transport, "semilinear": _run_semilinear,
        "verify": _run_verify, "convergence": _run_convergence,
    }[cfg["kind"]]
    try:
        with np.errstate(over="raise", invalid="raise", divide="ignore"):
            runner(cfg, seed, tol, out_dir, man)
    except NUMERICAL_ERRORS as exc:
        man.status = "abort"
        man.error = f"{type(exc).__name__}: {exc}"
    else:
        man.status = "pass" if man.passed else "fail"
    man.save(os.path.join(out_dir, "manifest.json"))
    return man


def _stride(cfg) -> int:
    return int(cfg.get("output", {}).get("stride", 1))


def _run_lift(cfg, seed, tol, out, man):
    rp = _make_driver(cfg["driver"], seed)
    rp.save_csv(os.path.join(out, "driver.csv"))
    man.files.append("driver.csv")
    n = rp.grid.n
    i = np.arange(n)
    x2 = rp.x2(i, i + 1).reshape(n, -1)
    d = rp.dim
    _write_rows(os.path.join(out, "area.csv"), ["i", "t"] + [f"x2_{a}{b}" for a in range(d) for b in range(d)],
                [(str(k), rp.grid.time(k), *x2[k]) for k in range(n)])
    man.files.append("area.csv")
    man.checks.append(_check("chen_violation", check_chen(rp), tol["chen"], "algebraic identity (Chen)"))
    man.checks.append(_check("geometric_violation", check_geometric(rp), tol["geometric"],
                             "symmetric part equals half dx dx"))
    man.measured["empirical_gamma"] = rp.empirical_gamma() if n >= 16 else None
    man.measured["declared_gamma"] = rp.gamma


def _run_flow(cfg, seed, tol, out, man):
    rp = _make_driver(cfg["driver"], seed)
    b = _build(cfg)
    fl = solve_flow(b.A, rp, b.space)
    fl.save_csv(os.path.join(out, "flow.csv"), stride=_stride(cfg))
    man.files.append("flow.csv")
    man.checks.append(_check("inverse_residual", fl.inverse_residual(), tol["inverse_residual"],
                             "self-residual sup|zeta(phi(theta)) - theta|"))
    man.measured["padding_cells"] = (fl.space.cells[0] - b.space.cells[0]) // 2
    man.measured["newton_iterations"] = fl.newton_iterations
    if b.space.m == 1:
        idx = embed_index(b.space, fl.space)
        J_exp = exponential_jacobian(b.A, rp, fl.phi.z[:, idx])
        gap = float(np.max(np.abs(J_exp - fl.dphi[:, idx, 0, 0]) / np.abs(J_exp)))
        man.checks.append(_check("jacobian_routes", gap, tol["jacobian_routes"],
                                 "variational recursion vs exponential formula"))
    spec = cfg["problem"]["A"]
    if isinstance(spec, dict) and spec.get("name") == "linear" and "M" not in spec and "b" not in spec \
            and b.space.m == 1 and rp.dim == 1:
        a = float(np.asarray(spec.get("a", 1.0)).ravel()[0])
        dx = rp.x.values[:, 0] - rp.x.values[0, 0]
        p = b.space.points[:, 0]
        idx = embed_index(b.space, fl.space)
        exact = p[None, :] * np.exp(a * dx)[:, None]
        err = float(np.max(np.abs(fl.phi.z[:, idx, 0] - exact)))
        man.checks.append(_check("closed_form_error", err, tol["closed_form_flow"],
                                 "closed form theta exp(a dx)"))


def _run_transport(cfg, seed, tol, out, man):
    rp = _make_driver(cfg["driver"], seed)
    b = _build(cfg)
    cfl = cfg.get("problem", {}).get("cfl", 0.9)
    prob = TransportProblem(b.F, b.A, b.alpha, rp, b.space, cfl)
    res = solve_transport(prob)
    res.u.save_csv(os.path.join(out, "u.csv"), stride=_stride(cfg))
    man.files.append("u.csv")
    diag = res.diagnostics
    man.measured.update({k: diag[k] for k in ("cfl_number", "dt", "substeps", "extension_used", "inverse_residual")})
    man.checks.append(_check("cfl_number", diag["cfl_number"], diag["cfl_limit"], "recorded CFL bound"))
    man.checks.append(_check("stability_bounds", float(diag["stability_bounds_hold"]), 1.0,
                             "monotone-scheme max/min bounds", "=="))
    sp = b.space
    pts = sp.points
    if b.A.is_zero:
        ref = solve_deterministic(b.F, b.alpha, sp, rp.grid, cfl)
        man.checks.append(_check("degeneration_bitwise", float(np.array_equal(ref.values, res.u.values)), 1.0,
                                 "deterministic solve (A = 0)", "=="))
    elif b.F.is_zero and b.A.name == "const" and sp.m == 1 and rp.dim == 1:
        c = float(b.A.field(pts[:1])[0, 0, 0])
        dx = rp.x.values[:, 0] - rp.x.values[0, 0]
        ex = np.stack([b.alpha(pts - c * dx[k]) for k in range(rp.grid.n + 1)])
        man.checks.append(_check("characteristics_error", np.max(np.abs(res.u.values - ex)), tol["characteristics"],
                                 "method of characteristics alpha(theta - c dx)"))
    elif cfg["driver"]["kind"] == "sinusoid" and sp.m == 1:
        scale = float(cfg["driver"].get("scale", 1.0))
        ks = np.arange(1, rp.dim + 1)
        xdot = lambda t: scale * 2 * np.pi * np.cos(2 * np.pi * ks * t)
        ref = direct_transport_scheme(b.F, lambda th: b.A.field(th)[:, 0, :], xdot, b.alpha, sp, rp.grid.points,
                                      lip_p=b.F.lip_p)
        man.checks.append(_check("direct_scheme_error", np.max(np.abs(res.u.values - ref)), tol["direct_scheme"],
                                 "direct monotone scheme on the classical-coefficient equation"))


def _run_semilinear(cfg, seed, tol, out, man):
    rp = _make_driver(cfg["driver"], seed)
    b = _build(cfg)
    prob = cfg["problem"]
    sprob = SemilinearProblem(b.F, b.H, b.alpha, rp, b.space, v_cells=prob.get("v_cells", 256),
                              cfl=prob.get("cfl", 0.9))
    res = solve_semilinear(sprob)
    res.u.save_csv(os.path.join(out, "u.csv"), stride=_stride(cfg))
    man.files.append("u.csv")
    diag = res.diagnostics
    man.measured.update({k: diag[k] for k in ("cfl_number", "dt", "substeps")})
    if res.sflow is None:
        return
    man.measured["v_range"] = diag["v_range"]
    man.checks.append(_check("min_dv_phi", diag["min_dv_phi"], 0.0, "strict monotonicity of the scalar flow", ">"))
    man.checks.append(_check("jacobian_routes", diag["jacobian_route_gap"], tol["jacobian_routes"],
                             "variational recursion vs exponential formula"))
    a0 = b.alpha(b.space.points)
    if b.F.is_zero:
        phi, _ = solve_points(scalar_vector_field(b.H), rp, a0[:, None], jacobian=False)
        man.checks.append(_check("pointwise_flow_error", np.max(np.abs(res.u.values - phi[:, :, 0])),
                                 tol["pointwise_flow"], "scalar flow evaluated at alpha(theta)"))
        if b.H.name == "linear" and rp.dim == 1 and b.H.params["a"] == [1.0] and b.H.params["b"] == [0.0]:
            dx = rp.x.values[:, 0] - rp.x.values[0, 0]
            ex = a0[None, :] * np.exp(dx)[:, None]
            man.checks.append(_check("closed_form_error", np.max(np.abs(res.u.values - ex)),
                                     tol["exponential_closed_form"], "closed form alpha exp(dx)"))


def _run_verify(cfg, seed, tol, out, man):
    rp = _make_driver(cfg["driver"], seed)
    b = _build(cfg)
    prob = cfg["problem"]
    sp = b.space
    pts = sp.points
    fl = solve_flow(b.A, rp, sp)
    if prob.get("solution", "pipeline") == "closed_form":
        if not (b.F.is_zero and b.A.name in ("const", "zero") and sp.m == 1 and rp.dim == 1):
            raise ConfigError("closed_form solutions need F = zero and constant or zero A in one dimension")
        c = 0.0 if b.A.is_zero else float(b.A.field(pts[:1])[0, 0, 0])
        dx = rp.x.values[:, 0] - rp.x.values[0, 0]
        vals = np.stack([b.alpha(pts - c * dx[k]) for k in range(rp.grid.n + 1)])
        u = HJSolution(sp, rp.grid.points, vals)
    else:
        u = solve_transport(TransportProblem(b.F, b.A, b.alpha, rp, sp), flow=fl).u
    fault = prob.get("fault")
    if fault:
        w = float(fault.get("width", 0.2))
        bump = float(fault.get("amp", 1.0)) * np.exp(-np.sum(pts ** 2, axis=1) / (2 * w * w))
        u = HJSolution(sp, u.times, u.values + (u.times - u.times[0])[:, None] * bump[None, :])
    fam = [make_test_transport(c, fl) for c in default_test_family(sp)]
    rep = viscosity_verify(u, b.F, fam, tol=tol["viscosity"], alpha=b.alpha)
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(rep), fh, indent=2, sort_keys=True)
        fh.write("\n")
    man.files.append("report.json")
    u.save_csv(os.path.join(out, "u.csv"), stride=_stride(cfg))
    man.files.append("u.csv")
    man.measured.update({k: rep[k] for k in ("n_maxima", "n_minima", "n_checked", "window_radius", "time_lag")})
    if prob.get("expect", "pass") == "pass":
        man.checks.append(_check("violations", rep["n_violations"], 0, "viscosity test family (20 defaults)", "=="))
    else:
        man.checks.append(_check("violations", rep["n_violations"], 1, "fault injection must be reported", ">="))


# -- convergence studies -------------------------------------------------------------------

def convergence_table(res, err):
    res, err = np.asarray(res, float), np.asarray(err, float)
    order = [float("nan")] + [float(np.log2(err[i - 1] / err[i]) / np.log2(res[i] / res[i - 1]))
                              if err[i] > 0 and err[i - 1] > 0 else float("nan") for i in range(1, len(res))]
    return list(zip(res, err, order))


def _study_rough_integral(cfg, seed, levels):
    spec = cfg["driver"]
    if spec["kind"] != "sinusoid" or spec.get("dim", 1) != 1:
        raise ConfigError("the rough_integral study uses a scalar sinusoid driver")
    scale = float(spec.get("scale", 1.0))
    T = float(spec.get("T", 1.0))
    exact = quadrature(lambda t: np.cos(scale * np.sin(2 * np.pi * t)) * scale * 2 * np.pi * np.cos(2 * np.pi * t),
                       0.0, T)
    res, err = [], []
    for k in levels:
        rp = _make_driver(spec, seed, n=2 ** k)
        x = rp.x.values
        w = WeakControlled(rp, np.cos(x), -np.sin(x)[:, :, None], min(rp.gamma, 0.5))
        val = rough_integral(w).z[-1]
        res.append(2 ** k)
        err.append(abs(float(val) - exact))
    return res, err, "quadrature of cos(x) dx along the smooth driver", -1.0


def _study_flow(cfg, seed, levels):
    spec = cfg["driver"]
    b = _build(cfg)
    a = float(np.asarray(cfg["problem"]["A"].get("a", 1.0)).ravel()[0])
    pts = b.space.points
    res, err = [], []
    for k in levels:
        rp = _make_driver(spec, seed, n=2 ** k)
        phi, _ = solve_points(b.A, rp, pts, jacobian=False)
        dx = rp.x.values[:, 0] - rp.x.values[0, 0]
        res.append(2 ** k)
        err.append(float(np.max(np.abs(phi[:, :, 0] - pts[None, :, 0] * np.exp(a * dx)[:, None]))))
    return res, err, "closed form theta exp(a dx)", -1.0


def _study_flow_inverse(cfg, seed, levels):
    rp = _make_driver(cfg["driver"], seed)
    base = _build(cfg)
    res, err = [], []
    for k in levels:
        sp = SpaceGrid(base.space.lower, base.space.upper, (2 ** k,) * base.space.m)
        fl = solve_flow(base.A, rp, sp)
        res.append(2 ** k)
        err.append(fl.inverse_residual())
    return res, err, "self-residual sup|zeta(phi(theta)) - theta| under spatial refinement", -1.0


def _study_flow_integral(cfg, seed, levels):
    rp = _make_driver(cfg["driver"], seed)
    b = _build(cfg)
    fl = solve_flow(b.A, rp, b.space)
    res, err = [], []
    for k in sorted(levels, reverse=True):
        stride = 2 ** k
        res.append(rp.grid.n // stride)
        err.append(strong_as_integral_check(fl.phi, stride=stride))
    return res, err, "compensated integral of the flow's own components on coarsened grids", -1.0


def _study_taylor(cfg, seed, levels):
    rp = _make_driver(cfg["driver"], seed)
    b = _build(cfg)
    fl = solve_flow(b.A, rp, b.space)
    chi = default_test_family(b.space)[-2]
    tf = make_test_transport(chi, fl)
    z = tf.psi
    cache = _SpatialDerivatives(z)
    s = rp.grid.n // 4
    theta = b.space.size // 2
    _, r, m = box_shrink_slope(lambda k: taylor_box_remainder(z, s, theta, 2.0 ** -k, cache=cache), levels)
    return list(r), list(m), "box-shrink regression of the space-time Taylor remainder", 1.0


def _run_convergence(cfg, seed, tol, out, man):
    prob = cfg["problem"]
    levels = prob.get("levels", [6, 7, 8, 9, 10])
    study = prob["study"]
    fn = {"rough_integral": _study_rough_integral, "flow": _study_flow, "flow_inverse": _study_flow_inverse,
          "flow_integral": _study_flow_integral, "taylor": _study_taylor}[study]
    res, err, oracle, sign = fn(cfg, seed, levels)
    table = convergence_table(res, err)
    _write_rows(os.path.join(out, "convergence.csv"), ["resolution", "error", "order"], table)
    man.files.append("convergence.csv")
    # errors fall with resolution (sign -1) or with the box radius (sign +1)
    slope = sign * fit_log2_slope(res, err)
    man.measured["slope"] = slope
    man.measured["study"] = study
    lo, hi = tol["slope_min"], tol["slope_max"]
    if study == "taylor":
        man.checks.append(_check("slope", slope, lo, oracle, ">"))
    elif np.isfinite(hi):
        man.checks.append(_check("slope", slope, (lo, hi), oracle, "in"))
    else:
        man.checks.append(_check("slope", slope, lo, oracle, ">="))
    if study == "flow_inverse":
        man.checks.append(_check("finest_inverse_residual", err[-1], tol["inverse_residual"], oracle))
