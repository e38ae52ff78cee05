"""YAML scenario configs: schema, loading and export.

A config mirrors :class:`~eqsadj.scenarios.Scenario` section by section::

    schema_version: 1
    name: layered_resistor
    mesh: {builder: layered_rect, params: {width: 0.01, ...}}   # or {path: mesh.txt}
    materials: {1: {kind: linear, sigma: 10, eps: 40}, ...}
    excitation: {top_electrode: {type: sinusoid, amplitude: 1, frequency: 50}, ...}
    initial: zero                                               # or dc
    time: {T: 0.02, n_main: 800, refine_ratio: 1.0e-8, sweep: [100, 200]}
    qois: [{name: phi_ref, kind: pointwise_potential, point: [0, 0.005], t_ref: 0.005}]
    parameters: [{name: eps1, region: 1, selector: eps}]
    run: {newton_tol: 1.0e-10, fd_h_rel: 1.0e-3, tolerance: 0.01, oracle: analytic}

Unknown keys anywhere are rejected before anything is built. Relative mesh
paths resolve against the config file's directory.
"""
from __future__ import annotations

import hashlib
import re
from pathlib import Path

import jsonschema
import yaml

from .forward import excitation_from_dict
from .materials import material_from_dict, material_to_dict
from .qoi import qoi_from_dict, qoi_to_dict
from .scenarios import RunOptions, Scenario, TimeSpec, Trace
from .sensitivity import Parameter

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


_NUM = {"anyOf": [{"type": "number"}, {"type": "string", "pattern": r"^[-+]?[0-9.]+([eE][-+]?[0-9]+)?$"}]}
_INT = {"type": "integer", "minimum": 1}
_POINT = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_EXCITATION = {"oneOf": [
    _obj({"type": {"const": "dc"}, "value": _NUM}, ["type", "value"]),
    _obj({"type": {"const": "sinusoid"}, "amplitude": _NUM, "frequency": _NUM},
         ["type", "amplitude", "frequency"]),
    _obj({"type": {"const": "impulse"}, "peak": _NUM, "tau1": _NUM, "tau2": _NUM, "dc": _NUM},
         ["type", "peak", "tau1", "tau2"]),
]}

_MATERIAL = {"oneOf": [
    _obj({"kind": {"const": "linear"}, "sigma": _NUM, "eps": _NUM}, ["kind", "sigma", "eps"]),
    _obj({"kind": {"const": "fgm"}, "a1": _NUM, "a2": _NUM, "a3": _NUM, "a4": _NUM, "eps": _NUM},
         ["kind", "a1", "a2", "a3", "a4", "eps"]),
]}

_QOI = {"oneOf": [
    _obj({"name": {"type": "string"}, "kind": {"const": "energy_integral"},
          "window": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
          "regions": {"type": "array", "items": {"type": "integer"}}},
         ["name", "kind", "window"]),
    _obj({"name": {"type": "string"},
          "kind": {"enum": ["pointwise_potential", "pointwise_field_magnitude"]},
          "point": _POINT, "t_ref": _NUM},
         ["name", "kind", "point", "t_ref"]),
]}

SCHEMA = _obj({
    "schema_version": {"const": SCHEMA_VERSION},
    "name": {"type": "string"},
    "mesh": {"oneOf": [
        _obj({"builder": {"type": "string"}, "params": {"type": "object"}}, ["builder"]),
        _obj({"path": {"type": "string"}}, ["path"]),
    ]},
    "materials": {"type": "object", "minProperties": 1,
                  "patternProperties": {r"^[0-9]+$": _MATERIAL}, "additionalProperties": False},
    "excitation": {"type": "object", "additionalProperties": _EXCITATION},
    "initial": {"enum": ["zero", "dc"]},
    "time": _obj({"T": _NUM, "n_main": _INT, "refine_ratio": _NUM,
                  "sweep": {"type": "array", "items": _INT}}, ["T", "n_main"]),
    "qois": {"type": "array", "items": _QOI},
    "parameters": {"type": "array", "items": _obj(
        {"name": {"type": "string"}, "region": {"type": "integer"}, "selector": {"type": "string"}},
        ["name", "region", "selector"])},
    "run": _obj({"newton_tol": _NUM, "max_newton": _INT, "fd_h_rel": _NUM, "tolerance": _NUM,
                 "oracle": {"enum": ["fd", "analytic"]},
                 "traces": {"type": "array", "items": _obj(
                     {"name": {"type": "string", "pattern": r"^[A-Za-z0-9_.-]+$"}, "point": _POINT},
                     ["name", "point"])}}),
}, ["schema_version", "mesh", "materials", "excitation", "time", "qois", "parameters"])


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e-10`` (no decimal point) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"))


def _describe(err: jsonschema.ValidationError) -> str:
    # oneOf failures are more helpful when reported through the closest branch
    best = jsonschema.exceptions.best_match([err] + list(err.context or []))
    where = "/".join(str(p) for p in best.absolute_path) or "<root>"
    return f"{where}: {best.message}"


def validate(doc) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    doc = dict(doc)
    if isinstance(doc.get("materials"), dict):
        doc["materials"] = {str(k): v for k, v in doc["materials"].items()}
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ConfigError(_describe(errors[0]))
    return doc


def _float(x):
    return float(x)


def scenario_from_config(doc, base_dir: str | Path = ".") -> Scenario:
    """Validated config mapping -> :class:`Scenario`."""
    doc = validate(doc)
    mesh = dict(doc["mesh"])
    if "path" in mesh:
        p = Path(mesh["path"])
        mesh["path"] = str(p if p.is_absolute() else Path(base_dir) / p)
    t = doc["time"]
    run = doc.get("run", {})
    try:
        return Scenario(
            name=doc.get("name", "scenario"),
            mesh=mesh,
            materials={int(k): material_from_dict(v) for k, v in doc["materials"].items()},
            excitation={k: excitation_from_dict(v) for k, v in doc["excitation"].items()},
            time=TimeSpec(_float(t["T"]), int(t["n_main"]), _float(t.get("refine_ratio", 1e-8)),
                          tuple(int(n) for n in t.get("sweep", ()))),
            qois=[qoi_from_dict(q) for q in doc["qois"]],
            parameters=[Parameter(p["name"], int(p["region"]), p["selector"]) for p in doc["parameters"]],
            initial=doc.get("initial", "zero"),
            run=RunOptions(
                newton_tol=_float(run.get("newton_tol", 1e-10)),
                max_newton=int(run.get("max_newton", 25)),
                fd_h_rel=_float(run.get("fd_h_rel", 1e-3)),
                tolerance=_float(run.get("tolerance", 0.01)),
                oracle=run.get("oracle", "fd"),
                traces=tuple(Trace(tr["name"], tuple(_float(v) for v in tr["point"]))
                             for tr in run.get("traces", ())),
            ),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def scenario_to_config(sc: Scenario) -> dict:
    mesh = {"path": sc.mesh["path"]} if "path" in sc.mesh else {
        "builder": sc.mesh["builder"], "params": dict(sc.mesh.get("params", {}))}
    return {
        "schema_version": SCHEMA_VERSION,
        "name": sc.name,
        "mesh": mesh,
        "materials": {r: material_to_dict(m) for r, m in sorted(sc.materials.items())},
        "excitation": {k: v.to_dict() for k, v in sc.excitation.items()},
        "initial": sc.initial,
        "time": {"T": sc.time.T, "n_main": sc.time.n_main, "refine_ratio": sc.time.refine_ratio,
                 "sweep": list(sc.time.sweep)},
        "qois": [qoi_to_dict(q) for q in sc.qois],
        "parameters": [{"name": p.name, "region": p.region, "selector": p.selector}
                       for p in sc.parameters],
        "run": {"newton_tol": sc.run.newton_tol, "max_newton": sc.run.max_newton,
                "fd_h_rel": sc.run.fd_h_rel, "tolerance": sc.run.tolerance,
                "oracle": sc.run.oracle,
                "traces": [{"name": tr.name, "point": list(tr.point)} for tr in sc.run.traces]},
    }


def dump_config(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_config(sc), sort_keys=False, default_flow_style=None)


def load_config(path) -> tuple[Scenario, str]:
    """(scenario, sha256 of the file bytes)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        doc = yaml.load(raw.decode("utf-8"), Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return scenario_from_config(doc, path.parent), hashlib.sha256(raw).hexdigest()
