"""JSON scenarios: schema, loading, running and built-in generators.

A scenario document looks like::

    {
      "schema_version": 1,
      "name": "perturbed_2d",
      "tower":  {"levels": [{"dim": 2, "gram": [[1, 0], [0, 1]]}]},
      "field":  {"kind": "linear_perturbation", "epsilon": 0.3},
      "domain": {"radius": 0.5, "samples": 50, "seed": 0},
      "solver": {"step": 0.001, "quad_n": 8},
      "tolerances": {"pullback": 1e-6}
    }

``field`` is either one level spec applied to every level or
``{"levels": [spec, ...]}`` with one spec per level.  Domain points are drawn
with ``numpy.random.default_rng(seed)`` (PCG64): a Gaussian direction scaled
by ``radius * u**(1/d)``, mapped so the deepest-level norm equals that radius.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigError, DarbouxError, DomainError, IoError
from .forms import form_from_spec
from .moser import ChartOptions, DomainSpec, darboux_chart
from .report import DarbouxReport
from .symplectic import KAPPA_MAX, SIGMA_MIN_TOL, SymplecticField
from .tower import build_tower

SCHEMA_VERSION = 1

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

_POS = {"type": "number", "exclusiveMinimum": 0}
_MATRIX = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_FORM = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["constant", "linear_perturbation", "expression"]},
        "matrix": {"anyOf": [{"const": "canonical"}, _MATRIX]},
        "base": {"anyOf": [{"const": "canonical"}, _MATRIX]},
        "direction": _MATRIX,
        "coordinate": {"type": "integer", "minimum": 1},
        "block": {"type": "integer", "minimum": 1},
        "epsilon": {"type": "number"},
        "upper": {
            "type": "array",
            "items": {"type": "array", "prefixItems": [{"type": "integer"}, {"type": "integer"}, {"type": "string"}],
                      "minItems": 3, "maxItems": 3},
        },
    },
    "allOf": [
        {"if": {"properties": {"kind": {"const": "linear_perturbation"}}}, "then": {"required": ["epsilon"]}},
        {"if": {"properties": {"kind": {"const": "expression"}}}, "then": {"required": ["upper"]}},
    ],
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "tower", "field", "domain"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "tower": {
            "type": "object",
            "required": ["levels"],
            "properties": {
                "levels": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["dim"],
                        "properties": {
                            "dim": {"type": "integer", "minimum": 1},
                            "gram": {"anyOf": [_MATRIX, {"type": "array", "items": {"type": "number"}}]},
                            "connect": {"anyOf": [_MATRIX, {"type": "null"}]},
                        },
                        "additionalProperties": False,
                    },
                },
                "tol_thread": _POS,
            },
            "additionalProperties": False,
        },
        "field": {
            "anyOf": [
                _FORM,
                {"type": "object", "required": ["levels"], "properties": {"levels": {"type": "array", "items": _FORM}},
                 "additionalProperties": False},
            ]
        },
        "domain": {
            "type": "object",
            "properties": {
                "radius": _POS,
                "samples": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "points": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
            },
            "additionalProperties": False,
        },
        "solver": {
            "type": "object",
            "properties": {
                "step": _POS,
                "quad_n": {"type": "integer", "minimum": 1},
                "t_grid_points": {"type": "integer", "minimum": 2},
                "h1_t_points": {"type": "integer", "minimum": 2},
                "variational": {"enum": ["exact", "fd"]},
                "refine": {"type": "boolean"},
                "M": _POS,
                "h_fd": _POS,
            },
            "additionalProperties": False,
        },
        "tolerances": {
            "type": "object",
            "properties": {k: _POS for k in (
                "pullback", "drift", "primitive", "consistency", "origin", "closed", "sigma_min", "kappa_max", "h4_max",
            )},
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"report": {"type": "string"}, "csv": {"type": "string"}},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


def _pointer(parts) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def validate_config(doc) -> None:
    """Raise :class:`ConfigError` with a JSON pointer for the first schema violation."""
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if not errors:
        return
    err = jsonschema.exceptions.best_match(errors)
    parts = list(err.absolute_path)
    if err.validator == "required" and isinstance(err.instance, dict):
        missing = [k for k in err.validator_value if k not in err.instance]
        if missing:
            raise ConfigError(f"missing required key {missing[0]!r}", _pointer(parts + [missing[0]]))
    raise ConfigError(err.message, _pointer(parts))


def load_config(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON ({exc.msg} at line {exc.lineno})") from None
    validate_config(doc)
    return doc


@dataclass(frozen=True)
class Scenario:
    tower: object
    field: SymplecticField
    domain: DomainSpec
    options: ChartOptions
    name: str = ""


def build_scenario(doc: dict) -> Scenario:
    """Turn a validated document into library objects."""
    validate_config(doc)
    try:
        tower = build_tower(doc["tower"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad tower description: {exc}", "/tower") from None
    fdoc = doc["field"]
    specs = fdoc["levels"] if "levels" in fdoc else [fdoc] * tower.depth
    if len(specs) != tower.depth:
        raise ConfigError(f"need {tower.depth} level forms, got {len(specs)}", "/field/levels")
    forms = []
    for i, (s, d) in enumerate(zip(specs, tower.dims)):
        try:
            forms.append(form_from_spec(s, d))
        except ConfigError as exc:
            where = f"/field/levels/{i}" if "levels" in fdoc else "/field"
            raise ConfigError(str(exc).split(": ", 1)[-1], where) from None
        except ValueError as exc:
            raise ConfigError(str(exc), f"/field/levels/{i}" if "levels" in fdoc else "/field") from None
    tol = doc.get("tolerances", {})
    solver = doc.get("solver", {})
    kw = {"h_fd": solver["h_fd"]} if "h_fd" in solver else {}
    field = SymplecticField(tower, forms, sigma_min_tol=tol.get("sigma_min", SIGMA_MIN_TOL),
                            kappa_max=tol.get("kappa_max", KAPPA_MAX), **kw)
    dom = doc["domain"]
    domain = DomainSpec(
        radius=float(dom.get("radius", 0.5)),
        samples=int(dom.get("samples", 50)),
        seed=int(dom.get("seed", 0)),
        points=tuple(tuple(float(v) for v in p) for p in dom.get("points", ())),
    )
    for k, p in enumerate(domain.points):
        if len(p) != tower.dims[-1]:
            raise ConfigError(f"point has {len(p)} coordinates, deepest level has dim {tower.dims[-1]}",
                              f"/domain/points/{k}")
    defaults = ChartOptions()
    options = ChartOptions(
        step=solver.get("step", defaults.step),
        quad_n=solver.get("quad_n", defaults.quad_n),
        t_grid_points=solver.get("t_grid_points", defaults.t_grid_points),
        h1_t_points=solver.get("h1_t_points", defaults.h1_t_points),
        variational=solver.get("variational", defaults.variational),
        refine=solver.get("refine", defaults.refine),
        M=solver.get("M"),
        h_fd=solver.get("h_fd", defaults.h_fd),
        tol_pullback=tol.get("pullback", defaults.tol_pullback),
        tol_drift=tol.get("drift", defaults.tol_drift),
        tol_primitive=tol.get("primitive"),
        tol_consistency=tol.get("consistency", defaults.tol_consistency),
        tol_origin=tol.get("origin", defaults.tol_origin),
        tol_closed=tol.get("closed", defaults.tol_closed),
        h4_max=tol.get("h4_max", defaults.h4_max),
    )
    return Scenario(tower, field, domain, options, doc.get("name", ""))


def execute(doc: dict) -> DarbouxReport:
    sc = build_scenario(doc)
    return darboux_chart(sc.tower, sc.field, sc.domain, sc.options)


@dataclass(frozen=True)
class RunResult:
    exit_code: int
    report: DarbouxReport | None
    report_path: Path | None
    csv_path: Path | None
    error: str | None = None


def run_scenario(config_path: str | Path, report_path: str | Path | None = None,
                 csv_path: str | Path | None = None) -> RunResult:
    """Run one scenario file; exit code 0 on pass, 2 on fail, 1 on error.

    The report goes to ``report_path``, else the config's ``output.report``,
    else ``<config stem>.report.json`` in the working directory.
    """
    try:
        doc = load_config(config_path)
        out = doc.get("output", {})
        rpath = Path(report_path or out.get("report") or f"{Path(config_path).stem}.report.json")
        cpath = csv_path or out.get("csv")
        report = execute(doc)
        report.write_json(rpath)
        if cpath:
            report.write_csv(cpath)
    except (DarbouxError, ValueError) as exc:
        return RunResult(EXIT_ERROR, None, None, None, f"{type(exc).__name__}: {exc}")
    code = EXIT_PASS if report.passed else EXIT_FAIL
    return RunResult(code, report, rpath, Path(cpath) if cpath else None)


GENERATOR_KINDS = ("trivial", "linear_perturbation", "degenerate")


def generate_case(kind: str, dim: int, depth: int, epsilon: float | None = None, seed: int = 0) -> dict:
    """Reproducible scenario on an inclusion tower of ``depth`` copies of R^dim.

    ``trivial``: the canonical form itself.  ``linear_perturbation``:
    ``S0 + epsilon * x1 * S0|block 1`` (default epsilon 0.3).  ``degenerate``:
    the same family with default epsilon -1 so the form vanishes on the first
    block at ``x1 = -1/epsilon``; that point is added to the samples.
    """
    if kind not in GENERATOR_KINDS:
        raise ValueError(f"unknown kind {kind!r}; choose from {', '.join(GENERATOR_KINDS)}")
    if dim < 2 or dim % 2:
        raise DomainError(f"canonical form needs an even dimension >= 2, got {dim}")
    if depth < 1:
        raise DomainError(f"depth must be >= 1, got {depth}")
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": f"{kind}_{dim}d_depth{depth}",
        "tower": {"levels": [{"dim": dim} for _ in range(depth)]},
        "domain": {"radius": 0.5, "samples": 20, "seed": int(seed)},
        "solver": {"step": 1e-3},
    }
    if kind == "trivial":
        doc["field"] = {"kind": "constant", "matrix": "canonical"}
        doc["solver"] = {"step": 0.05}
        doc["tolerances"] = {"pullback": 1e-12, "drift": 1e-12}
    elif kind == "linear_perturbation":
        eps = 0.3 if epsilon is None else float(epsilon)
        doc["field"] = {"kind": "linear_perturbation", "epsilon": eps, "coordinate": 1, "block": 1}
        doc["domain"]["samples"] = 50
        doc["tolerances"] = {"pullback": 1e-5, "drift": 1e-5}
    else:
        eps = -1.0 if epsilon is None else float(epsilon)
        if eps == 0:
            raise DomainError("degenerate case needs a nonzero epsilon")
        x1 = -1.0 / eps
        doc["field"] = {"kind": "linear_perturbation", "epsilon": eps, "coordinate": 1, "block": 1}
        doc["domain"] = {"radius": abs(x1), "samples": 20, "seed": int(seed),
                         "points": [[x1] + [0.0] * (dim - 1)]}
        doc["solver"] = {"step": 1e-2, "refine": False}
    return doc


def bundled_scenarios() -> list[str]:
    return sorted(p.name for p in resources.files(__package__).joinpath("scenarios").iterdir() if p.name.endswith(".json"))


def bundled_path(name: str) -> Path:
    """Filesystem path of a scenario shipped with the package."""
    p = Path(str(resources.files(__package__).joinpath("scenarios", name)))
    if not p.is_file():
        raise IoError(f"no bundled scenario {name!r}; available: {', '.join(bundled_scenarios())}")
    return p


def load_bundled(name: str) -> dict:
    return copy.deepcopy(load_config(bundled_path(name)))
