"""Darboux charts for compatible weak symplectic forms on finite towers of normed spaces.

Layers, bottom up: :mod:`tower` (levels, connectors, threads),
:mod:`forms` and :mod:`symplectic` (levelwise forms, flat/sharp, norms),
:mod:`picard` (levelwise ODE flows), :mod:`moser` (primitive, Moser field,
isotopy, Darboux certificate) and :mod:`scenario` / :mod:`cli` (JSON runner).
"""

from .errors import (
    BoundViolation, CompatibilityViolation, CompositionViolation, ConfigError, DarbouxError, DiagramViolation,
    DomainError, EvaluationFailure, IoError, NoConvergence, NonSPDGram, ParseError, ShapeMismatch, SingularForm,
)
from .forms import CallableForm, ConstantForm, ExpressionForm, LinearPerturbationForm, canonical, form_from_spec
from .moser import (
    ChartOptions, DomainSpec, MoserField, darboux_chart, integrate_isotopy, moser_invariant_drift,
    moser_vector_field, poincare_primitive,
)
from .picard import Flow, PicardProblem, TimeDependentFamily, estimate_lipschitz, flow_map, solution_interval, solve_picard, solve_rk4
from .report import DarbouxReport, render_report
from .scenario import generate_case, run_scenario
from .symplectic import (
    MoserDeformation, OneFormThread, SymplecticField, check_closed, check_compatibility, dual_f_norm, f_norm, flat,
    flat_dual_norm, norm_equivalence, op_norm_flat, op_norm_sharp_inverse, psi_ji, sharp,
)
from .tower import ProjectiveMapFamily, ThreadVector, Tower, apply_projective_map, build_tower, check_thread, make_thread

__version__ = "0.1.0"

__all__ = [
    "BoundViolation",
    "CompatibilityViolation",
    "CompositionViolation",
    "ConfigError",
    "DarbouxError",
    "DiagramViolation",
    "DomainError",
    "EvaluationFailure",
    "IoError",
    "NoConvergence",
    "NonSPDGram",
    "ParseError",
    "ShapeMismatch",
    "SingularForm",
    "CallableForm",
    "ConstantForm",
    "ExpressionForm",
    "LinearPerturbationForm",
    "canonical",
    "form_from_spec",
    "ChartOptions",
    "DomainSpec",
    "MoserField",
    "darboux_chart",
    "integrate_isotopy",
    "moser_invariant_drift",
    "moser_vector_field",
    "poincare_primitive",
    "Flow",
    "PicardProblem",
    "TimeDependentFamily",
    "estimate_lipschitz",
    "flow_map",
    "solution_interval",
    "solve_picard",
    "solve_rk4",
    "DarbouxReport",
    "render_report",
    "generate_case",
    "run_scenario",
    "MoserDeformation",
    "OneFormThread",
    "SymplecticField",
    "check_closed",
    "check_compatibility",
    "dual_f_norm",
    "f_norm",
    "flat",
    "flat_dual_norm",
    "norm_equivalence",
    "op_norm_flat",
    "op_norm_sharp_inverse",
    "psi_ji",
    "sharp",
    "ProjectiveMapFamily",
    "ThreadVector",
    "Tower",
    "apply_projective_map",
    "build_tower",
    "check_thread",
    "make_thread",
]
