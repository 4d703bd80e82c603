from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plbdarboux.errors import BoundViolation, SingularForm
from plbdarboux.forms import ConstantForm, ExpressionForm, LinearPerturbationForm, canonical
from plbdarboux.moser import (
    ChartOptions, DomainSpec, MoserField, darboux_chart, integrate_isotopy, moser_invariant_drift,
    moser_vector_field, poincare_primitive,
)
from plbdarboux.symplectic import MoserDeformation, SymplecticField, flat
from plbdarboux.tower import Tower, build_tower, make_thread

EPS = 0.3


def closed_form_alpha(x):
    """(eps x1 / 3)(x1 dy - x2 dx) for (1 + eps x1) dx ^ dy."""
    return EPS * x[..., 0, None] / 3 * np.stack([-x[..., 1], x[..., 0]], -1)


def trivial_field(depth=1, dim=2):
    return SymplecticField.uniform(Tower.inclusion(depth, dim), ConstantForm(canonical(dim)))


def closed_4d_field():
    # canonical + exact perturbation d((x1 x2 / 5) dx3) + block-local terms
    f = ExpressionForm(4, {(0, 1): "1 + 0.2*sin(x1*x2)", (2, 3): "1 + 0.1*x3*x4", (0, 2): "x2/5", (1, 2): "x1/5"})
    return SymplecticField(Tower.inclusion(1, 4), [f])


def test_primitive_of_unperturbed_form_vanishes():
    f = trivial_field(3)
    a = poincare_primitive(MoserDeformation(f), make_thread(f.tower, np.array([0.3, -0.4])))
    assert all(np.all(c == 0) for c in a.components)


def test_primitive_running_example(running_field):
    dfm = MoserDeformation(running_field)
    a = poincare_primitive(dfm, make_thread(running_field.tower, np.array([1.0, 0.0])))
    assert np.allclose(a[0], [0.0, 0.1], atol=1e-15)
    a0 = poincare_primitive(dfm, make_thread(running_field.tower, np.zeros(2)))
    assert np.all(a0[0] == 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_primitive_matches_closed_form(x1, x2):
    m = MoserField(SymplecticField.uniform(Tower.inclusion(1, 2), LinearPerturbationForm(canonical(2), 0, EPS)))
    x = np.array([x1, x2])
    assert np.max(np.abs(m.alpha(0, x) - closed_form_alpha(x))) <= 1e-9


def test_primitive_exterior_derivative_4d():
    from plbdarboux.moser import _primitive_residual

    field = closed_4d_field()
    m = MoserField(field, quad_n=12)
    X = 0.4 * np.random.default_rng(0).standard_normal((30, 4))
    assert np.max(_primitive_residual(m, 0, X, 1e-5)) <= 1e-6


def test_alpha_jacobian_matches_fd():
    m = MoserField(closed_4d_field())
    X = 0.3 * np.random.default_rng(1).standard_normal((5, 4))
    h = 1e-6
    fd = np.stack([(m.alpha(0, X + h * e) - m.alpha(0, X - h * e)) / (2 * h) for e in np.eye(4)], -1)
    assert np.allclose(m.alpha_jacobian(0, X), fd, atol=1e-8)
    _, DY = m.velocity_and_jacobian(0, 0.4, X)
    fdY = np.stack([(m.velocity(0, 0.4, X + h * e) - m.velocity(0, 0.4, X - h * e)) / (2 * h) for e in np.eye(4)], -1)
    assert np.allclose(DY, fdY, atol=1e-8)


def test_moser_field_running_example(running_field):
    m = MoserField(running_field)
    x = make_thread(running_field.tower, np.array([1.0, 0.0]))
    assert np.allclose(moser_vector_field(running_field, m.primitive, 0.0, x)[0], [-0.1, 0.0], atol=1e-15)
    zero = make_thread(running_field.tower, np.zeros(2))
    assert np.all(m.vector_field(0.5, zero)[0] == 0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_defining_identity(t, x1, x2):
    field = SymplecticField.uniform(Tower.inclusion(2, 2), LinearPerturbationForm(canonical(2), 0, EPS))
    m = MoserField(field)
    x = make_thread(field.tower, np.array([x1, x2]))
    Y = m.vector_field(t, x)
    a = m.primitive(x)
    for i in range(2):
        assert np.max(np.abs(flat(field, i, x[i], Y[i], t) + a[i])) <= 1e-9


def test_identity_flow_for_unperturbed_form():
    f = trivial_field(2)
    iso = integrate_isotopy(MoserField(f), make_thread(f.tower, np.array([0.2, 0.1])), step=0.1)
    assert np.all(iso.positions[1] == [0.2, 0.1])
    assert moser_invariant_drift(MoserField(f), make_thread(f.tower, np.array([0.2, 0.1])), np.linspace(0, 1, 11), 0.1) <= 1e-12


def test_origin_is_fixed(running_field_3):
    iso = integrate_isotopy(MoserField(running_field_3), make_thread(running_field_3.tower, np.zeros(2)),
                            t_eval=np.linspace(0, 1, 11), step=0.01)
    assert all(np.max(np.abs(p)) <= 1e-10 for p in iso.positions)


def test_drift_at_time_zero_is_exact(running_field):
    x0 = make_thread(running_field.tower, np.array([0.5, 0.5]))
    assert moser_invariant_drift(MoserField(running_field), x0, [0.0]) == 0.0


def test_running_example_drift_and_richardson(running_field):
    m = MoserField(running_field)
    x0 = make_thread(running_field.tower, np.array([0.5, 0.5]))
    assert moser_invariant_drift(m, x0, np.linspace(0, 1, 11), 1e-3) <= 1e-6
    ends = [integrate_isotopy(m, x0, step=h).positions[0][-1] for h in (0.5, 0.25, 0.125)]
    d1, d2 = np.linalg.norm(ends[0] - ends[1]), np.linalg.norm(ends[1] - ends[2])
    # fourth order: successive differences shrink by about 16
    assert 8 <= d1 / d2 <= 32
    fine = integrate_isotopy(m, x0, step=1e-3).positions[0][-1]
    ref = integrate_isotopy(m, x0, step=5e-4).positions[0][-1]
    assert np.linalg.norm(fine - ref) <= 16 * d2 * (1e-3 / 0.125) ** 4 + 1e-15


def test_picard_route_agrees_with_rk4(running_field):
    m = MoserField(running_field, M=0.05, mu=0.2)
    x0 = make_thread(running_field.tower, np.array([0.5, 0.5]))
    pic = integrate_isotopy(m, x0, method="picard")
    rk = integrate_isotopy(m, x0, step=1e-3)
    assert pic.method == "picard" and pic.jacobians is None
    assert np.linalg.norm(pic.positions[0][-1] - rk.positions[0][-1]) <= 1e-6


def test_bound_and_singular_errors(running_field):
    x0 = make_thread(running_field.tower, np.array([0.5, 0.5]))
    with pytest.raises(BoundViolation):
        integrate_isotopy(MoserField(running_field, M=1e-3), x0)
    # (1 - x1) dx ^ dy: on the x1 axis x1' = x1^2 / (3 (1 - t x1)) reaches the pole 1 - t x1 = 0
    deg = SymplecticField.uniform(Tower.inclusion(1, 2), LinearPerturbationForm(canonical(2), 0, -1.0))
    with pytest.raises(SingularForm):
        integrate_isotopy(MoserField(deg), make_thread(deg.tower, np.array([0.9, 0.0])), step=0.01)


def test_chart_trivial_is_identity():
    f = trivial_field(3)
    rep = darboux_chart(f.tower, f, DomainSpec(0.5, 10, 0), ChartOptions(step=0.1))
    assert rep.passed and rep.residuals["pullback"] <= 1e-12
    for s in rep.samples:
        assert s["phi1"] == s["point"]


def test_chart_running_example(running_field):
    rep = darboux_chart(running_field.tower, running_field, DomainSpec(0.5, 12, 1), ChartOptions(step=1e-2))
    assert rep.passed, rep.failures
    assert rep.residuals["pullback"] <= 1e-6
    assert rep.hypotheses["H4"]["certificate"] == "sampled"
    assert rep.flow["certificate"] == "sampled bound"
    assert rep.hypotheses["H3"]["implied_M"] >= rep.hypotheses["H3"]["max_speed"] * 0.99


def test_chart_weighted_grams():
    tw = build_tower({"levels": [{"dim": 2, "gram": [[2.0, 0.5], [0.5, 1.0]]}, {"dim": 2, "gram": [[1.0, 0.0], [0.0, 3.0]]}]})
    field = SymplecticField.uniform(tw, ExpressionForm(2, {(0, 1): "exp(x1*x2/4)"}))
    rep = darboux_chart(tw, field, DomainSpec(0.4, 8, 3), ChartOptions(step=1e-2))
    assert rep.passed, rep.failures
    assert rep.residuals["level_consistency"] <= 1e-9


def test_chart_degenerate_fails_with_zero_margin():
    tw = Tower.inclusion(1, 2)
    field = SymplecticField(tw, [LinearPerturbationForm(canonical(2), 0, -1.0)])
    rep = darboux_chart(tw, field, DomainSpec(1.0, 6, 0, ((1.0, 0.0),)), ChartOptions(step=1e-2, refine=False))
    assert not rep.passed
    assert rep.hypotheses["H1"]["min_singular_value"] == 0.0
    assert "H1" in rep.failures
    assert rep.samples[-1]["error"].startswith("SingularForm")


def test_chart_is_deterministic(running_field):
    opts = ChartOptions(step=0.05, refine=False)
    a = darboux_chart(running_field.tower, running_field, DomainSpec(0.5, 5, 9), opts).to_json()
    b = darboux_chart(running_field.tower, running_field, DomainSpec(0.5, 5, 9), opts).to_json()
    assert a == b


def test_domain_sampling_respects_radius():
    tw = build_tower({"levels": [{"dim": 4, "gram": np.diag([1.0, 2.0, 3.0, 4.0]).tolist()}]})
    X = DomainSpec(0.7, 200, 4).sample(tw)
    assert X.shape == (200, 4)
    assert np.max(tw.norm(0, X)) <= 0.7 + 1e-12


def test_opposite_sign_convention_is_exposed_by_drift(running_field):
    class Flipped(MoserField):
        def velocity_and_jacobian(self, level, t, x):
            Y, DY = super().velocity_and_jacobian(level, t, x)
            return -Y, -DY

    x0 = make_thread(running_field.tower, np.array([0.5, 0.5]))
    grid = np.linspace(0, 1, 11)
    assert moser_invariant_drift(MoserField(running_field), x0, grid) <= 1e-12
    assert moser_invariant_drift(Flipped(running_field), x0, grid) > 0.1
