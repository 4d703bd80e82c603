from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plbdarboux.errors import CompatibilityViolation, ShapeMismatch, SingularForm
from plbdarboux.forms import CallableForm, ConstantForm, ExpressionForm, LinearPerturbationForm, canonical
from plbdarboux.symplectic import (
    MoserDeformation, OneFormThread, SymplecticField, check_closed, check_compatibility, dual_f_norm, f_norm, flat,
    flat_dual_norm, min_singular_value, pfaffian, norm_equivalence, op_norm_flat, op_norm_sharp_inverse, psi_ji, sharp,
)
from plbdarboux.tower import Tower, build_tower, make_thread

from conftest import random_spd


def test_flat_running_example(running_field):
    assert np.allclose(flat(running_field, 0, np.array([1.0, 0.0]), np.array([1.0, 0.0])), [0.0, 1.3])
    assert np.allclose(flat(running_field, 0, np.array([1.0, 0.0]), np.array([0.0, 1.0])), [-1.3, 0.0])


def test_f_norm_against_dense_circle(running_field):
    # 2D oracle: sup over 200k directions of |sigma(X, Y)| / ||Y||
    th = np.linspace(0, 2 * np.pi, 200_000, endpoint=False)
    Y = np.stack([np.cos(th), np.sin(th)], 1)
    x, X = np.array([0.4, -0.1]), np.array([0.7, 0.2])
    S = running_field.matrix(0, x)
    oracle = np.abs(Y @ (S.T @ X)).max()
    assert f_norm(running_field, 0, x, X) == pytest.approx(oracle, rel=1e-9)


def test_operator_norms(running_field):
    x = np.array([1.0, 0.0])
    assert op_norm_sharp_inverse(running_field, 0, x) == pytest.approx(1 / 1.3, rel=1e-14)
    assert op_norm_flat(running_field, 0, x) == pytest.approx(1.0, rel=1e-14)
    assert norm_equivalence(running_field, 0, np.zeros(2)) == pytest.approx(1.0)
    assert norm_equivalence(running_field, 0, x) == pytest.approx(1.3, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([2, 4]))
def test_flat_dual_norm_bounded_and_consistent(seed, d):
    rng = np.random.default_rng(seed)
    G = random_spd(rng, d)
    tw = build_tower({"levels": [{"dim": d, "gram": G.tolist()}]})
    A = rng.standard_normal((d, d))
    S0 = canonical(d) + 0.1 * (A - A.T)
    field = SymplecticField(tw, [LinearPerturbationForm(S0, 0, 0.2)])
    x, X = 0.3 * rng.standard_normal(d), rng.standard_normal(d)
    nd = flat_dual_norm(field, 0, x, X)
    assert nd <= tw.norm(0, X) + 1e-12
    assert nd == pytest.approx(tw.norm(0, X), rel=1e-9)  # nondegenerate: flat is an isometry onto the F-dual
    assert dual_f_norm(field, 0, x, flat(field, 0, x, X)) == pytest.approx(nd, rel=1e-8)


def test_degenerate_flat_dual_norm_is_projection():
    tw = Tower.inclusion(1, 4)
    S = np.zeros((4, 4))
    S[0, 1], S[1, 0] = 1.0, -1.0
    f = SymplecticField(tw, [CallableForm(lambda p: canonical(4) + (S - canonical(4)) * p[0], 4)])
    x = np.array([1.0, 0, 0, 0])
    X = np.array([1.0, 1.0, 1.0, 1.0])
    assert flat_dual_norm(f, 0, x, X) == pytest.approx(np.sqrt(2))
    assert dual_f_norm(f, 0, x, np.array([0, 0, 1.0, 0])) == float("inf")
    with pytest.raises(SingularForm):
        op_norm_sharp_inverse(f, 0, x)


def test_sharp_round_trip(running_field_3):
    tw = running_field_3.tower
    x = make_thread(tw, np.array([0.2, 0.3]))
    alpha = OneFormThread(tuple(np.array([0.5, -1.0]) for _ in range(3)), x)
    X = sharp(running_field_3, x, alpha, t=0.6)
    for i in range(3):
        assert np.allclose(flat(running_field_3, i, x[i], X[i], t=0.6), alpha[i], atol=1e-14)


def test_sharp_detects_incompatible_levels():
    tw = Tower.inclusion(2, 2)
    field = SymplecticField(tw, [ConstantForm(canonical(2)), ConstantForm(2 * canonical(2))])
    x = make_thread(tw, np.zeros(2))
    alpha = OneFormThread((np.array([1.0, 0.0]), np.array([1.0, 0.0])), x)
    with pytest.raises(CompatibilityViolation):
        sharp(field, x, alpha)
    rep = check_compatibility(field, [x])
    assert not rep.passed and rep.max_residual > 0.1


def test_singular_base_point_rejected():
    with pytest.raises(SingularForm):
        SymplecticField(Tower.inclusion(1, 2), [ConstantForm(np.zeros((2, 2)))])
    with pytest.raises(ShapeMismatch):
        SymplecticField(Tower.inclusion(1, 2), [ConstantForm(np.ones((2, 2)))])


def test_singular_point_raises_in_sharp():
    tw = Tower.inclusion(1, 2)
    f = SymplecticField(tw, [LinearPerturbationForm(canonical(2), 0, -1.0)])
    x = make_thread(tw, np.array([1.0, 0.0]))
    assert min_singular_value(f, 0, x[0]) == 0.0
    with pytest.raises(SingularForm):
        sharp(f, x, OneFormThread((np.ones(2),), x))


def _random_compatible_field(rng):
    """Three 2D levels with random invertible connectors; S_i pushed forward from the top."""
    Ls = [rng.standard_normal((2, 2)) + 2 * np.eye(2) for _ in range(2)]
    tw = build_tower({"levels": [{"dim": 2, "connect": Ls[0].tolist(), "gram": random_spd(rng, 2).tolist()},
                                 {"dim": 2, "connect": Ls[1].tolist(), "gram": random_spd(rng, 2).tolist()},
                                 {"dim": 2, "gram": random_spd(rng, 2).tolist()}]})
    top = LinearPerturbationForm(canonical(2), 0, 0.3)
    forms = []
    for i in range(3):
        Li = tw.composite(2, i)
        Linv = np.linalg.inv(Li)
        forms.append(CallableForm(lambda y, Linv=Linv: Linv.T @ top.matrix(Linv @ y) @ Linv, 2))
    return SymplecticField(tw, forms)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_psi_cocycle(seed):
    rng = np.random.default_rng(seed)
    field = _random_compatible_field(rng)
    x = make_thread(field.tower, 0.3 * rng.standard_normal(2))
    a = rng.standard_normal(2)
    direct = psi_ji(field, x, 2, 0, a)
    composed = psi_ji(field, x, 1, 0, psi_ji(field, x, 2, 1, a))
    assert np.allclose(direct, composed, atol=1e-12 * max(1, np.abs(direct).max()))


def test_compatibility_of_pushed_forward_field():
    rng = np.random.default_rng(3)
    field = _random_compatible_field(rng)
    xs = [make_thread(field.tower, 0.3 * rng.standard_normal(2)) for _ in range(5)]
    rep = check_compatibility(field, xs, tol=1e-10)
    assert rep.passed and rep.psi_flat_residual < 1e-10


def test_closedness():
    tw = Tower.inclusion(1, 4)
    closed = SymplecticField(tw, [ExpressionForm(4, {(0, 1): "1 + x1*x2", (2, 3): "1 + x4**2"})])
    openf = SymplecticField(tw, [ExpressionForm(4, {(0, 1): "1 + x3", (2, 3): "1"})])
    x = np.array([0.1, 0.2, 0.3, 0.4])
    assert check_closed(closed, 0, x).passed
    r = check_closed(openf, 0, x)
    assert not r.passed and r.residual == pytest.approx(1.0, rel=1e-8)
    assert check_closed(SymplecticField(Tower.inclusion(1, 2), [ConstantForm(canonical(2))]), 0, np.zeros(2)).residual == 0


def test_deformation_endpoints(running_field):
    dfm = MoserDeformation(running_field)
    x = np.array([0.5, 0.1])
    assert np.allclose(dfm.at(0, x, 0.0), canonical(2))
    assert np.allclose(dfm.at(0, x, 1.0), 1.15 * canonical(2))
    assert np.allclose(dfm.at(0, x, -1.0), 0.85 * canonical(2))
    assert np.allclose(dfm.sigma_bar(0, x), 0.15 * canonical(2))
    with pytest.raises(ValueError):
        dfm.at(0, x, 1.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([2, 4, 6]))
def test_pfaffian_identities(seed, d):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, d, d))
    A = A - np.swapaxes(A, 1, 2)
    pf = pfaffian(A)
    assert np.allclose(pf ** 2, np.linalg.det(A), rtol=1e-9, atol=1e-12)
    B = rng.standard_normal((d, d))
    assert np.allclose(pfaffian(B.T @ A @ B), np.linalg.det(B) * pf, rtol=1e-8, atol=1e-10)
    if d == 4:
        a = A
        ref = a[:, 0, 1] * a[:, 2, 3] - a[:, 0, 2] * a[:, 1, 3] + a[:, 0, 3] * a[:, 1, 2]
        assert np.allclose(pf, ref, rtol=1e-10)


def test_pfaffian_simple_cases():
    assert pfaffian(canonical(2)) == 1.0
    assert pfaffian(canonical(6)) == 1.0
    assert pfaffian(np.zeros((4, 4))) == 0.0
    assert pfaffian(np.zeros((3, 3))) == 0.0
