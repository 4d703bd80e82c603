from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plbdarboux.errors import BoundViolation, DiagramViolation, DomainError, EvaluationFailure, NoConvergence, SingularForm
from plbdarboux.picard import (
    PicardProblem, TimeDependentFamily, estimate_lipschitz, flow_map, solution_interval, solve_picard, solve_rk4,
)
from plbdarboux.tower import ProjectiveMapFamily, Tower, make_thread


def decay_problem(depth=1, tau=1.0, mu=1.0, M1=1.0, t0=0.0):
    tw = Tower.inclusion(depth, 1)
    return PicardProblem(TimeDependentFamily.uniform(tw, lambda t, x: -x), t0, make_thread(tw, [1.0]), tau, mu, M1)


@pytest.mark.parametrize("tau,M1,mu,a", [(1, 3, 1, 0.25), (0.1, 0, 1, 0.1), (10, 1, 1, 0.5)])
def test_solution_interval_examples(tau, M1, mu, a):
    assert solution_interval(tau, mu, M1) == a


@pytest.mark.parametrize("args", [(0, 1, 1), (-1, 1, 1), (1, -1, 1), (1, 0, 0)])
def test_solution_interval_domain(args):
    with pytest.raises(DomainError):
        solution_interval(*args)


def test_decay_matches_exponential():
    prob = decay_problem()
    assert prob.a == 0.5
    res = solve_picard(prob, grid_n=1025)
    assert res.method == "picard"
    assert np.max(np.abs(res.trajectories[0][:, 0] - np.exp(-res.times))) <= 1e-6
    assert res.uniqueness_gap <= 10 * 1e-12
    # contraction: changes eventually decrease
    ch = np.array(res.changes)
    assert np.all(np.diff(ch[-5:]) < 0)


def test_default_grid_accuracy_near_t0():
    res = solve_picard(decay_problem())
    near = np.abs(res.times) <= 0.25
    assert len(res.times) % 2 == 1 and res.times[len(res.times) // 2] == 0.0
    assert np.max(np.abs(res.trajectories[0][near, 0] - np.exp(-res.times[near]))) <= 1e-6


def test_trivial_rhs():
    tw = Tower.inclusion(2, 3)
    x0 = make_thread(tw, [1.0, -2.0, 0.5])
    res = solve_picard(PicardProblem(TimeDependentFamily.uniform(tw, lambda t, x: 0 * x), 0.0, x0, 1.0, 1.0, 1.0))
    assert np.all(res.trajectories[1] == x0.top)
    one = PicardProblem(TimeDependentFamily.uniform(Tower.inclusion(1, 1), lambda t, x: np.ones(1)), 0.0,
                        make_thread(Tower.inclusion(1, 1), [0.0]), 1.0, 0.0, 1.0)
    r1 = solve_picard(one)
    assert np.allclose(r1.trajectories[0][:, 0], r1.times, atol=1e-15, rtol=0)


def test_levels_agree_exactly_for_inclusion():
    res = solve_picard(decay_problem(depth=3))
    assert np.max(res.consistency) <= 1e-12


def test_rk4_and_cross_check():
    prob = decay_problem()
    r = solve_rk4(prob.rhs, prob.x0, (0.0, 0.25), 0.01)
    assert r.final()[0][0] == pytest.approx(math.exp(-0.25), abs=1e-8)
    p = solve_picard(prob, grid_n=1025)
    ref = solve_rk4(prob.rhs, prob.x0, (0.0, 0.5), 0.5 / 512)
    common = p.times >= -1e-15
    assert np.max(np.abs(p.trajectories[0][common, 0] - ref.trajectories[0][:, 0])) <= 1e-6
    back = solve_rk4(prob.rhs, prob.x0, (0.0, -0.5), 0.01)
    assert back.final()[0][0] == pytest.approx(math.exp(0.5), abs=1e-8)


def test_undeclared_m1_falls_back_to_rk4():
    prob = decay_problem(M1=0.1, mu=1.0)
    with pytest.warns(RuntimeWarning):
        res = solve_picard(prob)
    assert res.method == "rk4" and res.notes
    assert np.max(np.abs(res.trajectories[0][:, 0] - np.exp(-res.times))) < 1e-9


def test_no_convergence_reported():
    with pytest.raises(NoConvergence) as exc:
        solve_picard(decay_problem(), max_iter=3)
    assert len(exc.value.changes) == 3 and 0 < exc.value.contraction < 1


def test_diagram_violation_at_x0():
    tw = Tower.inclusion(2, 1)
    rhs = TimeDependentFamily(tw, (lambda t, x: -x, lambda t, x: x))
    with pytest.raises(DiagramViolation):
        PicardProblem(rhs, 0.0, make_thread(tw, [1.0]), 1.0, 1.0, 1.0)


def test_rk4_wraps_singular_failures():
    tw = Tower.inclusion(1, 1)

    def bad(t, x):
        if t > 0.1:
            raise SingularForm("degenerate", 0.0)
        return -x

    with pytest.raises(EvaluationFailure):
        solve_rk4(TimeDependentFamily.uniform(tw, bad), make_thread(tw, [1.0]), (0, 1), 0.05)


def test_flow_map_properties(tmp_path):
    tw = Tower.inclusion(2, 2)
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    fam = ProjectiveMapFamily.uniform(tw, lambda x: 0.5 * np.sin(rot @ x))
    p = make_thread(tw, [0.3, 0.1])
    F = flow_map(fam, mu=0.5, M=1.0, samples=[p])
    assert F.epsilon == pytest.approx(1 / 1.5)
    assert F(0.0, p) is p
    s, t = 0.2, 0.3
    two = F(s, F(t, p)).top
    one = F(s + t, p).top
    assert np.max(np.abs(two - one)) <= 1e-6
    with pytest.raises(DomainError):
        F(1.0, p)
    const = flow_map(ProjectiveMapFamily.uniform(tw, lambda x: np.array([1.0, -2.0])), 0.0, 3.0)
    assert np.allclose(const(0.25, p).top, p.top + 0.25 * np.array([1.0, -2.0]), atol=1e-14)
    with pytest.raises(BoundViolation):
        flow_map(ProjectiveMapFamily.uniform(tw, lambda x: 10 * x), 0.0, 1.0, samples=[make_thread(tw, [1.0, 0])])
    F.trajectory(p, 0.1).to_csv(tmp_path / "traj.csv")
    assert (tmp_path / "traj.csv").read_text().startswith("t,level,x1,x2")


def test_lipschitz_estimates():
    tw = Tower.inclusion(2, 3)
    est = estimate_lipschitz(ProjectiveMapFamily.uniform(tw, lambda x: 2 * x), ([-1] * 3, [1] * 3), samples=20)
    assert est.overall == pytest.approx(2.0, abs=1e-12)
    assert estimate_lipschitz(ProjectiveMapFamily.uniform(tw, lambda x: np.ones(3)), (-1, 1)).overall == 0.0
    one = Tower.inclusion(1, 1)
    est = estimate_lipschitz(ProjectiveMapFamily.uniform(one, lambda x: x + x ** 3), (-0.5, 0.5), samples=400)
    assert 1.0 <= est.overall <= 1.75 and est.overall > 1.7


@settings(max_examples=1000, deadline=None)
@given(st.floats(1e-6, 1e6), st.floats(0, 1e6), st.floats(0, 1e6))
def test_solution_interval_is_exact_min(tau, mu, M1):
    if M1 + mu == 0:
        return
    a = solution_interval(tau, mu, M1)
    assert a == min(tau, 1.0 / (M1 + mu))
    assert a == tau or a == 1.0 / (M1 + mu)
