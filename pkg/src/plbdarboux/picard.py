"""Levelwise ODE solving on a tower: Picard iteration, RK4 and flow maps.

Each level integrates its own system ``x_i' = phi_i(t, x_i)``; cross-level
consistency ``L_ji x_j(t) = x_i(t)`` is measured afterwards, never imposed.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import BoundViolation, DarbouxError, DiagramViolation, DomainError, EvaluationFailure, NoConvergence
from .tower import ProjectiveMapFamily, ThreadVector, Tower

NODES_PER_UNIT_TIME = 256


def solution_interval(tau: float, mu: float, M1: float) -> float:
    """Half-width ``a = min(tau, 1 / (M1 + mu))`` of the existence interval."""
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau}")
    if mu < 0 or M1 < 0:
        raise DomainError(f"mu and M1 must be nonnegative, got mu={mu}, M1={M1}")
    if M1 + mu == 0:
        raise DomainError("M1 + mu must be positive")
    return min(tau, 1.0 / (M1 + mu))


@dataclass(frozen=True)
class TimeDependentFamily:
    """Per-level right-hand sides ``phi_i(t, x_i)``."""

    tower: Tower
    maps: tuple[Callable[[float, np.ndarray], np.ndarray], ...]

    @classmethod
    def uniform(cls, tower: Tower, f) -> "TimeDependentFamily":
        return cls(tower, (f,) * tower.depth)

    @classmethod
    def autonomous(cls, family: ProjectiveMapFamily) -> "TimeDependentFamily":
        return cls(family.tower, tuple((lambda t, x, g=g: g(x)) for g in family.maps))

    def at(self, t: float) -> ProjectiveMapFamily:
        return ProjectiveMapFamily(self.tower, tuple((lambda x, g=g: g(t, x)) for g in self.maps))


@dataclass(frozen=True)
class PicardProblem:
    rhs: TimeDependentFamily
    t0: float
    x0: ThreadVector
    tau: float
    mu: float
    M1: float

    def __post_init__(self):
        a = solution_interval(self.tau, self.mu, self.M1)
        if not a > 0:
            raise DomainError("empty solution interval")
        r = self.rhs.at(self.t0).diagram_residual(self.x0)
        if r > self.rhs.tower.tol_thread:
            raise DiagramViolation(f"rhs is not projective at x0 (residual {r:.3e})", r)

    @property
    def a(self) -> float:
        return solution_interval(self.tau, self.mu, self.M1)


@dataclass(frozen=True)
class FlowResult:
    times: np.ndarray
    trajectories: tuple[np.ndarray, ...]  # level i: shape (len(times), dim_i)
    consistency: np.ndarray  # max thread residual at each time
    method: str
    iterations: int = 0
    changes: tuple[float, ...] = ()
    uniqueness_gap: float | None = None
    ode_residual: float | None = None
    notes: tuple[str, ...] = field(default_factory=tuple)

    def state(self, k: int) -> ThreadVector:
        return ThreadVector(tuple(tr[k] for tr in self.trajectories))

    def final(self) -> ThreadVector:
        return self.state(-1)

    def at(self, t: float) -> ThreadVector:
        k = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[k], t, rel_tol=0.0, abs_tol=1e-12):
            raise KeyError(f"t={t} is not a grid node")
        return self.state(k)

    def to_csv(self, path: str | Path) -> None:
        """Rows ``t, level, x_1, ..., x_d`` (ragged across levels)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            width = max(tr.shape[1] for tr in self.trajectories)
            w.writerow(["t", "level"] + [f"x{k + 1}" for k in range(width)])
            for lvl, tr in enumerate(self.trajectories):
                for t, row in zip(self.times, tr):
                    w.writerow([repr(float(t)), lvl] + [repr(float(v)) for v in row])


def _consistency_profile(tower: Tower, trajectories) -> np.ndarray:
    n = len(trajectories[0])
    prof = np.zeros(n)
    for j, i in tower.pairs():
        L = tower.composite(j, i)
        prof = np.maximum(prof, tower.norm(i, trajectories[j] @ L.T - trajectories[i]))
    return prof


def _eval_rhs(f, times, X):
    return np.array([np.asarray(f(float(t), x), dtype=float) for t, x in zip(times, X)])


def _picard_level(f, norm, times, c, x0, init, tol, max_iter):
    """Fixed point of ``X = x0 + int_{t_c}^t f(s, X(s)) ds`` by trapezoid quadrature."""
    X = init.copy()
    changes = []
    for it in range(1, max_iter + 1):
        F = _eval_rhs(f, times, X)
        cum = cumulative_trapezoid(F, times, axis=0, initial=0.0)
        Xn = x0 + (cum - cum[c])
        change = float(np.max(norm(Xn - X)))
        changes.append(change)
        X = Xn
        if change <= tol:
            return X, it, changes
    q = changes[-1] / changes[-2] if len(changes) > 1 and changes[-2] > 0 else float("nan")
    raise NoConvergence(f"Picard iteration did not reach {tol:g} in {max_iter} iterations (contraction ~{q:.3g})", q, changes)


def _midpoint_residual(f, norm, times, X):
    h = np.diff(times)
    mids = 0.5 * (times[:-1] + times[1:])
    slope = np.diff(X, axis=0) / h[:, None]
    F = _eval_rhs(f, mids, 0.5 * (X[:-1] + X[1:]))
    return float(np.max(norm(slope - F), initial=0.0))


def _grid(t0, a, grid_n):
    if grid_n is None:
        grid_n = math.ceil(NODES_PER_UNIT_TIME * 2 * a) + 1
    grid_n = max(int(grid_n), 3)
    if grid_n % 2 == 0:
        grid_n += 1  # t0 must be a node
    return np.linspace(t0 - a, t0 + a, grid_n), grid_n // 2


def sampled_M1(problem: PicardProblem, times) -> float:
    x0 = problem.x0
    tw = problem.rhs.tower
    worst = 0.0
    for i, f in enumerate(problem.rhs.maps):
        vals = _eval_rhs(f, times, np.broadcast_to(x0[i], (len(times), len(x0[i]))))
        worst = max(worst, float(np.max(tw.norm(i, vals))))
    return worst


def solve_picard(problem: PicardProblem, grid_n: int | None = None, max_iter: int = 200, tol: float = 1e-12) -> FlowResult:
    """Picard iteration per level on ``[t0 - a, t0 + a]``.

    ``grid_n`` defaults to 256 nodes per unit time.  If the sampled sup of
    ``p_i(phi(t, x0))`` exceeds the declared ``M1`` the run falls back to RK4
    on the same grid and warns.
    """
    tw = problem.rhs.tower
    a = problem.a
    times, c = _grid(problem.t0, a, grid_n)
    m1 = sampled_M1(problem, times)
    if m1 > problem.M1 * (1 + 1e-12):
        msg = f"declared M1={problem.M1:g} is below sampled sup {m1:g}; falling back to RK4"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        step = times[1] - times[0]
        back = solve_rk4(problem.rhs, problem.x0, (problem.t0, problem.t0 - a), step)
        fwd = solve_rk4(problem.rhs, problem.x0, (problem.t0, problem.t0 + a), step)
        trajs = tuple(np.vstack([b[::-1], f[1:]]) for b, f in zip(back.trajectories, fwd.trajectories))
        ts = np.concatenate([back.times[::-1], fwd.times[1:]])
        return FlowResult(ts, trajs, _consistency_profile(tw, trajs), "rk4", notes=(msg,))

    trajs, iters, all_changes, gaps, ode_res = [], 0, [], [], 0.0
    for i, f in enumerate(problem.rhs.maps):
        x0 = np.asarray(problem.x0[i], dtype=float)
        norm = tw.levels[i].norm
        init = np.broadcast_to(x0, (len(times), len(x0))).copy()
        X, it, ch = _picard_level(f, norm, times, c, x0, init, tol, max_iter)
        # uniqueness spot check: a different initial iterate must reach the same fixed point
        bump = 0.1 * max(1.0, float(norm(x0))) * np.sin(np.pi * (times - problem.t0) / a)[:, None]
        X2, _, _ = _picard_level(f, norm, times, c, x0, init + bump, tol, max_iter)
        gaps.append(float(np.max(norm(X - X2))))
        ode_res = max(ode_res, _midpoint_residual(f, norm, times, X))
        trajs.append(X)
        iters = max(iters, it)
        if len(ch) > len(all_changes):
            all_changes = ch
    trajs = tuple(trajs)
    return FlowResult(
        times, trajs, _consistency_profile(tw, trajs), "picard", iters, tuple(all_changes), max(gaps), ode_res
    )


def solve_rk4(rhs: TimeDependentFamily | ProjectiveMapFamily, x0: ThreadVector, t_span, step: float) -> FlowResult:
    """Classical fixed-step RK4 per level; ``t_span`` may run backwards."""
    if isinstance(rhs, ProjectiveMapFamily):
        rhs = TimeDependentFamily.autonomous(rhs)
    ta, tb = map(float, t_span)
    if not step > 0:
        raise DomainError(f"step must be positive, got {step}")
    n = max(1, math.ceil(abs(tb - ta) / step - 1e-9))
    h = (tb - ta) / n
    times = ta + h * np.arange(n + 1)
    times[-1] = tb
    trajs = []
    for i, f in enumerate(rhs.maps):
        x = np.asarray(x0[i], dtype=float).copy()
        out = np.empty((n + 1, len(x)))
        out[0] = x
        try:
            for k in range(n):
                t = times[k]
                k1 = np.asarray(f(t, x), dtype=float)
                k2 = np.asarray(f(t + h / 2, x + h / 2 * k1), dtype=float)
                k3 = np.asarray(f(t + h / 2, x + h / 2 * k2), dtype=float)
                k4 = np.asarray(f(t + h, x + h * k3), dtype=float)
                x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                out[k + 1] = x
        except DarbouxError as exc:
            raise EvaluationFailure(f"rhs failed on level {i} at t={t:g}: {exc}") from exc
        trajs.append(out)
    trajs = tuple(trajs)
    return FlowResult(times, trajs, _consistency_profile(rhs.tower, trajs), "rk4")


class Flow:
    """Flow ``F(t, p)`` of a bounded autonomous projective field for ``|t| <= epsilon``."""

    certificate = "sampled bound"

    def __init__(self, family: ProjectiveMapFamily, mu: float, M: float, step: float | None = None):
        self.family = family
        self.mu = float(mu)
        self.M = float(M)
        self.epsilon = 1.0 / (self.M + self.mu)
        self.step = self.epsilon / 256 if step is None else float(step)

    def trajectory(self, p: ThreadVector, t: float) -> FlowResult:
        if abs(t) > self.epsilon * (1 + 1e-12):
            raise DomainError(f"|t|={abs(t):g} exceeds the flow interval epsilon={self.epsilon:g}")
        if t == 0:
            trajs = tuple(np.asarray(c, dtype=float)[None, :] for c in p.components)
            return FlowResult(np.zeros(1), trajs, np.zeros(1), "rk4")
        return solve_rk4(self.family, p, (0.0, t), self.step)

    def __call__(self, t: float, p: ThreadVector) -> ThreadVector:
        if t == 0:
            return p
        return self.trajectory(p, t).final()


def flow_map(family: ProjectiveMapFamily, mu: float, M: float, samples: Sequence[ThreadVector] = (),
             step: float | None = None) -> Flow:
    """Flow map on ``[-1/(M+mu), 1/(M+mu)]`` after checking ``||X_i|| <= M`` on ``samples``."""
    if not M > 0 or mu < 0:
        raise DomainError(f"need M > 0 and mu >= 0, got M={M}, mu={mu}")
    tw = family.tower
    for p in samples:
        for i, v in enumerate(family.evaluate(p)):
            nv = float(tw.norm(i, v))
            if nv > M:
                raise BoundViolation(f"sampled ||X_{i}|| = {nv:g} exceeds M = {M:g}", nv, M)
    return Flow(family, mu, M, step)


@dataclass(frozen=True)
class LipschitzEstimate:
    per_level: tuple[float, ...]
    overall: float


def estimate_lipschitz(family: ProjectiveMapFamily, domain_box, samples: int = 200, seed: int = 0) -> LipschitzEstimate:
    """Largest difference quotient ``||f(x)-f(y)||_i / ||x-y||_i`` over sampled pairs.

    ``domain_box = (low, high)`` bounds the deepest-level coordinates; lower
    components are obtained through the connectors.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    tw = family.tower
    d = tw.dims[-1]
    low, high = (np.broadcast_to(np.asarray(b, dtype=float), (d,)) for b in domain_box)
    rng = np.random.default_rng(seed)
    tops = low + (high - low) * rng.random((samples, d))
    comps = tw.push(tops)
    iu, ju = np.triu_indices(samples, k=1)
    per_level = []
    for i, f in enumerate(family.maps):
        X = comps[i]
        F = np.array([np.asarray(f(x), dtype=float) for x in X])
        num = tw.norm(i, F[iu] - F[ju])
        den = tw.norm(i, X[iu] - X[ju])
        ok = den > 0
        per_level.append(float(np.max(num[ok] / den[ok], initial=0.0)))
    return LipschitzEstimate(tuple(per_level), max(per_level))


__all__ = [
    "solution_interval", "TimeDependentFamily", "PicardProblem", "FlowResult", "solve_picard", "solve_rk4",
    "Flow", "flow_map", "LipschitzEstimate", "estimate_lipschitz", "sampled_M1",
]
