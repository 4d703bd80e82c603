"""Moser path method on a tower: primitive, Moser field, isotopy, Darboux certificate.

With ``sigma^t = sigma_p + t (sigma - sigma_p)`` and a primitive ``alpha``
satisfying ``d alpha = sigma - sigma_p`` and ``alpha_0 = 0``, the field
``Y_t`` defined by ``sigma^t(Y_t, .) = -alpha`` has a flow ``phi_t`` with
``phi_t^* sigma^t = sigma_p`` for all ``t``.  ``Phi = phi_1`` is the chart.

The primitive is the radial homotopy
``alpha_x = int_0^1 s * (S(s x) - S_p)^T x ds`` (Gauss-Legendre), valid on
star-shaped domains around the base point 0.

Everything below the public functions is batched: per level, arrays of
points have shape ``(n, d)`` and Jacobians ``(n, d, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import BoundViolation, DarbouxError, EvaluationFailure, SingularForm
from .report import DarbouxReport
from .symplectic import MoserDeformation, OneFormThread, SymplecticField, pfaffian, sharp
from .tower import H_FD, ThreadVector, Tower

QUAD_N = 8


def _solve_vec(A, b):
    return np.linalg.solve(A, b[..., None])[..., 0]


def _safe_solve(A, B, vector: bool):
    """Batched solve; singular batch members come back as NaN instead of raising."""
    rhs = B[..., None] if vector else B
    try:
        out = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        out = np.full(np.broadcast_shapes(A.shape[:-2], rhs.shape[:-2]) + rhs.shape[-2:], np.nan)
        flatA = A.reshape((-1,) + A.shape[-2:])
        flatB = np.broadcast_to(rhs, A.shape[:-2] + rhs.shape[-2:]).reshape((-1,) + rhs.shape[-2:])
        flatO = out.reshape((-1,) + rhs.shape[-2:])
        for k in range(flatA.shape[0]):
            try:
                flatO[k] = np.linalg.solve(flatA[k], flatB[k])
            except np.linalg.LinAlgError:
                pass
    return out[..., 0] if vector else out


class MoserField:
    """Primitive ``alpha`` and Moser field ``Y_t`` for a symplectic field.

    ``M`` and ``mu`` are optional declared bounds: ``M`` is enforced on sampled
    speeds during integration, both feed the Picard window length.
    """

    def __init__(self, field: SymplecticField, quad_n: int = QUAD_N, exact_jacobian: bool = True,
                 M: float | None = None, mu: float | None = None):
        if quad_n < 1:
            raise ValueError("quad_n must be positive")
        self.field = field
        self.deformation = MoserDeformation(field)
        self.quad_n = int(quad_n)
        self.exact_jacobian = bool(exact_jacobian)
        self.M = M
        self.mu = mu
        nodes, weights = leggauss(self.quad_n)
        self._s = 0.5 * (nodes + 1.0)
        self._w = 0.5 * weights

    @property
    def tower(self) -> Tower:
        return self.field.tower

    def _nodes(self, x):
        x = np.asarray(x, dtype=float)
        return x, self._s.reshape((-1,) + (1,) * x.ndim) * x

    def alpha(self, level: int, x) -> np.ndarray:
        x, xs = self._nodes(x)
        Sbar = self.field.deviation(level, xs)
        return np.einsum("k,k...ba,...b->...a", self._w * self._s, Sbar, x)

    def alpha_jacobian(self, level: int, x) -> np.ndarray:
        """``J[..., a, c] = d alpha_a / d x_c``."""
        x, xs = self._nodes(x)
        Sbar = self.field.deviation(level, xs)
        dS = self.field.derivative(level, xs, self.exact_jacobian)
        radial = np.einsum("k,k...bac,...b->...ac", self._w * self._s ** 2, dS, x)
        return radial + np.einsum("k,k...ca->...ac", self._w * self._s, Sbar)

    def velocity(self, level: int, t: float, x) -> np.ndarray:
        A = np.swapaxes(self.field.matrix(level, x, t), -1, -2)
        return -_safe_solve(A, self.alpha(level, x), vector=True)

    def velocity_and_jacobian(self, level: int, t: float, x):
        x = np.asarray(x, dtype=float)
        A = np.swapaxes(self.field.matrix(level, x, t), -1, -2)
        Y = -_safe_solve(A, self.alpha(level, x), vector=True)
        dS = self.field.derivative(level, x, self.exact_jacobian)
        # d_c (S^t)^T = t (d_c S)^T
        coupling = t * np.einsum("...bac,...b->...ac", dS, Y)
        DY = -_safe_solve(A, self.alpha_jacobian(level, x) + coupling, vector=False)
        return Y, DY

    def primitive(self, x: ThreadVector) -> OneFormThread:
        return poincare_primitive(self.deformation, x, self.quad_n)

    def vector_field(self, t: float, x: ThreadVector) -> ThreadVector:
        return moser_vector_field(self.field, self.primitive, t, x)


def poincare_primitive(deformation: MoserDeformation, x: ThreadVector, quad_n: int = QUAD_N) -> OneFormThread:
    """Radial-homotopy primitive of ``sigma - sigma_p`` at the thread ``x``."""
    m = MoserField(deformation.field, quad_n)
    comps = []
    for i, xi in enumerate(x.components):
        try:
            a = m.alpha(i, xi)
        except DarbouxError:
            raise
        except Exception as exc:  # user forms may fail anywhere on the segment
            raise EvaluationFailure(f"level {i}: form evaluation failed on the segment to x: {exc}") from exc
        if not np.all(np.isfinite(a)):
            raise EvaluationFailure(f"level {i}: non-finite primitive at x")
        comps.append(a)
    return OneFormThread(tuple(comps), x)


def moser_vector_field(field: SymplecticField, alpha_eval: Callable[[ThreadVector], OneFormThread],
                       t: float, x: ThreadVector) -> ThreadVector:
    """``Y_t(x)`` solving ``sigma^t(Y, .) = -alpha_x`` on every level, certified as a thread."""
    alpha = alpha_eval(x)
    neg = OneFormThread(tuple(-np.asarray(c) for c in alpha.components), x)
    return sharp(field, x, neg, t)


@dataclass(frozen=True)
class Isotopy:
    times: np.ndarray
    positions: tuple[np.ndarray, ...]  # level i: (len(times), d_i)
    jacobians: tuple[np.ndarray, ...] | None  # level i: (len(times), d_i, d_i)
    consistency: np.ndarray
    min_singular_value: float
    max_speed: float
    method: str

    def at(self, k: int) -> ThreadVector:
        return ThreadVector(tuple(p[k] for p in self.positions))


@dataclass
class _Batch:
    positions: np.ndarray  # (len(t_nodes), n, d)
    jacobians: np.ndarray | None  # (len(t_nodes), n, d, d)
    smin: np.ndarray  # (n,) smallest weighted singular value of S^t met along the path
    speed: np.ndarray  # (n,) max ||Y_t||_i met along the path


def _integrate_batch(moser: MoserField, level: int, X0, t_nodes, step: float, variational: bool) -> _Batch:
    """Fixed-step RK4 for all rows of ``X0`` at once, hitting every ``t_nodes`` entry."""
    f = moser.field
    lv = f.tower.levels[level]
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    n, d = X0.shape
    x = X0.copy()
    J = np.broadcast_to(np.eye(d), (n, d, d)).copy() if variational else None
    smin = np.full(n, np.inf)
    speed = np.zeros(n)
    # a sign change of pf(S^t(x)) between steps means the path jumped over a degenerate form
    sign0 = np.sign(pfaffian(f.matrix(level, x, t_nodes[0])))
    pos = [x.copy()]
    jac = [J.copy()] if variational else None

    def stage(t, y, Jy):
        W = f.weighted(level, y, t)
        s = np.linalg.svd(np.where(np.isfinite(W), W, 0.0), compute_uv=False)[:, -1]
        np.minimum(smin, np.where(np.isfinite(s), s, 0.0), out=smin)
        if variational:
            Y, DY = moser.velocity_and_jacobian(level, t, y)
            kJ = DY @ Jy
        else:
            Y, kJ = moser.velocity(level, t, y), None
        np.maximum(speed, np.where(np.isfinite(Y).all(axis=1), lv.norm(Y), np.inf), out=speed)
        return Y, kJ

    with np.errstate(invalid="ignore", over="ignore"):
        for ta, tb in zip(t_nodes[:-1], t_nodes[1:]):
            m = max(1, math.ceil((tb - ta) / step - 1e-9))
            h = (tb - ta) / m
            for k in range(m):
                t = ta + k * h
                k1, j1 = stage(t, x, J)
                k2, j2 = stage(t + h / 2, x + h / 2 * k1, J + h / 2 * j1 if variational else None)
                k3, j3 = stage(t + h / 2, x + h / 2 * k2, J + h / 2 * j2 if variational else None)
                k4, j4 = stage(t + h, x + h * k3, J + h * j3 if variational else None)
                x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                if variational:
                    J = J + h / 6 * (j1 + 2 * j2 + 2 * j3 + j4)
                crossed = np.sign(pfaffian(np.nan_to_num(f.matrix(level, x, t + h)))) != sign0
                smin[crossed] = 0.0
            pos.append(x.copy())
            if variational:
                jac.append(J.copy())
    return _Batch(np.array(pos), np.array(jac) if variational else None, smin, speed)


def _picard_isotopy(moser: MoserField, level: int, x0, nodes_per_unit: int = 256, tol: float = 1e-12,
                    max_iter: int = 200):
    from .picard import _picard_level  # fixed-point kernel shared with solve_picard

    if moser.M is None or moser.mu is None:
        raise ValueError("the Picard route needs declared bounds M and mu")
    a = min(1.0, 1.0 / (moser.M + moser.mu))
    norm = moser.tower.levels[level].norm
    f = lambda t, y: moser.velocity(level, t, y)  # noqa: E731
    times_all, pos_all = [0.0], [np.asarray(x0, dtype=float)]
    start, x = 0.0, np.asarray(x0, dtype=float)
    while start < 1.0 - 1e-15:
        end = min(1.0, start + a)
        n = max(3, math.ceil(nodes_per_unit * (end - start)) + 1)
        times = np.linspace(start, end, n)
        init = np.broadcast_to(x, (n, len(x))).copy()
        X, _, _ = _picard_level(f, norm, times, 0, x, init, tol, max_iter)
        times_all.extend(times[1:])
        pos_all.extend(X[1:])
        start, x = end, X[-1]
    return np.array(times_all), np.array(pos_all)


def _level_consistency(tower: Tower, positions: Sequence[np.ndarray]) -> np.ndarray:
    """Thread residual along the last axis pair ``(..., d_i)``, maxed over pairs."""
    out = np.zeros(positions[0].shape[:-1])
    for j, i in tower.pairs():
        L = tower.composite(j, i)
        out = np.maximum(out, tower.norm(i, positions[j] @ L.T - positions[i]))
    return out


def integrate_isotopy(moser: MoserField, x0: ThreadVector, method: str = "rk4", step: float = 1e-3,
                      t_eval: Sequence[float] | None = None, variational: bool = True) -> Isotopy:
    """Flow ``phi_t(x0)`` of the Moser field for ``t`` in [0, 1].

    ``rk4`` integrates the variational equation alongside (``jacobians``);
    ``picard`` runs windowed Picard iteration and returns positions only.
    """
    tw = moser.tower
    if method == "picard":
        res = [_picard_isotopy(moser, i, x0[i]) for i in range(tw.depth)]
        times = res[0][0]
        positions = tuple(p for _, p in res)
        speed = max(float(np.max(tw.norm(i, moser.velocity(i, 1.0, p)))) for i, p in enumerate(positions))
        return Isotopy(times, positions, None, _level_consistency(tw, positions), float("nan"), speed, "picard")
    if method != "rk4":
        raise ValueError(f"unknown method {method!r}")
    nodes = np.unique(np.concatenate([[0.0, 1.0], np.asarray(t_eval if t_eval is not None else [], dtype=float)]))
    if nodes[0] < 0 or nodes[-1] > 1:
        raise ValueError("t_eval must lie in [0, 1]")
    batches = [_integrate_batch(moser, i, np.asarray(x0[i])[None, :], nodes, step, variational) for i in range(tw.depth)]
    smin = min(float(b.smin[0]) for b in batches)
    speed = max(float(b.speed[0]) for b in batches)
    if smin < moser.field.sigma_min_tol or not all(np.all(np.isfinite(b.positions)) for b in batches):
        raise SingularForm(f"sigma^t degenerates along the isotopy (min weighted singular value {smin:.3e})", smin)
    if moser.M is not None and speed > moser.M:
        raise BoundViolation(f"sampled Moser speed {speed:g} exceeds M = {moser.M:g}", speed, moser.M)
    positions = tuple(b.positions[:, 0] for b in batches)
    jacobians = tuple(b.jacobians[:, 0] for b in batches) if variational else None
    return Isotopy(nodes, positions, jacobians, _level_consistency(tw, positions), smin, speed, "rk4")


def _pullback_gap(field: SymplecticField, level: int, t: float, y, J) -> np.ndarray:
    """``max |J^T S^t(y) J - S_p|`` over entries, batched over leading axes."""
    S = field.matrix(level, y, t)
    pulled = np.swapaxes(J, -1, -2) @ S @ J
    return np.abs(pulled - field.base_matrices[level]).max(axis=(-2, -1))


def moser_invariant_drift(moser: MoserField, x0: ThreadVector, t_grid: Sequence[float], step: float = 1e-3) -> float:
    """max over ``t_grid`` and levels of ``|(phi_t^* sigma^t)(e_a, e_b) - sigma_p(e_a, e_b)|``."""
    t_grid = np.asarray(t_grid, dtype=float)
    iso = integrate_isotopy(moser, x0, "rk4", step, t_grid, variational=True)
    worst = 0.0
    for k, t in enumerate(iso.times):
        if not np.any(np.isclose(t_grid, t, rtol=0, atol=1e-15)):
            continue
        for i in range(moser.tower.depth):
            gap = _pullback_gap(moser.field, i, float(t), iso.positions[i][k], iso.jacobians[i][k])
            worst = max(worst, float(gap))
    return worst


@dataclass(frozen=True)
class DomainSpec:
    """Ball of ``radius`` (deepest-level norm) around 0, sampled with ``numpy.random.default_rng(seed)``."""

    radius: float = 0.5
    samples: int = 50
    seed: int = 0
    points: tuple[tuple[float, ...], ...] = ()

    def sample(self, tower: Tower) -> np.ndarray:
        d = tower.dims[-1]
        rng = np.random.default_rng(self.seed)
        u = rng.standard_normal((self.samples, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = self.radius * rng.random(self.samples) ** (1.0 / d)
        y = u * r[:, None]
        # whitened ball -> ||X||_top = r
        X = np.linalg.solve(tower.levels[-1].chol.T, y.T).T
        if self.points:
            X = np.vstack([X, np.asarray(self.points, dtype=float).reshape(-1, d)])
        return X


@dataclass(frozen=True)
class ChartOptions:
    step: float = 1e-3
    quad_n: int = QUAD_N
    t_grid_points: int = 11
    h1_t_points: int = 11
    variational: str = "exact"  # or "fd"
    refine: bool = True
    tol_pullback: float = 1e-6
    tol_drift: float = 1e-6
    tol_primitive: float | None = None  # default max(1e-6, 10 h_fd)
    tol_consistency: float = 1e-9
    tol_origin: float = 1e-10
    tol_closed: float = 1e-6
    M: float | None = None
    h4_max: float = 1e8
    h_fd: float = H_FD


def _primitive_residual(moser: MoserField, level: int, X, h_fd: float) -> np.ndarray:
    """``max |d alpha - sigma_bar|`` per sample, d alpha by central differences of alpha."""
    n, d = X.shape
    h = h_fd * np.maximum(1.0, np.abs(X).max(axis=1))[:, None]
    Dalpha = np.empty((n, d, d))  # [a, c] = d alpha_a / d x_c
    for c in range(d):
        e = np.zeros(d)
        e[c] = 1.0
        Dalpha[:, :, c] = (moser.alpha(level, X + h * e) - moser.alpha(level, X - h * e)) / (2 * h)
    dalpha = np.swapaxes(Dalpha, 1, 2) - Dalpha  # [a, b] = d_a alpha_b - d_b alpha_a
    return np.abs(dalpha - moser.field.deviation(level, X)).max(axis=(1, 2))


def _finite(v: float) -> float | None:
    return float(v) if np.isfinite(v) else None


def _flow_batches(moser, tower, tops, nodes, step, variational):
    comps = tower.push(tops)
    return [_integrate_batch(moser, i, comps[i], nodes, step, variational) for i in range(tower.depth)]


def _flow_metrics(field: SymplecticField, tower: Tower, batches, nodes):
    """Per-sample pullback at t=1, drift over nodes, level consistency, singularity."""
    n = batches[0].positions.shape[1]
    pull = np.zeros(n)
    drift = np.zeros(n)
    for i, b in enumerate(batches):
        for k, t in enumerate(nodes):
            with np.errstate(invalid="ignore", over="ignore"):
                gap = _pullback_gap(field, i, float(t), b.positions[k], b.jacobians[k])
            gap = np.where(np.isfinite(gap), gap, np.inf)
            drift = np.maximum(drift, gap)
            if k == len(nodes) - 1:
                pull = np.maximum(pull, gap)
    cons = _level_consistency(tower, [b.positions for b in batches])  # (len(nodes), n)
    cons = np.where(np.isfinite(cons), cons, np.inf).max(axis=0)
    smin = np.min([b.smin for b in batches], axis=0)
    speed = np.max([b.speed for b in batches], axis=0)
    return pull, drift, cons, smin, speed


def darboux_chart(tower: Tower, field: SymplecticField, domain_spec: DomainSpec,
                  opts: ChartOptions = ChartOptions()) -> DarbouxReport:
    """Run every hypothesis check and the Moser construction on a sampled ball.

    Failures become part of the verdict; nothing numeric is raised.
    """
    if field.tower is not tower:
        raise ValueError("field is defined on a different tower")
    moser = MoserField(field, opts.quad_n, exact_jacobian=(opts.variational == "exact"), M=opts.M)
    tops = domain_spec.sample(tower)
    n = len(tops)
    comps = tower.push(tops)
    tol_prim = opts.tol_primitive if opts.tol_primitive is not None else max(1e-6, 10 * opts.h_fd)
    sample_err: list[str | None] = [None] * n
    t_h1 = np.linspace(0.0, 1.0, opts.h1_t_points)

    # H1: invertibility of sigma^t and uniform equivalence of F-dual norms
    smin_samples = np.full(n, np.inf)
    kappa = 0.0
    for i in range(tower.depth):
        Wp = field.weighted(i, field.base_point[i], 1.0)
        for t in t_h1:
            W = field.weighted(i, comps[i], t)
            s = np.linalg.svd(W, compute_uv=False)
            smin_samples = np.minimum(smin_samples, s[:, -1])
            ok = s[:, -1] >= field.sigma_min_tol
            if np.any(ok):
                a = np.linalg.norm(np.linalg.solve(np.swapaxes(W[ok], 1, 2), np.broadcast_to(Wp.T, W[ok].shape)), 2, axis=(1, 2))
                b = np.linalg.norm(np.swapaxes(W[ok], 1, 2) @ np.linalg.inv(Wp.T), 2, axis=(1, 2))
                kappa = max(kappa, float(np.max(np.maximum(a, b))))
    h1_margin = float(np.min(smin_samples)) if n else float("inf")
    singular = smin_samples < field.sigma_min_tol
    for k in np.flatnonzero(singular):
        sample_err[k] = f"SingularForm: sigma^t degenerate at sample (min weighted singular value {smin_samples[k]:.3e})"
    if np.any(singular):
        kappa = float("inf")
    h1_pass = bool(h1_margin >= field.sigma_min_tol and kappa <= field.kappa_max)

    good = ~singular
    # H2: primitive
    prim_res, alpha0, closed_res = 0.0, 0.0, 0.0
    from .symplectic import check_closed

    for i in range(tower.depth):
        if np.any(good):
            prim_res = max(prim_res, float(np.max(_primitive_residual(moser, i, comps[i][good], opts.h_fd))))
        alpha0 = max(alpha0, float(np.abs(moser.alpha(i, np.zeros(tower.dims[i]))).max()))
        for x in comps[i][: min(n, 10)]:
            closed_res = max(closed_res, check_closed(field, i, x, h_fd=opts.h_fd).residual)
    h2_pass = bool(prim_res <= tol_prim and alpha0 <= 1e-10)

    # H3: ||X_i(x_i)||_i * ||(sigma^t flat)^{-1}||_op, with X = sharp(sigma, alpha)
    implied_M, max_speed, mu_hat = 0.0, 0.0, 0.0
    if np.any(good):
        for i in range(tower.depth):
            xg = comps[i][good]
            alpha = moser.alpha(i, xg)
            X = _solve_vec(np.swapaxes(field.matrix(i, xg), 1, 2), alpha)
            nX = tower.norm(i, X)
            for t in t_h1:
                s = np.linalg.svd(field.weighted(i, xg, t), compute_uv=False)[:, -1]
                implied_M = max(implied_M, float(np.max(nX / s)))
                Y = moser.velocity(i, t, xg)
                max_speed = max(max_speed, float(np.max(tower.norm(i, Y))))
                if len(xg) > 1:
                    iu, ju = np.triu_indices(len(xg), 1)
                    den = tower.norm(i, xg[iu] - xg[ju])
                    keep = den > 0
                    q = tower.norm(i, Y[iu] - Y[ju])[keep] / den[keep]
                    mu_hat = max(mu_hat, float(np.max(q, initial=0.0)))
    h3_pass = bool(np.isfinite(implied_M) and (opts.M is None or implied_M <= opts.M))

    # H4: sampled modulus of x -> (sigma_x flat)^{-1}
    modulus = 0.0
    if np.any(singular):
        modulus = float("inf")
    elif n > 1:
        for i in range(tower.depth):
            Winv = np.linalg.inv(field.weighted(i, comps[i], 1.0))
            iu, ju = np.triu_indices(n, 1)
            den = tower.norm(i, comps[i][iu] - comps[i][ju])
            keep = den > 0
            num = np.linalg.norm(Winv[iu] - Winv[ju], 2, axis=(1, 2))[keep]
            modulus = max(modulus, float(np.max(num / den[keep], initial=0.0)))
    h4_pass = bool(np.isfinite(modulus) and modulus <= opts.h4_max)

    # isotopy with variational equations on every admissible sample
    nodes = np.linspace(0.0, 1.0, opts.t_grid_points)
    pull = np.full(n, np.nan)
    drift = np.full(n, np.nan)
    cons = np.full(n, np.nan)
    phi1 = np.full_like(tops, np.nan)
    refinement = None
    idx = np.flatnonzero(good)
    if len(idx):
        batches = _flow_batches(moser, tower, tops[idx], nodes, opts.step, True)
        p, dr, c, smin_path, speed = _flow_metrics(field, tower, batches, nodes)
        pull[idx], drift[idx], cons[idx] = p, dr, c
        phi1[idx] = batches[-1].positions[-1]
        for k, s, fin in zip(idx, smin_path, np.isfinite(p)):
            if s < field.sigma_min_tol or not fin:
                sample_err[k] = f"SingularForm: sigma^t degenerates along the isotopy (min weighted singular value {s:.3e})"
        if opts.M is not None:
            for k, v in zip(idx, speed):
                if v > opts.M and sample_err[k] is None:
                    sample_err[k] = f"BoundViolation: Moser speed {v:.3e} exceeds M = {opts.M:g}"
        if opts.refine:
            fine = _flow_batches(moser, tower, tops[idx], nodes, opts.step / 2, True)
            p2, dr2, _, _, _ = _flow_metrics(field, tower, fine, nodes)
            with np.errstate(invalid="ignore"):
                dpos = float(np.nanmax(tower.norm(tower.top, batches[-1].positions[-1] - fine[-1].positions[-1])))
            refinement = {
                "half_step": opts.step / 2,
                "position_delta": _finite(dpos),
                "pullback_half_step": _finite(float(np.nanmax(p2))),
                "drift_half_step": _finite(float(np.nanmax(dr2))),
            }

    # the origin is a fixed point of every Y_t
    origin = 0.0
    for i in range(tower.depth):
        b = _integrate_batch(moser, i, np.zeros((1, tower.dims[i])), np.array([0.0, 1.0]), opts.step, False)
        origin = max(origin, float(np.max(tower.norm(i, b.positions[:, 0]))))

    ok = [k for k in range(n) if sample_err[k] is None]
    max_pull = float(np.max(pull[ok])) if ok else float("nan")
    max_drift = float(np.max(drift[ok])) if ok else float("nan")
    max_cons = float(np.max(cons[ok])) if ok else float("nan")

    failures = []
    if not h1_pass:
        failures.append("H1")
    if not h2_pass:
        failures.append("H2")
    if not h3_pass:
        failures.append("H3")
    if not h4_pass:
        failures.append("H4")
    if any(e is not None for e in sample_err):
        failures.append("sample errors")
    if not ok:
        failures.append("no admissible samples")
    else:
        if not max_pull <= opts.tol_pullback:
            failures.append("pullback")
        if not max_drift <= opts.tol_drift:
            failures.append("drift")
        if not max_cons <= opts.tol_consistency:
            failures.append("level consistency")
    if not origin <= opts.tol_origin:
        failures.append("origin")

    samples = []
    for k in range(n):
        samples.append({
            "index": k,
            "point": [float(v) for v in tops[k]],
            "phi1": [_finite(v) for v in phi1[k]],
            "pullback_residual": _finite(pull[k]),
            "drift": _finite(drift[k]),
            "level_consistency": _finite(cons[k]),
            "error": sample_err[k],
        })

    return DarbouxReport(
        verdict="pass" if not failures else "fail",
        hypotheses={
            "H1": {"min_singular_value": _finite(h1_margin) if n else None, "kappa": _finite(kappa),
                   "sigma_min_tol": field.sigma_min_tol, "kappa_max": field.kappa_max, "pass": h1_pass},
            "H2": {"primitive_residual": prim_res, "alpha_at_origin": alpha0, "closedness_residual": closed_res,
                   "tolerance": tol_prim, "pass": h2_pass},
            "H3": {"implied_M": _finite(implied_M), "declared_M": opts.M, "max_speed": _finite(max_speed),
                   "pass": h3_pass},
            "H4": {"modulus": _finite(modulus), "limit": opts.h4_max, "certificate": "sampled", "pass": h4_pass},
        },
        flow={
            "mu_hat": _finite(mu_hat),
            "max_speed": _finite(max_speed),
            "epsilon": _finite(1.0 / (max_speed + mu_hat)) if max_speed + mu_hat > 0 else None,
            "certificate": "sampled bound",
        },
        residuals={
            "pullback": _finite(max_pull),
            "drift": _finite(max_drift),
            "level_consistency": _finite(max_cons),
            "origin": origin,
            "refinement": refinement,
        },
        tolerances={
            "pullback": opts.tol_pullback, "drift": opts.tol_drift, "primitive": tol_prim,
            "consistency": opts.tol_consistency, "origin": opts.tol_origin, "sigma_min": field.sigma_min_tol,
            "kappa_max": field.kappa_max, "thread": tower.tol_thread,
        },
        settings={
            "step": opts.step, "quad_n": opts.quad_n, "t_grid_points": opts.t_grid_points,
            "variational": opts.variational, "radius": domain_spec.radius, "samples": n,
            "seed": domain_spec.seed, "depth": tower.depth, "dims": list(tower.dims),
        },
        samples=samples,
        failures=failures,
    )


__all__ = [
    "MoserField", "poincare_primitive", "moser_vector_field", "Isotopy", "integrate_isotopy",
    "moser_invariant_drift", "DomainSpec", "ChartOptions", "darboux_chart",
]
