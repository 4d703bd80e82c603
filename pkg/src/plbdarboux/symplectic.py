"""Position-dependent weak symplectic forms on a tower.

Conventions (per level ``i``, at a point ``x_i``):

* ``sigma(u, v) = u^T S(x) v`` with ``S`` antisymmetric.
* ``sigma^t = sigma_p + t (sigma - sigma_p)`` where ``sigma_p`` is frozen at
  the base point ``p``.
* flat: ``X -> sigma(X, .)``, the covector ``S^T X``.
* Whitening with the Cholesky factor ``G = C C^T`` turns every norm into a
  Euclidean one; the gram-weighted matrix is ``W = C^{-1} S^T C^{-T}``.
  ``||X||_F = ||W C^T X||`` and ``||(flat)^{-1}||_op = 1 / s_min(W)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CompatibilityViolation, ShapeMismatch, SingularForm
from .forms import FormFunction, fd_derivative
from .tower import H_FD, ThreadVector, Tower, check_thread, make_thread

SIGMA_MIN_TOL = 1e-10
KAPPA_MAX = 1e3
ANTISYM_TOL = 1e-12


def _solve(A, b):
    """Batched ``A x = b`` for vector right-hand sides."""
    return np.linalg.solve(A, b[..., None])[..., 0]


class SymplecticField:
    """Levelwise forms ``S_i`` on a tower with a frozen base point.

    Immutable after construction.  ``forms[i]`` evaluates level ``i``.
    """

    def __init__(
        self,
        tower: Tower,
        forms: Sequence[FormFunction],
        base_point: ThreadVector | None = None,
        sigma_min_tol: float = SIGMA_MIN_TOL,
        kappa_max: float = KAPPA_MAX,
        h_fd: float = H_FD,
    ):
        if len(forms) != tower.depth:
            raise ShapeMismatch(f"need {tower.depth} level forms, got {len(forms)}")
        for i, (f, d) in enumerate(zip(forms, tower.dims)):
            if f.dim != d:
                raise ShapeMismatch(f"level {i}: form dim {f.dim} != level dim {d}")
        self.tower = tower
        self.forms = tuple(forms)
        self.base_point = base_point if base_point is not None else make_thread(tower, np.zeros(tower.dims[-1]))
        self.sigma_min_tol = float(sigma_min_tol)
        self.kappa_max = float(kappa_max)
        self.h_fd = float(h_fd)
        self._cinv = tuple(np.linalg.inv(lv.chol) for lv in tower.levels)
        base = []
        for i, f in enumerate(self.forms):
            S = np.array(f.matrix(self.base_point[i]), dtype=float)
            asym = np.abs(S + S.T).max()
            if asym > ANTISYM_TOL:
                raise ShapeMismatch(f"level {i}: form is not antisymmetric at the base point ({asym:.2e})")
            S.setflags(write=False)
            base.append(S)
        self.base_matrices = tuple(base)
        for i in range(tower.depth):
            s = float(min_singular_value(self, i, self.base_point[i], 1.0))
            if s < self.sigma_min_tol:
                raise SingularForm(f"level {i}: form is degenerate at the base point", s)

    @classmethod
    def uniform(cls, tower: Tower, form: FormFunction, **kw) -> "SymplecticField":
        return cls(tower, [form] * tower.depth, **kw)

    def matrix(self, level: int, x, t: float = 1.0) -> np.ndarray:
        """``S^t`` at ``x`` (batched over leading axes of ``x``)."""
        S = self.forms[level].matrix(x)
        if t == 1.0:
            return S
        Sp = self.base_matrices[level]
        return Sp + t * (S - Sp)

    def deviation(self, level: int, x) -> np.ndarray:
        return self.forms[level].matrix(x) - self.base_matrices[level]

    def derivative(self, level: int, x, exact: bool = True) -> np.ndarray:
        """``dS/dx_c`` on the last axis; exact when available and requested."""
        form = self.forms[level]
        if exact and form.has_derivative:
            return form.derivative(x)
        return fd_derivative(form, x, self.h_fd)

    def weighted(self, level: int, x, t: float = 1.0) -> np.ndarray:
        Ci = self._cinv[level]
        return Ci @ np.swapaxes(self.matrix(level, x, t), -1, -2) @ Ci.T

    def whiten(self, level: int, X) -> np.ndarray:
        """``C^T X``: coordinates in which the level norm is Euclidean."""
        return np.asarray(X, dtype=float) @ self.tower.levels[level].chol


@dataclass(frozen=True)
class MoserDeformation:
    """Affine path ``sigma^t = sigma_p + t (sigma - sigma_p)``, ``t`` in [-1, 1]."""

    field: SymplecticField

    @property
    def base_matrices(self):
        return self.field.base_matrices

    def at(self, level: int, x, t: float) -> np.ndarray:
        if not -1.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [-1, 1], got {t}")
        if t == 0.0:
            return np.broadcast_to(self.field.base_matrices[level], np.shape(x)[:-1] + self.field.base_matrices[level].shape).copy()
        return self.field.matrix(level, x, t)

    def sigma_bar(self, level: int, x) -> np.ndarray:
        return self.field.deviation(level, x)


@dataclass(frozen=True)
class OneFormThread:
    """Per-level covectors attached to a point thread."""

    components: tuple[np.ndarray, ...]
    point: ThreadVector

    def __getitem__(self, i: int) -> np.ndarray:
        return self.components[i]

    def psi_residual(self, field: SymplecticField, t: float = 1.0) -> float:
        """max over j > i of the dual-norm gap ``||psi_ji(alpha^j) - alpha^i||``."""
        worst = 0.0
        for j, i in field.tower.pairs():
            gap = psi_ji(field, self.point, j, i, self.components[j], t) - self.components[i]
            worst = max(worst, float(field.tower.levels[i].dual_norm(gap)))
        return worst


def _shape(field: SymplecticField, level: int, *vecs):
    d = field.tower.dims[level]
    for v in vecs:
        if np.shape(v)[-1:] != (d,):
            raise ShapeMismatch(f"level {level}: expected vectors of length {d}, got shape {np.shape(v)}")


def flat(field: SymplecticField, level: int, x_i, X, t: float = 1.0) -> np.ndarray:
    """Covector ``c`` with ``c(v) = sigma^t_x(X, v)``."""
    _shape(field, level, x_i, X)
    S = field.matrix(level, x_i, t)
    return np.einsum("...ab,...a->...b", S, np.asarray(X, dtype=float))


def f_norm(field: SymplecticField, level: int, x_i, X, t: float = 1.0) -> float:
    """``sup_{||Y||_i = 1} |sigma_x(X, Y)| = sqrt(c^T G^{-1} c)``."""
    c = flat(field, level, x_i, X, t)
    return field.tower.levels[level].dual_norm(c)


def _svd(field, level, x_i, t):
    return np.linalg.svd(field.weighted(level, x_i, t))


def min_singular_value(field: SymplecticField, level: int, x, t: float = 1.0) -> np.ndarray:
    """Smallest gram-weighted singular value of ``S^t`` (batched)."""
    return np.linalg.svd(field.weighted(level, x, t), compute_uv=False)[..., -1]


def _require_nonsingular(field, level, s_min):
    if s_min < field.sigma_min_tol:
        raise SingularForm(
            f"level {level}: smallest weighted singular value {s_min:.3e} below {field.sigma_min_tol:.0e}", float(s_min)
        )


def op_norm_flat(field: SymplecticField, level: int, x_i, t: float = 1.0) -> float:
    """Operator norm of ``flat`` from ``(E_i, ||.||_i)`` into the F-dual.

    In whitened coordinates the F-dual norm of ``flat(X)`` is the length of
    the projection of ``X`` onto the range of ``W``; the norm is therefore at
    most one, with equality for nondegenerate forms.
    """
    _shape(field, level, x_i)
    U, s, _ = _svd(field, level, x_i, t)
    _require_nonsingular(field, level, s[-1])
    rank = int(np.sum(s > s[0] * np.finfo(float).eps * len(s)))
    return float(np.linalg.norm(U[:, :rank], 2))


def flat_dual_norm(field: SymplecticField, level: int, x_i, X, t: float = 1.0) -> float:
    """F-dual norm of ``sigma(X, .)``; never exceeds ``||X||_i``."""
    _shape(field, level, x_i, X)
    U, s, _ = _svd(field, level, x_i, t)
    rank = int(np.sum(s > s[0] * np.finfo(float).eps * len(s))) if s[0] > 0 else 0
    return float(np.linalg.norm(U[:, :rank].T @ field.whiten(level, X)))


def dual_f_norm(field: SymplecticField, level: int, x_i, c, t: float = 1.0) -> float:
    """F-dual norm ``sup |c(Y)| / ||Y||_F`` of an arbitrary covector (``inf`` off the image)."""
    _shape(field, level, x_i, c)
    _, s, Vt = _svd(field, level, x_i, t)
    chat = field._cinv[level] @ np.asarray(c, dtype=float)
    z = Vt @ chat
    cut = s[0] * np.finfo(float).eps * len(s) if s[0] > 0 else 0.0
    keep = s > cut
    if np.any(np.abs(z[~keep]) > 1e-12 * max(1.0, np.linalg.norm(chat))):
        return float("inf")
    return float(np.linalg.norm(z[keep] / s[keep]))


def op_norm_sharp_inverse(field: SymplecticField, level: int, x_i, t: float = 1.0) -> float:
    """``||((sigma^t)^flat)^{-1}||_op`` from ``(E_i^*, dual norm)`` to ``(E_i, ||.||_i)``."""
    _shape(field, level, x_i)
    s = np.linalg.svd(field.weighted(level, x_i, t), compute_uv=False)
    _require_nonsingular(field, level, s[-1])
    return float(1.0 / s[-1])


def norm_equivalence(field: SymplecticField, level: int, x_i, t: float = 1.0) -> float:
    """Smallest ``kappa`` with F-dual norms at ``x`` and at the base within factor ``kappa``."""
    Wx = field.weighted(level, x_i, t)
    Wp = field.weighted(level, field.base_point[level], 1.0)
    a = np.linalg.norm(np.linalg.solve(Wx.T, Wp.T), 2)
    b = np.linalg.norm(np.linalg.solve(Wp.T, Wx.T), 2)
    return float(max(a, b))


def sharp(field: SymplecticField, x: ThreadVector, alpha: OneFormThread, t: float = 1.0,
          tol: float | None = None) -> ThreadVector:
    """Solve ``flat(X_i) = alpha^i`` on every level and certify the result is a thread."""
    comps = []
    for i in range(field.tower.depth):
        _shape(field, i, x[i], alpha[i])
        W_s = min_singular_value(field, i, x[i], t)
        _require_nonsingular(field, i, float(W_s))
        A = field.matrix(i, x[i], t).T
        comps.append(np.linalg.solve(A, np.asarray(alpha[i], dtype=float)))
    check = check_thread(field.tower, comps, tol)
    if not check.passed:
        raise CompatibilityViolation(
            f"levelwise sharp solutions do not form a thread (residual {check.max_residual:.3e})", check.max_residual
        )
    return ThreadVector(tuple(comps))


def psi_ji(field: SymplecticField, x: ThreadVector, j: int, i: int, alpha_j, t: float = 1.0) -> np.ndarray:
    """``S_i(x_i)^T L_ji (S_j(x_j)^T)^{-1} alpha_j``."""
    if j < i:
        raise ValueError(f"psi_ji needs j >= i, got j={j}, i={i}")
    _shape(field, j, x[j], alpha_j)
    _require_nonsingular(field, j, float(min_singular_value(field, j, x[j], t)))
    Xj = np.linalg.solve(field.matrix(j, x[j], t).T, np.asarray(alpha_j, dtype=float))
    return field.matrix(i, x[i], t).T @ (field.tower.composite(j, i) @ Xj)


@dataclass(frozen=True)
class ClosednessCheck:
    residual: float
    passed: bool


def exterior_derivative(field: SymplecticField, level: int, x_i, h_fd: float | None = None) -> np.ndarray:
    """``d sigma(e_a, e_b, e_c)`` for all index triples by central differences."""
    dS = fd_derivative(field.forms[level], np.asarray(x_i, dtype=float), field.h_fd if h_fd is None else h_fd)
    # d_a S_bc + d_b S_ca + d_c S_ab
    return np.einsum("bca->abc", dS) + np.einsum("cab->abc", dS) + dS


def check_closed(field: SymplecticField, level: int, x_i, tol: float = 1e-8, h_fd: float | None = None) -> ClosednessCheck:
    d = field.tower.dims[level]
    _shape(field, level, x_i)
    if d < 3:
        return ClosednessCheck(0.0, True)
    D = exterior_derivative(field, level, x_i, h_fd)
    res = max(abs(D[a, b, c]) for a in range(d) for b in range(a + 1, d) for c in range(b + 1, d))
    return ClosednessCheck(float(res), bool(res <= tol))


@dataclass(frozen=True)
class CompatibilityReport:
    max_residual: float
    per_pair: dict[tuple[int, int], float]
    passed: bool
    psi_flat_residual: float


def check_compatibility(field: SymplecticField, samples: Sequence[ThreadVector], n_vectors: int = 8,
                        seed: int = 0, tol: float | None = None) -> CompatibilityReport:
    """Check that ``flat`` is a projective system of maps at the sampled points.

    For ``u_j`` at level ``j`` the covector ``psi_ji(flat_j u_j)`` restricted back
    to level ``j`` through ``L_ji^T`` must reproduce ``flat_j u_j``; this is the
    statement that ``sigma^j`` is the restriction of ``sigma^i``.  The residual
    is measured in the level-``j`` dual norm.  ``psi_flat_residual`` reports the
    relation ``psi_ji o flat_j = flat_i o L_ji`` as a consistency check of the
    ``psi`` implementation itself.
    """
    tw = field.tower
    tol = tw.tol_thread if tol is None else tol
    rng = np.random.default_rng(seed)
    per_pair = {pair: 0.0 for pair in tw.pairs()}
    psi_flat = 0.0
    for x in samples:
        for j, i in tw.pairs():
            L = tw.composite(j, i)
            for _ in range(n_vectors):
                u = rng.standard_normal(tw.dims[j])
                cj = flat(field, j, x[j], u)
                pushed = psi_ji(field, x, j, i, cj)
                psi_flat = max(psi_flat, float(tw.levels[i].dual_norm(pushed - flat(field, i, x[i], L @ u))))
                r = float(tw.levels[j].dual_norm(L.T @ pushed - cj))
                per_pair[(j, i)] = max(per_pair[(j, i)], r)
    worst = max(per_pair.values(), default=0.0)
    return CompatibilityReport(worst, per_pair, worst <= tol, psi_flat)


def pfaffian(A) -> np.ndarray:
    """Batched Pfaffian of antisymmetric matrices (skew Gaussian elimination with pivoting).

    ``pf(A)**2 == det(A)`` and ``pf(B^T A B) = det(B) pf(A)``, so its sign
    changes exactly when a continuous path of forms passes through a
    degenerate one.  Odd dimensions give 0.
    """
    A = np.array(A, dtype=float)
    batch = A.shape[:-2]
    d = A.shape[-1]
    A = A.reshape((-1, d, d))
    n = A.shape[0]
    pf = np.ones(n)
    if d % 2:
        return np.zeros(batch)
    rows = np.arange(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(0, d - 1, 2):
            kp = k + 1 + np.argmax(np.abs(A[:, k + 1:, k]), axis=1)
            swap = kp != k + 1
            if np.any(swap):
                tmp = A[rows, k + 1, :].copy()
                A[rows, k + 1, :] = A[rows, kp, :]
                A[rows, kp, :] = tmp
                tmp = A[rows, :, k + 1].copy()
                A[rows, :, k + 1] = A[rows, :, kp]
                A[rows, :, kp] = tmp
                pf = np.where(swap, -pf, pf)
            piv = A[:, k, k + 1]
            pf = pf * piv
            if k + 2 < d:
                tau = np.where(piv[:, None] != 0, A[:, k, k + 2:] / piv[:, None], 0.0)
                col = A[:, k + 2:, k + 1]
                A[:, k + 2:, k + 2:] += tau[:, :, None] * col[:, None, :] - col[:, :, None] * tau[:, None, :]
    return pf.reshape(batch)


def check_antisymmetry(field: SymplecticField, level: int, x) -> float:
    S = field.matrix(level, x)
    return float(np.abs(S + np.swapaxes(S, -1, -2)).max())


__all__ = [
    "pfaffian", "SymplecticField", "MoserDeformation", "OneFormThread", "flat", "f_norm", "flat_dual_norm", "dual_f_norm",
    "op_norm_flat", "op_norm_sharp_inverse", "norm_equivalence", "min_singular_value", "sharp", "psi_ji",
    "check_closed", "exterior_derivative", "check_compatibility", "check_antisymmetry",
]
