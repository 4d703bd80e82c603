"""Finite towers of normed spaces, threads, and projective families of maps.

A tower is a chain ``E_0 <- E_1 <- ... <- E_{N-1}`` of finite-dimensional
spaces.  Level ``i`` carries the norm ``||x||_i = sqrt(x^T G_i x)`` and the
connector ``L_i`` maps level ``i+1`` to level ``i``.  The deepest level
``N-1`` stands in for the projective limit: a thread is determined by its
deepest component, and ``p_i(x) = ||L_{N-1,i} x||_i`` are the seminorms.

Levels are indexed from 0 (coarsest) to ``depth - 1`` (deepest).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import CompositionViolation, DiagramViolation, NonSPDGram, ShapeMismatch

TOL_THREAD = 1e-12
H_FD = 1e-5


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def _as_matrix(data, rows: int, cols: int, what: str) -> np.ndarray:
    """Accept nested lists or a flat row-major list."""
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1 and arr.size == rows * cols:
        arr = arr.reshape(rows, cols)
    if arr.shape != (rows, cols):
        raise ShapeMismatch(f"{what}: expected shape ({rows}, {cols}), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class Level:
    dim: int
    gram: np.ndarray
    chol: np.ndarray  # lower factor, gram = chol @ chol.T

    def norm(self, x) -> np.ndarray | float:
        """Gram norm along the last axis (batched)."""
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x @ self.chol, axis=-1)

    def dual_norm(self, c) -> np.ndarray | float:
        """Norm of a covector: sqrt(c^T G^{-1} c)."""
        c = np.asarray(c, dtype=float)
        z = solve_triangular(self.chol, c.reshape(-1, self.dim).T, lower=True).T
        out = np.linalg.norm(z, axis=-1).reshape(c.shape[:-1])
        return float(out) if c.ndim == 1 else out


@dataclass(frozen=True)
class Tower:
    """Immutable finite projective system of normed spaces."""

    levels: tuple[Level, ...]
    connectors: tuple[np.ndarray, ...]
    composites: Mapping[tuple[int, int], np.ndarray] = field(repr=False)
    continuity: Mapping[tuple[int, int], float] = field(repr=False)
    tol_thread: float = TOL_THREAD

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(lv.dim for lv in self.levels)

    @property
    def top(self) -> int:
        return self.depth - 1

    @property
    def is_inclusion(self) -> bool:
        return all(
            L.shape[0] == L.shape[1] and np.array_equal(L, np.eye(L.shape[0])) for L in self.connectors
        )

    def composite(self, j: int, i: int) -> np.ndarray:
        """Connecting map from level ``j`` down to level ``i`` (``j >= i``)."""
        if not (0 <= i <= j < self.depth):
            raise IndexError(f"need 0 <= i <= j < {self.depth}, got j={j}, i={i}")
        return self.composites[(j, i)]

    def continuity_constant(self, j: int, i: int) -> float:
        return self.continuity[(j, i)]

    def norm(self, i: int, x) -> np.ndarray | float:
        return self.levels[i].norm(x)

    def pairs(self):
        for j in range(self.depth):
            for i in range(j):
                yield j, i

    def push(self, top_components: np.ndarray) -> list[np.ndarray]:
        """Batched thread construction from deepest components (rows)."""
        top_components = np.asarray(top_components, dtype=float)
        return [top_components @ self.composite(self.top, i).T for i in range(self.depth)]

    def seminorms(self, x: "ThreadVector") -> np.ndarray:
        return np.array([self.norm(i, xi) for i, xi in enumerate(x.components)])

    @classmethod
    def inclusion(cls, depth: int, dim: int, grams: Sequence | None = None, tol_thread: float = TOL_THREAD) -> "Tower":
        levels = []
        for i in range(depth):
            levels.append({"dim": dim, "gram": np.eye(dim) if grams is None else grams[i]})
            if i < depth - 1:
                levels[-1]["connect"] = np.eye(dim)
        return build_tower({"levels": levels, "tol_thread": tol_thread})


def build_tower(spec: Mapping, composites: Mapping[tuple[int, int], object] | None = None) -> Tower:
    """Validate a tower description and derive composites and continuity constants.

    ``spec`` has the JSON layout ``{"levels": [{"dim", "gram", "connect"}, ...]}``
    where ``connect`` on level ``i`` maps level ``i+1`` to level ``i`` and is
    omitted on the deepest level.  ``gram`` defaults to the identity.
    ``composites`` optionally overrides derived maps; overrides must agree with
    the composition law.
    """
    raw_levels = spec["levels"]
    if len(raw_levels) == 0:
        raise ShapeMismatch("a tower needs at least one level")
    levels: list[Level] = []
    for k, lv in enumerate(raw_levels):
        dim = int(lv["dim"])
        if dim <= 0:
            raise ShapeMismatch(f"level {k}: dim must be positive, got {dim}")
        gram = _as_matrix(lv.get("gram", np.eye(dim)), dim, dim, f"level {k} gram")
        if not np.allclose(gram, gram.T, rtol=0.0, atol=1e-14 * max(1.0, np.abs(gram).max())):
            raise NonSPDGram(f"level {k}: gram matrix is not symmetric")
        gram = 0.5 * (gram + gram.T)
        eig_min = np.linalg.eigvalsh(gram)[0]
        if eig_min <= 0.0:
            raise NonSPDGram(f"level {k}: gram matrix not positive definite (smallest eigenvalue {eig_min:g})")
        levels.append(Level(dim, _frozen(gram), _frozen(np.linalg.cholesky(gram))))

    depth = len(levels)
    connectors = []
    for k in range(depth - 1):
        lv = raw_levels[k]
        if "connect" in lv and lv["connect"] is not None:
            L = _as_matrix(lv["connect"], levels[k].dim, levels[k + 1].dim, f"level {k} connect")
        elif levels[k].dim == levels[k + 1].dim:
            L = np.eye(levels[k].dim)
        else:
            raise ShapeMismatch(f"level {k}: connect is required when dims differ")
        connectors.append(_frozen(L))
    if "connect" in raw_levels[-1] and raw_levels[-1]["connect"] is not None:
        raise ShapeMismatch("deepest level must not carry a connector")

    comp: dict[tuple[int, int], np.ndarray] = {}
    for j in range(depth):
        comp[(j, j)] = _frozen(np.eye(levels[j].dim))
        for i in range(j - 1, -1, -1):
            comp[(j, i)] = _frozen(connectors[i] @ comp[(j, i + 1)])

    for (j, i), M in (composites or {}).items():
        M = _as_matrix(M, levels[i].dim, levels[j].dim, f"composite ({j},{i})")
        diff = np.abs(M - comp[(j, i)]).max(initial=0.0)
        if diff > 1e-12 * max(1.0, np.abs(comp[(j, i)]).max(initial=0.0)):
            raise CompositionViolation(f"composite ({j},{i}) violates L_ki = L_ji L_kj (deviation {diff:g})")
        comp[(j, i)] = _frozen(M)

    continuity: dict[tuple[int, int], float] = {}
    for (j, i), M in comp.items():
        # sup ||M x||_i / ||x||_j in whitened coordinates
        W = levels[i].chol.T @ M @ np.linalg.inv(levels[j].chol.T)
        continuity[(j, i)] = float(np.linalg.norm(W, 2))

    return Tower(tuple(levels), tuple(connectors), comp, continuity, float(spec.get("tol_thread", TOL_THREAD)))


@dataclass(frozen=True)
class ThreadVector:
    """One vector per level; an element of the (truncated) projective limit."""

    components: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(_frozen(c) for c in self.components))

    def __getitem__(self, i: int) -> np.ndarray:
        return self.components[i]

    def __len__(self) -> int:
        return len(self.components)

    @property
    def top(self) -> np.ndarray:
        return self.components[-1]


@dataclass(frozen=True)
class ThreadCheck:
    max_residual: float
    residuals: dict[tuple[int, int], float]
    passed: bool


def make_thread(tower: Tower, top_component) -> ThreadVector:
    top = np.asarray(top_component, dtype=float)
    if top.shape != (tower.levels[-1].dim,):
        raise ShapeMismatch(f"top component must have shape ({tower.levels[-1].dim},), got {top.shape}")
    return ThreadVector(tuple(tower.push(top)))


def _check_shapes(tower: Tower, components) -> list[np.ndarray]:
    comps = [np.asarray(c, dtype=float) for c in components]
    if len(comps) != tower.depth:
        raise ShapeMismatch(f"expected {tower.depth} components, got {len(comps)}")
    for i, c in enumerate(comps):
        if c.shape[-1:] != (tower.levels[i].dim,):
            raise ShapeMismatch(f"component {i}: expected length {tower.levels[i].dim}, got shape {c.shape}")
    return comps


def thread_residual(tower: Tower, components) -> dict[tuple[int, int], float]:
    """``||L_ji x_j - x_i||_i`` for all pairs, maxed over any leading batch axes."""
    comps = _check_shapes(tower, components)
    out = {}
    for j, i in tower.pairs():
        r = tower.norm(i, comps[j] @ tower.composite(j, i).T - comps[i])
        out[(j, i)] = float(np.max(r))
    return out


def check_thread(tower: Tower, components, tol: float | None = None) -> ThreadCheck:
    if isinstance(components, ThreadVector):
        components = components.components
    tol = tower.tol_thread if tol is None else tol
    res = thread_residual(tower, components)
    worst = max(res.values(), default=0.0)
    return ThreadCheck(worst, res, worst <= tol)


@dataclass(frozen=True)
class ProjectiveMapFamily:
    """Per-level self-maps ``f_i`` of a tower, optionally with exact Jacobians."""

    tower: Tower
    maps: tuple[Callable[[np.ndarray], np.ndarray], ...]
    jacobians: tuple[Callable[[np.ndarray], np.ndarray], ...] | None = None
    mu: float | None = None

    def __post_init__(self):
        if len(self.maps) != self.tower.depth:
            raise ShapeMismatch(f"need {self.tower.depth} level maps, got {len(self.maps)}")
        if self.jacobians is not None and len(self.jacobians) != self.tower.depth:
            raise ShapeMismatch(f"need {self.tower.depth} Jacobians, got {len(self.jacobians)}")

    @classmethod
    def uniform(cls, tower: Tower, f, jacobian=None, mu=None) -> "ProjectiveMapFamily":
        """Same map on every level (meaningful for inclusion towers)."""
        jac = None if jacobian is None else (jacobian,) * tower.depth
        return cls(tower, (f,) * tower.depth, jac, mu)

    def evaluate(self, x: ThreadVector) -> list[np.ndarray]:
        return [np.asarray(f(xi), dtype=float) for f, xi in zip(self.maps, x.components)]

    def diagram_residual(self, x: ThreadVector) -> float:
        """max over j > i of ``||L_ji f_j(x_j) - f_i(L_ji x_j)||_i``."""
        tw = self.tower
        fx = self.evaluate(x)
        worst = 0.0
        for j, i in tw.pairs():
            L = tw.composite(j, i)
            r = tw.norm(i, L @ fx[j] - np.asarray(self.maps[i](L @ x[j]), dtype=float))
            worst = max(worst, float(r))
        return worst


def _require_projective(family: ProjectiveMapFamily, x: ThreadVector, tol: float | None):
    tol = family.tower.tol_thread if tol is None else tol
    r = family.diagram_residual(x)
    if r > tol:
        raise DiagramViolation(f"map family does not commute with connectors at x (residual {r:.3e} > {tol:.1e})", r)


def apply_projective_map(family: ProjectiveMapFamily, x: ThreadVector, tol: float | None = None) -> ThreadVector:
    """Limit map ``f(x) = (f_i(x_i))``."""
    _check_shapes(family.tower, x.components)
    _require_projective(family, x, tol)
    return ThreadVector(tuple(family.evaluate(x)))


def limit_differential(
    family: ProjectiveMapFamily,
    x: ThreadVector,
    direction: ThreadVector,
    h_fd: float = H_FD,
    tol: float | None = None,
) -> ThreadVector:
    """Levelwise directional derivative ``(df_i(x_i)[v_i])``.

    Exact Jacobians are used when the family carries them; otherwise a central
    difference with step ``h_fd * max(1, ||x_i||_inf)``.
    """
    _check_shapes(family.tower, x.components)
    _check_shapes(family.tower, direction.components)
    _require_projective(family, x, tol)
    out = []
    for i, (f, xi, vi) in enumerate(zip(family.maps, x.components, direction.components)):
        if family.jacobians is not None:
            out.append(np.asarray(family.jacobians[i](xi), dtype=float) @ vi)
            continue
        h = h_fd * max(1.0, float(np.abs(xi).max(initial=0.0)))
        fp = np.asarray(f(xi + h * vi), dtype=float)
        fm = np.asarray(f(xi - h * vi), dtype=float)
        out.append((fp - fm) / (2.0 * h))
    return ThreadVector(tuple(out))
