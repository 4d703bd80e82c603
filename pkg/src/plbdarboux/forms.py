"""Position-dependent antisymmetric matrices ``x -> S(x)`` on a single level.

All forms evaluate batched: ``matrix(x)`` maps an array of shape ``(..., d)``
to ``(..., d, d)`` and ``derivative(x)`` to ``(..., d, d, d)`` with
``derivative(x)[..., a, b, c] = dS_ab / dx_c``.  ``derivative`` returns
``None`` when no exact derivative is known.

Three JSON kinds are supported (see README for the schema):

* ``constant``            -- ``{"matrix": [[...]]}`` or ``"canonical"``
* ``linear_perturbation`` -- ``S(x) = S0 + epsilon * x_k * B`` where
  ``B`` is ``S0`` restricted to one canonical 2x2 block (``k`` and the
  block are 1-based in JSON)
* ``expression``          -- upper-triangular entries given as arithmetic
  expressions in ``x1 .. xd``
"""

from __future__ import annotations

import ast
from typing import Callable, Mapping

import numpy as np
import sympy as sp

from .errors import ConfigError, DomainError, ShapeMismatch


def canonical(dim: int) -> np.ndarray:
    """Block-diagonal ``[[0, 1], [-1, 0]]`` in coordinates ``(q1, p1, q2, p2, ...)``."""
    if dim < 2 or dim % 2:
        raise DomainError(f"canonical form needs an even dimension >= 2, got {dim}")
    S = np.zeros((dim, dim))
    for b in range(dim // 2):
        S[2 * b, 2 * b + 1] = 1.0
        S[2 * b + 1, 2 * b] = -1.0
    return S


def block_projector(dim: int, block: int) -> np.ndarray:
    P = np.zeros((dim, dim))
    P[2 * block, 2 * block] = P[2 * block + 1, 2 * block + 1] = 1.0
    return P


class FormFunction:
    dim: int

    def matrix(self, x) -> np.ndarray:
        raise NotImplementedError

    def derivative(self, x) -> np.ndarray | None:
        return None

    @property
    def has_derivative(self) -> bool:
        return False

    def describe(self) -> dict:
        return {"kind": type(self).__name__}


class ConstantForm(FormFunction):
    def __init__(self, matrix):
        S = np.array(matrix, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ShapeMismatch(f"form matrix must be square, got {S.shape}")
        S.setflags(write=False)
        self.S = S
        self.dim = S.shape[0]

    def matrix(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.S, x.shape[:-1] + self.S.shape).copy()

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.dim,) * 3)

    @property
    def has_derivative(self):
        return True

    def describe(self):
        return {"kind": "constant", "matrix": self.S.tolist()}


class LinearPerturbationForm(FormFunction):
    """``S(x) = base + epsilon * x[index] * direction``."""

    def __init__(self, base, index: int, epsilon: float, direction=None):
        self.base = np.array(base, dtype=float)
        self.dim = self.base.shape[0]
        if not 0 <= index < self.dim:
            raise ShapeMismatch(f"perturbation index {index} out of range for dim {self.dim}")
        self.index = int(index)
        self.epsilon = float(epsilon)
        self.direction = self.base.copy() if direction is None else np.array(direction, dtype=float)

    def matrix(self, x):
        x = np.asarray(x, dtype=float)
        return self.base + self.epsilon * x[..., self.index, None, None] * self.direction

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (self.dim,) * 3)
        out[..., self.index] = self.epsilon * self.direction
        return out

    @property
    def has_derivative(self):
        return True

    def describe(self):
        return {"kind": "linear_perturbation", "coordinate": self.index + 1, "epsilon": self.epsilon}


_FUNCS = {"sin", "cos", "tan", "exp", "log", "sqrt", "sinh", "cosh", "tanh", "atan"}
_CONSTS = {"pi", "E"}
_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)


def parse_expression(text: str, dim: int) -> sp.Expr:
    """Parse a restricted arithmetic expression in ``x1 .. x{dim}``.

    Allowed: numbers, ``+ - * / **``, unary sign, parentheses, the functions
    ``sin cos tan exp log sqrt sinh cosh tanh atan`` and ``pi``, ``E``.
    """
    try:
        tree = ast.parse(str(text), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}") from None
    names = {f"x{k + 1}" for k in range(dim)}
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ConfigError(f"disallowed syntax {type(node).__name__} in {text!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"only numeric literals are allowed in {text!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords or len(node.args) != 1:
                raise ConfigError(f"disallowed function call in {text!r}")
        if isinstance(node, ast.Name) and node.id not in names | _FUNCS | _CONSTS:
            raise ConfigError(f"unknown name {node.id!r} in {text!r} (coordinates are x1..x{dim})")
    symbols = {f"x{k + 1}": sp.Symbol(f"x{k + 1}", real=True) for k in range(dim)}
    local = {**symbols, **{f: getattr(sp, f) for f in _FUNCS}, "pi": sp.pi, "E": sp.E}
    return sp.sympify(str(text), locals=local)


class ExpressionForm(FormFunction):
    """Antisymmetric matrix with symbolic upper-triangular entries.

    ``entries`` maps 0-based ``(a, b)`` with ``a < b`` to expression strings;
    missing entries are zero.  Derivatives are exact (symbolic).
    """

    def __init__(self, dim: int, entries: Mapping[tuple[int, int], str]):
        self.dim = int(dim)
        self.entries = {}
        for (a, b), text in entries.items():
            if not (0 <= a < b < self.dim):
                raise ConfigError(f"entry ({a + 1},{b + 1}) must satisfy 1 <= a < b <= {self.dim}")
            self.entries[(a, b)] = str(text)
        syms = sp.symbols(f"x1:{self.dim + 1}", real=True)
        self._value = {}
        self._grad = {}
        for key, text in self.entries.items():
            expr = parse_expression(text, self.dim)
            self._value[key] = sp.lambdify(syms, expr, "numpy")
            self._grad[key] = [sp.lambdify(syms, sp.diff(expr, s), "numpy") for s in syms]

    @staticmethod
    def _eval(fn, x):
        shape = x.shape[:-1]
        return np.broadcast_to(np.asarray(fn(*np.moveaxis(x, -1, 0)), dtype=float), shape)

    def matrix(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (self.dim, self.dim))
        for (a, b), fn in self._value.items():
            v = self._eval(fn, x)
            out[..., a, b] = v
            out[..., b, a] = -v
        return out

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (self.dim,) * 3)
        for (a, b), grads in self._grad.items():
            for c, fn in enumerate(grads):
                v = self._eval(fn, x)
                out[..., a, b, c] = v
                out[..., b, a, c] = -v
        return out

    @property
    def has_derivative(self):
        return True

    def describe(self):
        return {"kind": "expression", "upper": [[a + 1, b + 1, t] for (a, b), t in sorted(self.entries.items())]}


class CallableForm(FormFunction):
    """Wrap a user function ``S(x)`` of a single point; batching is a Python loop."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], dim: int,
                 derivative: Callable[[np.ndarray], np.ndarray] | None = None):
        self.fn = fn
        self.dim = int(dim)
        self._derivative = derivative

    def _loop(self, fn, x, tail):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.dim)
        vals = np.array([np.asarray(fn(p), dtype=float) for p in flat])
        return vals.reshape(x.shape[:-1] + tail)

    def matrix(self, x):
        return self._loop(self.fn, x, (self.dim, self.dim))

    def derivative(self, x):
        if self._derivative is None:
            return None
        return self._loop(self._derivative, x, (self.dim,) * 3)

    @property
    def has_derivative(self):
        return self._derivative is not None


def fd_derivative(form: FormFunction, x, h_fd: float) -> np.ndarray:
    """Central-difference ``dS/dx_c`` stacked on the last axis."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    h = h_fd * np.maximum(1.0, np.abs(x).max(axis=-1, initial=0.0))[..., None]
    out = np.empty(x.shape[:-1] + (d, d, d))
    for c in range(d):
        e = np.zeros(d)
        e[c] = 1.0
        step = h * e
        out[..., c] = (form.matrix(x + step) - form.matrix(x - step)) / (2.0 * h[..., None])
    return out


def form_from_spec(spec: Mapping, dim: int) -> FormFunction:
    """Build one level's form from its JSON description."""
    kind = spec.get("kind")
    if kind == "constant":
        m = spec.get("matrix", "canonical")
        S = canonical(dim) if m == "canonical" else np.asarray(m, dtype=float).reshape(dim, dim)
        return ConstantForm(S)
    if kind == "linear_perturbation":
        base = spec.get("base", "canonical")
        S0 = canonical(dim) if base == "canonical" else np.asarray(base, dtype=float).reshape(dim, dim)
        if "direction" in spec:
            B = np.asarray(spec["direction"], dtype=float).reshape(dim, dim)
        else:
            block = int(spec.get("block", 1)) - 1
            if not 0 <= block < dim // 2:
                raise ConfigError(f"block {block + 1} out of range for dim {dim}")
            P = block_projector(dim, block)
            B = P @ S0 @ P
        return LinearPerturbationForm(S0, int(spec.get("coordinate", 1)) - 1, float(spec["epsilon"]), B)
    if kind == "expression":
        entries = {(int(a) - 1, int(b) - 1): t for a, b, t in spec["upper"]}
        return ExpressionForm(dim, entries)
    raise ConfigError(f"unknown field kind {kind!r}")
