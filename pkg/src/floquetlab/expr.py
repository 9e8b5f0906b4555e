"""Tiny safe expression compiler for symbol coefficients.

Expressions are written over ``xi1 .. xid`` (``ξ1`` and ``ξ₁`` are accepted
too) with ``+ - * / ^``, parentheses, numeric constants, the imaginary unit
``I`` (or Python's ``1j`` literals) and ``abs2(xi)`` for |ξ|². The result is a
vectorized callable taking an array of momenta with shape (n, d).
"""

from __future__ import annotations

import ast
import math
from typing import Callable

import numpy as np

from .errors import ConfigError

_SUBSCRIPTS = str.maketrans("₀₁₂₃₄₅₆₇₈₉", "0123456789")
_CONSTS = {"pi": math.pi, "I": 1j, "e": math.e}


def _normalize(src: str) -> str:
    s = src.translate(_SUBSCRIPTS).replace("ξ", "xi").replace("^", "**")
    return s


def compile_coeff(src: str | float | int | complex, d: int) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(src, (int, float, complex)):
        c = complex(src)
        return lambda xi: np.full(np.shape(xi)[0], c, dtype=complex)
    text = _normalize(str(src))
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse coefficient {src!r}: {exc.msg}") from None
    fn = _build(tree.body, d, src)

    def evaluate(xi: np.ndarray) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        out = fn(xi)
        return np.broadcast_to(np.asarray(out, dtype=complex), (xi.shape[0],)).copy()

    evaluate.source = str(src)  # type: ignore[attr-defined]
    return evaluate


def _build(node, d: int, src):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float, complex)):
        v = node.value
        return lambda xi: v
    if isinstance(node, ast.Name):
        name = node.id
        if name.startswith("xi") and name[2:].isdigit():
            k = int(name[2:])
            if not 1 <= k <= d:
                raise ConfigError(f"{name} out of range for d = {d} in {src!r}")
            return lambda xi: xi[:, k - 1]
        if name in _CONSTS:
            v = _CONSTS[name]
            return lambda xi: v
        raise ConfigError(f"unknown name {name!r} in coefficient {src!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _build(node.operand, d, src)
        if isinstance(node.op, ast.USub):
            return lambda xi: -inner(xi)
        return inner
    if isinstance(node, ast.BinOp):
        lhs, rhs = _build(node.left, d, src), _build(node.right, d, src)
        op = node.op
        if isinstance(op, ast.Add):
            return lambda xi: lhs(xi) + rhs(xi)
        if isinstance(op, ast.Sub):
            return lambda xi: lhs(xi) - rhs(xi)
        if isinstance(op, ast.Mult):
            return lambda xi: lhs(xi) * rhs(xi)
        if isinstance(op, ast.Div):
            return lambda xi: lhs(xi) / rhs(xi)
        if isinstance(op, ast.Pow):
            return lambda xi: lhs(xi) ** rhs(xi)
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id == "abs2":
        if len(node.args) != 1 or not (isinstance(node.args[0], ast.Name) and node.args[0].id == "xi"):
            raise ConfigError(f"abs2 takes the single argument xi in {src!r}")
        return lambda xi: np.einsum("ij,ij->i", xi, xi)
    raise ConfigError(f"unsupported construct in coefficient {src!r}")
