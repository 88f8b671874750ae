"""A small expression grammar for analytic sources, predictions and parameter fields.

Allowed: numeric literals, the coordinates ``x`` and ``y``, the constant
``pi``, the operators ``+ - * / **`` (unary minus included), parentheses and
the indicator ``box(x0, x1, y0, y1)`` of a closed rectangle. Expressions are
parsed with :mod:`ast` and evaluated vectorised over point arrays.
"""

from __future__ import annotations

import ast
from typing import Callable

import numpy as np


class ExprError(ValueError):
    pass


_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide,
           ast.Pow: np.power}


def _compile(node, src: str):
    if isinstance(node, ast.Expression):
        return _compile(node.body, src)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        c = float(node.value)
        return lambda x, y: np.full(x.shape, c)
    if isinstance(node, ast.Name):
        if node.id == "x":
            return lambda x, y: x
        if node.id == "y":
            return lambda x, y: y
        if node.id == "pi":
            return lambda x, y: np.full(x.shape, np.pi)
        raise ExprError(f"unknown name {node.id!r} in {src!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        f = _compile(node.operand, src)
        return (lambda x, y: -f(x, y)) if isinstance(node.op, ast.USub) else f
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op = _BINOPS[type(node.op)]
        a, b = _compile(node.left, src), _compile(node.right, src)
        return lambda x, y: op(a(x, y), b(x, y))
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id == "box"
            and not node.keywords):
        if len(node.args) != 4:
            raise ExprError(f"box takes 4 arguments (x0, x1, y0, y1) in {src!r}")
        bounds = []
        for arg in node.args:
            val = _compile(arg, src)(np.zeros(1), np.zeros(1))
            if _uses_coordinates(arg):
                raise ExprError(f"box bounds must be constants in {src!r}")
            bounds.append(float(val[0]))
        x0, x1, y0, y1 = bounds
        return lambda x, y: ((x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)).astype(float)
    raise ExprError(f"unsupported syntax {ast.dump(node)[:40]!r} in {src!r}")


def _uses_coordinates(node) -> bool:
    return any(isinstance(n, ast.Name) and n.id in ("x", "y") for n in ast.walk(node))


def parse(src) -> Callable[[np.ndarray], np.ndarray]:
    """Scalar point function ``points (n, 2) -> (n,)`` for an expression (or a number)."""
    if isinstance(src, (int, float)) and not isinstance(src, bool):
        src = repr(float(src))
    if not isinstance(src, str):
        raise ExprError(f"expression must be a string or number, got {type(src).__name__}")
    try:
        tree = ast.parse(src.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExprError(f"cannot parse {src!r}: {exc.msg}") from None
    f = _compile(tree, src)

    def fn(points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.asarray(f(pts[:, 0], pts[:, 1]), dtype=float)

    fn.source = src
    return fn


def parse_vector(pair) -> Callable[[np.ndarray], np.ndarray]:
    """Vector point function ``(n, 2) -> (n, 2)`` from a pair of expressions."""
    if not isinstance(pair, (list, tuple)) or len(pair) != 2:
        raise ExprError(f"vector expression must be a pair, got {pair!r}")
    f1, f2 = parse(pair[0]), parse(pair[1])

    def fn(points):
        return np.column_stack([f1(points), f2(points)])

    return fn
