"""Typing and vectorised evaluation of predicates and derive expressions.

Integer columns are evaluated as int64 and floating columns as float64.
``and``/``or`` short-circuit per cell: the right operand is only evaluated on
cells the left operand has not already decided, so ``w <> 0 and v / w > 1``
never divides by zero.
"""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from ..errors import EvaluationError, TypeMismatch, UnknownElement
from ..schema import Tar
from ..storage import is_integer_type
from . import ast

BOOL = "bool"
INT = "int"
FLOAT = "float"


def element_kind(element_type: str) -> str:
    return INT if is_integer_type(element_type) else FLOAT


def infer(node: ast.Node, schema: Tar) -> str:
    if isinstance(node, ast.Num):
        return INT if isinstance(node.value, int) else FLOAT
    if isinstance(node, ast.Bool):
        return BOOL
    if isinstance(node, ast.Str):
        raise TypeMismatch(f"string literal {node.value!r} cannot appear in an expression")
    if isinstance(node, ast.Ref):
        if not schema.has_element(node.name):
            raise UnknownElement(f"{schema.name!r} has no element {node.name!r}")
        return element_kind(schema.element(node.name).element_type)
    if isinstance(node, ast.Unary):
        inner = infer(node.operand, schema)
        if node.op == "not":
            if inner != BOOL:
                raise TypeMismatch("'not' needs a boolean operand")
            return BOOL
        if inner == BOOL:
            raise TypeMismatch("cannot negate a boolean")
        return inner
    if isinstance(node, ast.Binary):
        left, right = infer(node.left, schema), infer(node.right, schema)
        if node.op in ast.LOGICAL:
            if left != BOOL or right != BOOL:
                raise TypeMismatch(f"'{node.op}' needs boolean operands")
            return BOOL
        if left == BOOL or right == BOOL:
            raise TypeMismatch(f"'{node.op}' needs numeric operands")
        if node.op in ast.COMPARISONS:
            return BOOL
        if node.op == "/":
            return FLOAT
        return INT if left == right == INT else FLOAT
    if isinstance(node, ast.Call):
        raise TypeMismatch(f"operator call {node.name}() cannot appear in an expression")
    raise TypeMismatch(f"unsupported expression {node!r}")


def referenced(node: ast.Node) -> set[str]:
    if isinstance(node, ast.Ref):
        return {node.name}
    if isinstance(node, ast.Unary):
        return referenced(node.operand)
    if isinstance(node, ast.Binary):
        return referenced(node.left) | referenced(node.right)
    return set()


def promote(arr: np.ndarray) -> np.ndarray:
    if arr.dtype.kind in "iu":
        return arr.astype(np.int64, copy=False)
    return arr.astype(np.float64, copy=False)


_CMP = {
    "=": np.equal,
    "<>": np.not_equal,
    "<": np.less,
    "<=": np.less_equal,
    ">": np.greater,
    ">=": np.greater_equal,
}
_ARITH = {"+": np.add, "-": np.subtract, "*": np.multiply}


def evaluate(
    node: ast.Node,
    column: Callable[[str], np.ndarray] | Mapping[str, np.ndarray],
    n: int,
    rows: np.ndarray | None = None,
) -> np.ndarray:
    """Evaluate ``node`` for ``n`` cells (or the subset ``rows`` of them)."""
    get = column.__getitem__ if isinstance(column, Mapping) else column
    return _eval(node, get, n if rows is None else rows.size, rows)


def _eval(node, get, size: int, rows):
    if isinstance(node, ast.Num):
        dt = np.int64 if isinstance(node.value, int) else np.float64
        return np.full(size, node.value, dtype=dt)
    if isinstance(node, ast.Bool):
        return np.full(size, node.value, dtype=bool)
    if isinstance(node, ast.Ref):
        col = promote(np.asarray(get(node.name)))
        return col if rows is None else col[rows]
    if isinstance(node, ast.Unary):
        v = _eval(node.operand, get, size, rows)
        return np.logical_not(v) if node.op == "not" else np.negative(v)
    if isinstance(node, ast.Binary):
        if node.op in ast.LOGICAL:
            left = _eval(node.left, get, size, rows)
            undecided = left if node.op == "and" else ~left
            out = left.copy()
            idx = np.flatnonzero(undecided)
            if idx.size:
                sub_rows = idx if rows is None else rows[idx]
                out[idx] = _eval(node.right, get, idx.size, sub_rows)
            return out
        left = _eval(node.left, get, size, rows)
        right = _eval(node.right, get, size, rows)
        if node.op in _CMP:
            return _CMP[node.op](left, right)
        if node.op == "/":
            if np.any(right == 0):
                raise EvaluationError("division by zero")
            return np.true_divide(left.astype(np.float64), right.astype(np.float64))
        with np.errstate(over="ignore", invalid="ignore"):
            return _ARITH[node.op](left, right)
    raise EvaluationError(f"cannot evaluate {node!r}")
