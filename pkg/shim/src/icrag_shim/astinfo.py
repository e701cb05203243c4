"""Static AST facts for one program: node census and decision counts.

The census counts every node-type name reached by a full walk, plus
derived legacy names (Num/Str/Bytes/NameConstant/Ellipsis from Constant
values, Index/ExtSlice from subscript shapes) so profiles stay
comparable across interpreter generations. Decision counts feed the
d-plus-one cyclomatic convention downstream; loops are reported
separately so either loop policy can be applied.
"""

from __future__ import annotations

import ast
from collections import Counter

DECISION_KEYS = (
    "if",
    "elif",
    "ternary",
    "bool_operands_minus_one",
    "comprehension_if",
    "except_handler",
    "assert",
    "match_case",
    "for",
    "while",
)


def analyze(code: str) -> dict:
    try:
        tree = ast.parse(code)
    except (SyntaxError, ValueError, RecursionError, MemoryError):
        return {
            "node_census": {},
            "decision_counts": {key: 0 for key in DECISION_KEYS},
            "unit_count": 0,
            "parse_error": True,
        }

    census: Counter = Counter()
    decisions = {key: 0 for key in DECISION_KEYS}

    elif_nodes: set[int] = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.If) and len(node.orelse) == 1:
            child = node.orelse[0]
            if isinstance(child, ast.If) and child.col_offset == node.col_offset:
                elif_nodes.add(id(child))

    for node in ast.walk(tree):
        census[type(node).__name__] += 1
        if isinstance(node, ast.Constant):
            value = node.value
            if value is None or value is True or value is False:
                census["NameConstant"] += 1
            elif isinstance(value, str):
                census["Str"] += 1
            elif isinstance(value, bytes):
                census["Bytes"] += 1
            elif isinstance(value, (int, float, complex)):
                census["Num"] += 1
            elif value is ...:
                census["Ellipsis"] += 1
        elif isinstance(node, ast.Subscript):
            sl = node.slice
            if isinstance(sl, ast.Slice):
                pass
            elif isinstance(sl, ast.Tuple) and any(isinstance(e, ast.Slice) for e in sl.elts):
                census["ExtSlice"] += 1
            else:
                census["Index"] += 1
        elif isinstance(node, ast.If):
            decisions["elif" if id(node) in elif_nodes else "if"] += 1
        elif isinstance(node, ast.While):
            decisions["while"] += 1
        elif isinstance(node, (ast.For, ast.AsyncFor)):
            decisions["for"] += 1
        elif isinstance(node, ast.BoolOp):
            decisions["bool_operands_minus_one"] += len(node.values) - 1
        elif isinstance(node, ast.IfExp):
            decisions["ternary"] += 1
        elif isinstance(node, ast.comprehension):
            decisions["comprehension_if"] += len(node.ifs)
        elif isinstance(node, ast.ExceptHandler):
            decisions["except_handler"] += 1
        elif isinstance(node, ast.Assert):
            decisions["assert"] += 1
        elif isinstance(node, ast.match_case):
            decisions["match_case"] += 1

    unit_count = 1 + census.get("FunctionDef", 0) + census.get("AsyncFunctionDef", 0)
    return {
        "node_census": dict(census),
        "decision_counts": decisions,
        "unit_count": unit_count,
        "parse_error": False,
    }
