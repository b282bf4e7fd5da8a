"""Deterministic SQL text for flat queries.

The emitted dialect is deliberately small: SELECT lists, comma joins with
``t0``-style aliases assigned in generator order, WHERE conjunctions,
EXISTS / NOT EXISTS subqueries, CASE WHEN conditionals, and inlined literals
with single-quote escaping. Multi-branch (union) queries join their branches
with UNION ALL. The same query always renders to the same bytes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .normalize import Call, Case, Col, Exists, Lit, NExpr, NormalForm
from .shred import Branch, FlatQuery, CollectionSlot, RecordSlot, ScalarSlot, ShredPlan, Slot

_PLAIN_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

_SQL_OPS = {"==": "=", "!=": "<>", "<": "<", "<=": "<=", ">": ">", ">=": ">=",
            "&&": "AND", "||": "OR", "+": "+", "-": "-", "*": "*", "/": "/"}

# Higher binds tighter; used to insert the minimal parentheses.
_PREC = {"OR": 1, "AND": 2, "NOT": 3,
         "=": 4, "<>": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
         "+": 5, "-": 5, "*": 6, "/": 6}


@dataclass(frozen=True)
class SqlText:
    dialect: str
    text: str


def to_sql(q: FlatQuery) -> SqlText:
    if not q.branches:
        return SqlText("generic", _render_empty(q))
    parts = [_render_branch(b, q) for b in q.branches]
    return SqlText("generic", "\nUNION ALL\n".join(parts))


def _render_empty(q: FlatQuery) -> str:
    labels = list(q.select_labels) + list(q.index_labels()) + list(q.parent_index_labels())
    if not labels:
        labels = ["value"]
    items = ", ".join(f"0 AS {_label(l)}" for l in labels)
    return f"SELECT {items} WHERE FALSE"


def _render_branch(b: Branch, q: FlatQuery) -> str:
    aliases: dict[str, str] = {}
    counter = [0]
    for binder, _ in b.generators:
        aliases[binder] = f"t{counter[0]}"
        counter[0] += 1

    items = [f"{_expr(e, aliases, counter)} AS {_label(label)}" for label, e in b.select]
    if q.emit_index:
        for label, e in zip(q.index_labels(), b.index_exprs):
            items.append(f"{_expr(e, aliases, counter)} AS {_label(label)}")
    if q.parent_query is not None:
        for label, e in zip(q.parent_index_labels(), b.parent_index_exprs):
            items.append(f"{_expr(e, aliases, counter)} AS {_label(label)}")
    select = ", ".join(items) if items else "1 AS one"

    tables = ", ".join(f"{tbl} AS {aliases[binder]}" for binder, tbl in b.generators)
    where = _expr(b.predicate, aliases, counter)
    if tables:
        return f"SELECT {select} FROM {tables} WHERE {where}"
    return f"SELECT {select} WHERE {where}"


def _label(label: str) -> str:
    if _PLAIN_IDENT.match(label):
        return label
    escaped = label.replace('"', '""')
    return f'"{escaped}"'


def _literal(value: object) -> str:
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    raise TypeError(f"cannot inline literal {value!r}")


def _expr(e: NExpr, aliases: dict[str, str], counter: list[int], parent_prec: int = 0) -> str:
    if isinstance(e, Col):
        return f"{aliases[e.binder]}.{e.field}"
    if isinstance(e, Lit):
        return _literal(e.value)
    if isinstance(e, Call):
        if e.op == "not":
            inner = _expr(e.args[0], aliases, counter, _PREC["NOT"])
            text = f"NOT {inner}"
            prec = _PREC["NOT"]
        else:
            op = _SQL_OPS[e.op]
            prec = _PREC[op]
            left = _expr(e.args[0], aliases, counter, prec)
            right = _expr(e.args[1], aliases, counter, prec + 1)
            text = f"{left} {op} {right}"
        return f"({text})" if prec < parent_prec else text
    if isinstance(e, Case):
        cond = _expr(e.cond, aliases, counter)
        then = _expr(e.then, aliases, counter)
        orelse = _expr(e.orelse, aliases, counter)
        return f"CASE WHEN {cond} THEN {then} ELSE {orelse} END"
    if isinstance(e, Exists):
        return _exists(e, aliases, counter, parent_prec)
    raise TypeError(f"not an NExpr: {e!r}")


def _exists(e: Exists, aliases: dict[str, str], counter: list[int], parent_prec: int) -> str:
    subqueries = [_exists_branch(c, aliases, counter) for c in e.nf.branches]
    if not subqueries:
        return "FALSE" if not e.negated else "TRUE"
    if len(subqueries) == 1:
        text = subqueries[0]
        if e.negated:
            return f"NOT {text}"
        return text
    joined = " OR ".join(subqueries)
    if e.negated:
        return f"NOT ({joined})"
    return f"({joined})" if _PREC["OR"] < parent_prec else joined


def _exists_branch(comp, aliases: dict[str, str], counter: list[int]) -> str:
    # Inner aliases continue the outer numbering so correlated references to
    # enclosing generators never get shadowed.
    inner = dict(aliases)
    for binder, _ in comp.generators:
        inner[binder] = f"t{counter[0]}"
        counter[0] += 1
    tables = ", ".join(f"{tbl} AS {inner[binder]}" for binder, tbl in comp.generators)
    where = _expr(comp.predicate, inner, counter)
    if tables:
        return f"EXISTS (SELECT 1 FROM {tables} WHERE {where})"
    return f"EXISTS (SELECT 1 WHERE {where})"


# ---------------------------------------------------------------------------
# Plan explanation
# ---------------------------------------------------------------------------


def explain(plan: ShredPlan) -> str:
    """Human-readable plan: one SQL block per query plus the stitch tree."""
    blocks = []
    for i, q in enumerate(plan.queries):
        origin = "root" if q.parent_query is None else f"parent: {q.parent_query}"
        blocks.append(f"-- query {i} ({origin})\n{to_sql(q).text}")
    tree_lines: list[str] = []
    _stitch_tree(plan.stitch, tree_lines, 0)
    blocks.append("-- stitch\n" + "\n".join(tree_lines))
    return "\n\n".join(blocks) + "\n"


def _stitch_tree(slot: Slot, lines: list[str], depth: int) -> None:
    pad = "  " * depth
    if isinstance(slot, CollectionSlot):
        lines.append(f"{pad}collection <- query {slot.query}")
        _stitch_tree(slot.element, lines, depth + 1)
    elif isinstance(slot, RecordSlot):
        lines.append(f"{pad}record")
        for label, sub in slot.fields:
            if isinstance(sub, ScalarSlot):
                lines.append(f"{pad}  {label}: scalar {sub.scalar_type.kind.value} [{sub.label}]")
            else:
                lines.append(f"{pad}  {label}:")
                _stitch_tree(sub, lines, depth + 2)
    elif isinstance(slot, ScalarSlot):
        lines.append(f"{pad}scalar {slot.scalar_type.kind.value} [{slot.label}]")
    else:
        raise TypeError(f"not a Slot: {slot!r}")
