"""Typed comprehension-calculus query language.

Queries are immutable expression trees built from table generators, filters,
record construction, and emptiness tests. A query is typechecked against an
environment of table schemas before it is normalized and compiled; the number
of collection constructors in its result type fixes the number of flat SQL
queries the compiler will emit.

All values here are frozen dataclasses and safe to share between threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Union

from .errors import (
    TypeMismatch,
    UnboundVariable,
    UnknownField,
    UnknownTable,
)

# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


class ScalarType(Enum):
    INT = "Int"
    FLOAT = "Float"
    BOOL = "Bool"
    STRING = "String"


@dataclass(frozen=True)
class ScalarT:
    kind: ScalarType

    def __repr__(self) -> str:
        return self.kind.value


@dataclass(frozen=True)
class RecordT:
    """Record type with ordered fields; order matters for rendering only."""

    fields: tuple[tuple[str, "QueryType"], ...]

    def __post_init__(self) -> None:
        labels = [l for l, _ in self.fields]
        if len(labels) != len(set(labels)):
            raise ValueError(f"duplicate record labels: {labels}")

    def labels(self) -> tuple[str, ...]:
        return tuple(l for l, _ in self.fields)

    def field_type(self, label: str) -> "QueryType | None":
        for l, t in self.fields:
            if l == label:
                return t
        return None

    def __repr__(self) -> str:
        inner = ", ".join(f"{l}: {t!r}" for l, t in self.fields)
        return "{" + inner + "}"


@dataclass(frozen=True)
class CollectionT:
    element: "QueryType"

    def __repr__(self) -> str:
        return f"[{self.element!r}]"


QueryType = Union[ScalarT, RecordT, CollectionT]

INT = ScalarT(ScalarType.INT)
FLOAT = ScalarT(ScalarType.FLOAT)
BOOL = ScalarT(ScalarType.BOOL)
STRING = ScalarT(ScalarType.STRING)


def record_t(fields: Iterable[tuple[str, QueryType]]) -> RecordT:
    return RecordT(tuple(fields))


def types_equal(a: QueryType, b: QueryType) -> bool:
    """Structural type equality; record labels compared as sets, not sequences."""
    if isinstance(a, ScalarT) and isinstance(b, ScalarT):
        return a.kind is b.kind
    if isinstance(a, CollectionT) and isinstance(b, CollectionT):
        return types_equal(a.element, b.element)
    if isinstance(a, RecordT) and isinstance(b, RecordT):
        fa, fb = dict(a.fields), dict(b.fields)
        if fa.keys() != fb.keys():
            return False
        return all(types_equal(fa[l], fb[l]) for l in fa)
    return False


def collection_count(t: QueryType) -> int:
    """Number of Collection constructors in ``t``, including the outermost one.

    This is exactly the number of flat queries the compiler emits for a query
    of result type ``t``.
    """
    if isinstance(t, ScalarT):
        return 0
    if isinstance(t, RecordT):
        return sum(collection_count(ft) for _, ft in t.fields)
    if isinstance(t, CollectionT):
        return 1 + collection_count(t.element)
    raise TypeError(f"not a QueryType: {t!r}")


# ---------------------------------------------------------------------------
# Table schemas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TableSchema:
    """Relational table description: ordered scalar columns plus key columns.

    Key columns must be a subset of the declared columns; an empty key is
    representable (it is rejected later, when stitch indexes are formed).
    """

    name: str
    columns: tuple[tuple[str, ScalarT], ...]
    key: tuple[str, ...]

    def __post_init__(self) -> None:
        names = [c for c, _ in self.columns]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate columns in table '{self.name}'")
        missing = [k for k in self.key if k not in names]
        if missing:
            raise ValueError(f"key columns {missing} not in table '{self.name}'")

    def column_type(self, name: str) -> ScalarT | None:
        for c, t in self.columns:
            if c == name:
                return t
        return None

    def row_type(self) -> RecordT:
        return RecordT(self.columns)


def schemas_from_json(doc: Mapping | str | Path) -> dict[str, TableSchema]:
    """Load table schemas from a JSON document or a file containing one.

    Expected shape: {"tables": [{"name", "columns": [{"name", "type"}], "key": [...]}]}.
    """
    if isinstance(doc, (str, Path)):
        doc = json.loads(Path(doc).read_text(encoding="utf-8"))
    schemas: dict[str, TableSchema] = {}
    for tbl in doc["tables"]:
        columns = tuple(
            (col["name"], ScalarT(ScalarType(col["type"]))) for col in tbl["columns"]
        )
        schema = TableSchema(name=tbl["name"], columns=columns, key=tuple(tbl.get("key", ())))
        if schema.name in schemas:
            raise ValueError(f"duplicate table '{schema.name}' in schema document")
        schemas[schema.name] = schema
    return schemas


def schemas_to_json(schemas: Mapping[str, TableSchema]) -> dict:
    return {
        "tables": [
            {
                "name": s.name,
                "columns": [{"name": c, "type": t.kind.value} for c, t in s.columns],
                "key": list(s.key),
            }
            for s in schemas.values()
        ]
    }


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    value: Union[int, float, bool, str]

    def scalar_type(self) -> ScalarT:
        v = self.value
        if isinstance(v, bool):
            return BOOL
        if isinstance(v, int):
            return INT
        if isinstance(v, float):
            return FLOAT
        if isinstance(v, str):
            return STRING
        raise TypeError(f"unsupported constant {v!r}")


@dataclass(frozen=True)
class TableRef:
    table: str


@dataclass(frozen=True)
class For:
    binder: str
    source: "QueryExpr"
    body: "QueryExpr"


@dataclass(frozen=True)
class Where:
    cond: "QueryExpr"
    body: "QueryExpr"


@dataclass(frozen=True)
class Singleton:
    element: "QueryExpr"


@dataclass(frozen=True)
class EmptyList:
    # Element annotation is required for typechecking; rewriting fills it in
    # when an empty collection is synthesized.
    element_type: QueryType | None = None


@dataclass(frozen=True)
class Concat:
    left: "QueryExpr"
    right: "QueryExpr"


@dataclass(frozen=True)
class RecordLit:
    fields: tuple[tuple[str, "QueryExpr"], ...]

    def __post_init__(self) -> None:
        labels = [l for l, _ in self.fields]
        if len(labels) != len(set(labels)):
            raise ValueError(f"duplicate record labels: {labels}")


@dataclass(frozen=True)
class Project:
    record: "QueryExpr"
    label: str


@dataclass(frozen=True)
class IsEmpty:
    collection: "QueryExpr"


@dataclass(frozen=True)
class If:
    cond: "QueryExpr"
    then: "QueryExpr"
    orelse: "QueryExpr"


PRIM_OPS = ("==", "!=", "<", "<=", ">", ">=", "&&", "||", "not", "+", "-", "*", "/")
_COMPARISONS = ("==", "!=", "<", "<=", ">", ">=")
_ARITHMETIC = ("+", "-", "*", "/")


@dataclass(frozen=True)
class PrimOp:
    op: str
    args: tuple["QueryExpr", ...]

    def __post_init__(self) -> None:
        if self.op not in PRIM_OPS:
            raise ValueError(f"unknown primitive '{self.op}'")
        arity = 1 if self.op == "not" else 2
        if len(self.args) != arity:
            raise ValueError(f"'{self.op}' takes {arity} arguments, got {len(self.args)}")


@dataclass(frozen=True)
class Lambda:
    params: tuple[str, ...]
    body: "QueryExpr"

    def __post_init__(self) -> None:
        if len(self.params) != len(set(self.params)):
            raise ValueError(f"duplicate lambda parameters: {self.params}")


@dataclass(frozen=True)
class Apply:
    fn: "QueryExpr"
    args: tuple["QueryExpr", ...]


QueryExpr = Union[
    Var, Const, TableRef, For, Where, Singleton, EmptyList, Concat,
    RecordLit, Project, IsEmpty, If, PrimOp, Lambda, Apply,
]


# --- construction helpers ----------------------------------------------------

def var(name: str) -> Var:
    return Var(name)


def const(value: Union[int, float, bool, str]) -> Const:
    return Const(value)


def table(name: str) -> TableRef:
    return TableRef(name)


def for_(binder: str, source: QueryExpr, body: QueryExpr) -> For:
    return For(binder, source, body)


def where(cond: QueryExpr, body: QueryExpr) -> Where:
    return Where(cond, body)


def yield_(element: QueryExpr) -> Singleton:
    return Singleton(element)


def empty(element_type: QueryType | None = None) -> EmptyList:
    return EmptyList(element_type)


def concat(left: QueryExpr, right: QueryExpr) -> Concat:
    return Concat(left, right)


def record(**fields: QueryExpr) -> RecordLit:
    return RecordLit(tuple(fields.items()))


def project(rec: QueryExpr, label: str) -> Project:
    return Project(rec, label)


def is_empty(collection: QueryExpr) -> IsEmpty:
    return IsEmpty(collection)


def if_(cond: QueryExpr, then: QueryExpr, orelse: QueryExpr) -> If:
    return If(cond, then, orelse)


def lam(params: Iterable[str], body: QueryExpr) -> Lambda:
    return Lambda(tuple(params), body)


def apply(fn: QueryExpr, *args: QueryExpr) -> Apply:
    return Apply(fn, tuple(args))


def _binop(op: str) -> Callable[[QueryExpr, QueryExpr], PrimOp]:
    def build(a: QueryExpr, b: QueryExpr) -> PrimOp:
        return PrimOp(op, (a, b))

    return build


eq = _binop("==")
ne = _binop("!=")
lt = _binop("<")
le = _binop("<=")
gt = _binop(">")
ge = _binop(">=")
add = _binop("+")
sub = _binop("-")
mul = _binop("*")
div = _binop("/")


def and_(*args: QueryExpr) -> QueryExpr:
    if not args:
        return Const(True)
    out = args[0]
    for a in args[1:]:
        out = PrimOp("&&", (out, a))
    return out


def or_(*args: QueryExpr) -> QueryExpr:
    if not args:
        return Const(False)
    out = args[0]
    for a in args[1:]:
        out = PrimOp("||", (out, a))
    return out


def not_(a: QueryExpr) -> PrimOp:
    return PrimOp("not", (a,))


# ---------------------------------------------------------------------------
# Environment and typechecking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Env:
    schemas: Mapping[str, TableSchema]
    bindings: Mapping[str, QueryType] = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.bindings is None:
            object.__setattr__(self, "bindings", {})

    def bind(self, name: str, t: QueryType) -> "Env":
        merged = dict(self.bindings)
        merged[name] = t
        return Env(self.schemas, merged)

    def bind_many(self, pairs: Iterable[tuple[str, QueryType]]) -> "Env":
        merged = dict(self.bindings)
        merged.update(pairs)
        return Env(self.schemas, merged)


def typecheck(e: QueryExpr, env: Env) -> QueryType:
    """Compute the type of ``e`` or raise a static error naming the bad subterm.

    Deterministic and total: every expression either receives a type or a
    single well-defined error.
    """
    return _check(e, env, "query")


def _check(e: QueryExpr, env: Env, path: str) -> QueryType:
    if isinstance(e, Var):
        t = env.bindings.get(e.name)
        if t is None:
            raise UnboundVariable(e.name, path)
        return t
    if isinstance(e, Const):
        return e.scalar_type()
    if isinstance(e, TableRef):
        schema = env.schemas.get(e.table)
        if schema is None:
            raise UnknownTable(e.table, path)
        return CollectionT(schema.row_type())
    if isinstance(e, For):
        src_t = _check(e.source, env, f"{path}.for({e.binder}).source")
        if not isinstance(src_t, CollectionT):
            raise TypeMismatch(f"generator source has type {src_t!r}, expected a collection", path)
        body_t = _check(e.body, env.bind(e.binder, src_t.element), f"{path}.for({e.binder}).body")
        if not isinstance(body_t, CollectionT):
            raise TypeMismatch(f"comprehension body has type {body_t!r}, expected a collection", path)
        return body_t
    if isinstance(e, Where):
        cond_t = _check(e.cond, env, f"{path}.where.cond")
        if not types_equal(cond_t, BOOL):
            raise TypeMismatch(f"filter condition has type {cond_t!r}, expected Bool", path)
        body_t = _check(e.body, env, f"{path}.where.body")
        if not isinstance(body_t, CollectionT):
            raise TypeMismatch(f"filter body has type {body_t!r}, expected a collection", path)
        return body_t
    if isinstance(e, Singleton):
        return CollectionT(_check(e.element, env, f"{path}.singleton"))
    if isinstance(e, EmptyList):
        if e.element_type is None:
            raise TypeMismatch("empty collection needs an element type annotation", path)
        return CollectionT(e.element_type)
    if isinstance(e, Concat):
        lt_ = _check(e.left, env, f"{path}.concat.left")
        rt = _check(e.right, env, f"{path}.concat.right")
        if not isinstance(lt_, CollectionT) or not isinstance(rt, CollectionT):
            raise TypeMismatch("concat operands must be collections", path)
        if not types_equal(lt_, rt):
            raise TypeMismatch(f"concat operands disagree: {lt_!r} vs {rt!r}", path)
        return lt_
    if isinstance(e, RecordLit):
        return RecordT(tuple((l, _check(v, env, f"{path}.record.{l}")) for l, v in e.fields))
    if isinstance(e, Project):
        rec_t = _check(e.record, env, f"{path}.project({e.label})")
        if not isinstance(rec_t, RecordT):
            raise TypeMismatch(f"projection target has type {rec_t!r}, expected a record", path)
        field_t = rec_t.field_type(e.label)
        if field_t is None:
            raise UnknownField(e.label, rec_t.labels(), path)
        return field_t
    if isinstance(e, IsEmpty):
        arg_t = _check(e.collection, env, f"{path}.is_empty")
        if not isinstance(arg_t, CollectionT):
            raise TypeMismatch(f"emptiness test on {arg_t!r}, expected a collection", path)
        return BOOL
    if isinstance(e, If):
        cond_t = _check(e.cond, env, f"{path}.if.cond")
        if not types_equal(cond_t, BOOL):
            raise TypeMismatch(f"conditional guard has type {cond_t!r}, expected Bool", path)
        then_t = _check(e.then, env, f"{path}.if.then")
        else_t = _check(e.orelse, env, f"{path}.if.else")
        if not types_equal(then_t, else_t):
            raise TypeMismatch(f"conditional branches disagree: {then_t!r} vs {else_t!r}", path)
        return then_t
    if isinstance(e, PrimOp):
        return _check_primop(e, env, path)
    if isinstance(e, Lambda):
        raise TypeMismatch("function literal outside an application has no query type", path)
    if isinstance(e, Apply):
        if not isinstance(e.fn, Lambda):
            raise TypeMismatch("only function literals can be applied", path)
        if len(e.args) != len(e.fn.params):
            raise TypeMismatch(
                f"function takes {len(e.fn.params)} arguments, got {len(e.args)}", path
            )
        arg_ts = [_check(a, env, f"{path}.apply.arg{i}") for i, a in enumerate(e.args)]
        inner = env.bind_many(zip(e.fn.params, arg_ts))
        return _check(e.fn.body, inner, f"{path}.apply.body")
    raise TypeMismatch(f"unrecognized expression {type(e).__name__}", path)


def _check_primop(e: PrimOp, env: Env, path: str) -> QueryType:
    arg_ts = [_check(a, env, f"{path}.{e.op}[{i}]") for i, a in enumerate(e.args)]
    op = e.op
    if op == "not":
        if not types_equal(arg_ts[0], BOOL):
            raise TypeMismatch(f"'not' on {arg_ts[0]!r}", path)
        return BOOL
    a, b = arg_ts
    if op in ("&&", "||"):
        if not (types_equal(a, BOOL) and types_equal(b, BOOL)):
            raise TypeMismatch(f"'{op}' needs Bool operands, got {a!r} and {b!r}", path)
        return BOOL
    if not isinstance(a, ScalarT) or not isinstance(b, ScalarT):
        raise TypeMismatch(f"'{op}' needs scalar operands, got {a!r} and {b!r}", path)
    if not types_equal(a, b):
        raise TypeMismatch(f"'{op}' operands disagree: {a!r} vs {b!r}", path)
    if op in ("==", "!="):
        return BOOL
    if op in ("<", "<=", ">", ">="):
        if a.kind is ScalarType.BOOL:
            raise TypeMismatch(f"ordered comparison on Bool", path)
        return BOOL
    if op in _ARITHMETIC:
        if a.kind not in (ScalarType.INT, ScalarType.FLOAT):
            raise TypeMismatch(f"arithmetic on {a!r}", path)
        return a
    raise TypeMismatch(f"unhandled primitive '{op}'", path)


# ---------------------------------------------------------------------------
# Free variables and substitution
# ---------------------------------------------------------------------------


def free_vars(e: QueryExpr) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, (Const, TableRef, EmptyList)):
        return frozenset()
    if isinstance(e, For):
        return free_vars(e.source) | (free_vars(e.body) - {e.binder})
    if isinstance(e, Where):
        return free_vars(e.cond) | free_vars(e.body)
    if isinstance(e, Singleton):
        return free_vars(e.element)
    if isinstance(e, Concat):
        return free_vars(e.left) | free_vars(e.right)
    if isinstance(e, RecordLit):
        out: frozenset[str] = frozenset()
        for _, v in e.fields:
            out |= free_vars(v)
        return out
    if isinstance(e, Project):
        return free_vars(e.record)
    if isinstance(e, IsEmpty):
        return free_vars(e.collection)
    if isinstance(e, If):
        return free_vars(e.cond) | free_vars(e.then) | free_vars(e.orelse)
    if isinstance(e, PrimOp):
        out = frozenset()
        for a in e.args:
            out |= free_vars(a)
        return out
    if isinstance(e, Lambda):
        return free_vars(e.body) - set(e.params)
    if isinstance(e, Apply):
        out = free_vars(e.fn)
        for a in e.args:
            out |= free_vars(a)
        return out
    raise TypeError(f"not a QueryExpr: {e!r}")


def fresh_name(base: str, avoid: frozenset[str] | set[str]) -> str:
    if base not in avoid:
        return base
    i = 1
    while f"{base}_{i}" in avoid:
        i += 1
    return f"{base}_{i}"


def substitute(e: QueryExpr, name: str, replacement: QueryExpr) -> QueryExpr:
    return substitute_many(e, {name: replacement})


def substitute_many(e: QueryExpr, mapping: Mapping[str, QueryExpr]) -> QueryExpr:
    """Simultaneous capture-avoiding substitution; binders renamed as needed."""
    if not mapping:
        return e
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, (Const, TableRef, EmptyList)):
        return e
    if isinstance(e, For):
        source = substitute_many(e.source, mapping)
        binder, body = _subst_under_binders((e.binder,), e.body, mapping)
        return For(binder[0], source, body)
    if isinstance(e, Where):
        return Where(substitute_many(e.cond, mapping), substitute_many(e.body, mapping))
    if isinstance(e, Singleton):
        return Singleton(substitute_many(e.element, mapping))
    if isinstance(e, Concat):
        return Concat(substitute_many(e.left, mapping), substitute_many(e.right, mapping))
    if isinstance(e, RecordLit):
        return RecordLit(tuple((l, substitute_many(v, mapping)) for l, v in e.fields))
    if isinstance(e, Project):
        return Project(substitute_many(e.record, mapping), e.label)
    if isinstance(e, IsEmpty):
        return IsEmpty(substitute_many(e.collection, mapping))
    if isinstance(e, If):
        return If(
            substitute_many(e.cond, mapping),
            substitute_many(e.then, mapping),
            substitute_many(e.orelse, mapping),
        )
    if isinstance(e, PrimOp):
        return PrimOp(e.op, tuple(substitute_many(a, mapping) for a in e.args))
    if isinstance(e, Lambda):
        params, body = _subst_under_binders(e.params, e.body, mapping)
        return Lambda(params, body)
    if isinstance(e, Apply):
        return Apply(
            substitute_many(e.fn, mapping),
            tuple(substitute_many(a, mapping) for a in e.args),
        )
    raise TypeError(f"not a QueryExpr: {e!r}")


def _subst_under_binders(
    binders: tuple[str, ...], body: QueryExpr, mapping: Mapping[str, QueryExpr]
) -> tuple[tuple[str, ...], QueryExpr]:
    # Drop mappings shadowed by the binders, then rename any binder that would
    # capture a free variable of a remaining replacement.
    live = {k: v for k, v in mapping.items() if k not in binders and k in free_vars(body)}
    if not live:
        return binders, body
    incoming: set[str] = set()
    for v in live.values():
        incoming |= free_vars(v)
    renames: dict[str, QueryExpr] = {}
    new_binders: list[str] = []
    avoid = incoming | free_vars(body) | set(binders) | set(live)
    for b in binders:
        if b in incoming:
            nb = fresh_name(b, frozenset(avoid))
            avoid = avoid | {nb}
            renames[b] = Var(nb)
            new_binders.append(nb)
        else:
            new_binders.append(b)
    combined = dict(live)
    combined.update(renames)
    return tuple(new_binders), substitute_many(body, combined)


def expr_size(e: QueryExpr) -> int:
    """Node count; used to budget the rewrite engine."""
    if isinstance(e, (Var, Const, TableRef, EmptyList)):
        return 1
    if isinstance(e, For):
        return 1 + expr_size(e.source) + expr_size(e.body)
    if isinstance(e, Where):
        return 1 + expr_size(e.cond) + expr_size(e.body)
    if isinstance(e, Singleton):
        return 1 + expr_size(e.element)
    if isinstance(e, Concat):
        return 1 + expr_size(e.left) + expr_size(e.right)
    if isinstance(e, RecordLit):
        return 1 + sum(expr_size(v) for _, v in e.fields)
    if isinstance(e, Project):
        return 1 + expr_size(e.record)
    if isinstance(e, IsEmpty):
        return 1 + expr_size(e.collection)
    if isinstance(e, If):
        return 1 + expr_size(e.cond) + expr_size(e.then) + expr_size(e.orelse)
    if isinstance(e, PrimOp):
        return 1 + sum(expr_size(a) for a in e.args)
    if isinstance(e, Lambda):
        return 1 + expr_size(e.body)
    if isinstance(e, Apply):
        return 1 + expr_size(e.fn) + sum(expr_size(a) for a in e.args)
    raise TypeError(f"not a QueryExpr: {e!r}")
