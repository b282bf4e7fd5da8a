"""In-memory relational store, direct evaluator, flat-query executor, pipeline runner.

The direct evaluator interprets comprehension expressions over nested values,
one element at a time; it is the reference semantics everything else is
checked against. The flat-query executor evaluates compiled queries by nested
loops in generator order, with equality predicates served from hash buckets
so large joins stay linear; the produced rows (and their order) are exactly
those of the plain nested loops.
"""

from __future__ import annotations

import csv
import re
import threading
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Iterator, Mapping, Optional, Protocol, Sequence

from . import ir
from .errors import DuplicateKey, ParseError, RuntimeQueryError, SchemaViolation
from .ir import (
    Apply, CollectionT, Concat, Const, EmptyList, Env, For, If, IsEmpty, Lambda,
    PrimOp, Project, QueryExpr, RecordLit, ScalarType, Singleton, TableRef,
    TableSchema, Var, Where,
)
from .metrics import MetricsRecord
from .normalize import (
    Call, Case, Col, Comprehension, Exists, Head, HeadCollection, HeadRecord,
    HeadScalar, Lit, NExpr, NormalForm, conjuncts, normalize,
)
from .shred import FlatQuery, ShredPlan, shred, stitch
from .sqlgen import SqlText, to_sql
from .values import (
    BoolV, ListV, RecordV, Value, unwrap_scalar, wrap_scalar,
)

Row = dict[str, object]


# ---------------------------------------------------------------------------
# Database
# ---------------------------------------------------------------------------


@dataclass
class Database:
    """Immutable-after-load relational store: one row list per table."""

    schemas: dict[str, TableSchema]
    tables: dict[str, list[Row]]

    def __post_init__(self) -> None:
        self._bucket_lock = threading.Lock()
        self._buckets: dict[tuple[str, str], dict[object, list[Row]]] = {}

    def env(self) -> Env:
        return Env(self.schemas)

    def rows(self, table: str) -> list[Row]:
        return self.tables[table]

    def buckets(self, table: str, column: str) -> dict[object, list[Row]]:
        """Rows of ``table`` grouped by ``column``, preserving row order.

        Lazily built and cached; the store never changes after load, so the
        cache is safe to share between requests.
        """
        key = (table, column)
        got = self._buckets.get(key)
        if got is not None:
            return got
        with self._bucket_lock:
            got = self._buckets.get(key)
            if got is None:
                got = {}
                for row in self.tables[table]:
                    got.setdefault(row[column], []).append(row)
                self._buckets[key] = got
        return got


_INT_RE = re.compile(r"^-?\d+$")
_BOOLS = {"true": True, "false": False}


def load_database(schema_file: str | Path, data_dir: str | Path) -> Database:
    """Load a schema document plus one CSV per table (UTF-8, header row)."""
    schemas = ir.schemas_from_json(Path(schema_file))
    data_dir = Path(data_dir)
    tables: dict[str, list[Row]] = {}
    for name, schema in schemas.items():
        path = data_dir / f"{name}.csv"
        if not path.exists():
            raise ParseError(str(path), "missing data file")
        tables[name] = _load_csv(path, schema)
    return Database(schemas, tables)


def _load_csv(path: Path, schema: TableSchema) -> list[Row]:
    expected = [c for c, _ in schema.columns]
    rows: list[Row] = []
    seen_keys: set[tuple] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(str(path), "empty file, expected a header row")
        if header != expected:
            raise SchemaViolation(
                f"{path}: header {header} does not match schema columns {expected}"
            )
        for lineno, cells in enumerate(reader, start=2):
            if len(cells) != len(expected):
                raise ParseError(str(path), f"expected {len(expected)} cells, got {len(cells)}", lineno)
            row: Row = {}
            for (col, ctype), cell in zip(schema.columns, cells):
                row[col] = _parse_cell(cell, ctype.kind, path, lineno, col)
            if schema.key:
                key = tuple(row[k] for k in schema.key)
                if key in seen_keys:
                    raise DuplicateKey(schema.name, key)
                seen_keys.add(key)
            rows.append(row)
    return rows


def _parse_cell(cell: str, kind: ScalarType, path: Path, lineno: int, col: str) -> object:
    if kind is ScalarType.STRING:
        return cell
    if kind is ScalarType.BOOL:
        if cell not in _BOOLS:
            raise ParseError(str(path), f"column '{col}': bad boolean {cell!r}", lineno)
        return _BOOLS[cell]
    if kind is ScalarType.INT:
        if not _INT_RE.match(cell):
            raise ParseError(str(path), f"column '{col}': bad integer {cell!r}", lineno)
        return int(cell)
    if kind is ScalarType.FLOAT:
        try:
            return float(cell)
        except ValueError:
            raise ParseError(str(path), f"column '{col}': bad float {cell!r}", lineno)
    raise ParseError(str(path), f"column '{col}': unknown type", lineno)


# ---------------------------------------------------------------------------
# Direct evaluation (the reference semantics)
# ---------------------------------------------------------------------------


def eval_direct(e: QueryExpr, db: Database, env: Optional[dict[str, Value]] = None) -> Value:
    """Evaluate ``e`` in memory with bag semantics and generator-order results."""
    return _eval(e, db, env or {})


def _eval(e: QueryExpr, db: Database, env: dict[str, Value]) -> Value:
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Const):
        return wrap_scalar(e.value)
    if isinstance(e, TableRef):
        schema = db.schemas[e.table]
        return ListV(tuple(_row_value(schema, row) for row in db.rows(e.table)))
    if isinstance(e, For):
        source = _eval(e.source, db, env)
        assert isinstance(source, ListV)
        items: list[Value] = []
        for element in source.items:
            inner = dict(env)
            inner[e.binder] = element
            body = _eval(e.body, db, inner)
            assert isinstance(body, ListV)
            items.extend(body.items)
        return ListV(tuple(items))
    if isinstance(e, Where):
        cond = _eval(e.cond, db, env)
        assert isinstance(cond, BoolV)
        if not cond.value:
            return ListV(())
        return _eval(e.body, db, env)
    if isinstance(e, Singleton):
        return ListV((_eval(e.element, db, env),))
    if isinstance(e, EmptyList):
        return ListV(())
    if isinstance(e, Concat):
        left = _eval(e.left, db, env)
        right = _eval(e.right, db, env)
        assert isinstance(left, ListV) and isinstance(right, ListV)
        return ListV(left.items + right.items)
    if isinstance(e, RecordLit):
        return RecordV(tuple((l, _eval(v, db, env)) for l, v in e.fields))
    if isinstance(e, Project):
        rec = _eval(e.record, db, env)
        assert isinstance(rec, RecordV)
        return rec.get(e.label)
    if isinstance(e, IsEmpty):
        coll = _eval(e.collection, db, env)
        assert isinstance(coll, ListV)
        return BoolV(len(coll.items) == 0)
    if isinstance(e, If):
        cond = _eval(e.cond, db, env)
        assert isinstance(cond, BoolV)
        return _eval(e.then if cond.value else e.orelse, db, env)
    if isinstance(e, PrimOp):
        args = [unwrap_scalar(_eval(a, db, env)) for a in e.args]
        return wrap_scalar(apply_primop(e.op, args))
    if isinstance(e, Apply):
        assert isinstance(e.fn, Lambda)
        inner = dict(env)
        for param, arg in zip(e.fn.params, e.args):
            inner[param] = _eval(arg, db, env)
        return _eval(e.fn.body, db, inner)
    raise RuntimeQueryError(f"cannot evaluate {type(e).__name__}")


def _row_value(schema: TableSchema, row: Row) -> RecordV:
    return RecordV(tuple((c, wrap_scalar(row[c])) for c, _ in schema.columns))


def apply_primop(op: str, args: list) -> object:
    if op == "not":
        return not args[0]
    a, b = args
    if op == "&&":
        return a and b
    if op == "||":
        return a or b
    if op == "==":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0:
            raise RuntimeQueryError("division by zero")
        if isinstance(a, int) and not isinstance(a, bool):
            # SQL-style integer division truncates toward zero.
            q = abs(a) // abs(b)
            return q if (a >= 0) == (b >= 0) else -q
        return a / b
    raise RuntimeQueryError(f"unknown primitive '{op}'")


# ---------------------------------------------------------------------------
# Normal-form evaluation over raw rows
# ---------------------------------------------------------------------------

RawEnv = dict[str, Row]


def _eval_nexpr(e: NExpr, env: RawEnv, db: Database) -> object:
    if isinstance(e, Col):
        return env[e.binder][e.field]
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, Call):
        if e.op == "&&":
            return _eval_nexpr(e.args[0], env, db) and _eval_nexpr(e.args[1], env, db)
        if e.op == "||":
            return _eval_nexpr(e.args[0], env, db) or _eval_nexpr(e.args[1], env, db)
        return apply_primop(e.op, [_eval_nexpr(a, env, db) for a in e.args])
    if isinstance(e, Case):
        if _eval_nexpr(e.cond, env, db):
            return _eval_nexpr(e.then, env, db)
        return _eval_nexpr(e.orelse, env, db)
    if isinstance(e, Exists):
        nonempty = any(True for _ in _nf_rows(e.nf, db, env, limit=1))
        return (not nonempty) if e.negated else nonempty
    raise RuntimeQueryError(f"cannot evaluate {type(e).__name__}")


def _nf_rows(nf: NormalForm, db: Database, outer: RawEnv, limit: int | None = None) -> Iterator[RawEnv]:
    count = 0
    for comp in nf.branches:
        for env in _comp_envs(comp, db, outer):
            yield env
            count += 1
            if limit is not None and count >= limit:
                return


def _comp_envs(comp: Comprehension, db: Database, outer: RawEnv) -> Iterator[RawEnv]:
    """Generator bindings of one comprehension, in nested-loop order.

    Equality conjuncts of the form ``new_binder.column == expr-over-earlier-
    scope`` probe hash buckets instead of scanning, which preserves the loop
    order exactly while avoiding quadratic joins. All other conjuncts are
    evaluated as filters at the earliest point their variables are bound.
    """
    bound = set(outer)
    plan: list[tuple[str, str, Optional[tuple[str, NExpr]], list[NExpr]]] = []
    remaining = conjuncts(comp.predicate)
    pre_filters: list[NExpr] = [c for c in remaining if _vars_of(c) <= bound]
    remaining = [c for c in remaining if not _vars_of(c) <= bound]

    for binder, tbl in comp.generators:
        bound.add(binder)
        ready = [c for c in remaining if _vars_of(c) <= bound]
        remaining = [c for c in remaining if not _vars_of(c) <= bound]
        probe: Optional[tuple[str, NExpr]] = None
        filters: list[NExpr] = []
        for c in ready:
            if probe is None:
                hit = _equi_probe(c, binder, bound)
                if hit is not None:
                    probe = hit
                    continue
            filters.append(c)
        plan.append((binder, tbl, probe, filters))
    assert not remaining, f"predicate mentions unbound binders: {remaining}"

    env = dict(outer)
    for c in pre_filters:
        if not _eval_nexpr(c, env, db):
            return

    def loop(level: int) -> Iterator[RawEnv]:
        if level == len(plan):
            yield dict(env)
            return
        binder, tbl, probe, filters = plan[level]
        if probe is not None:
            column, key_expr = probe
            rows = db.buckets(tbl, column).get(_eval_nexpr(key_expr, env, db), ())
        else:
            rows = db.rows(tbl)
        for row in rows:
            env[binder] = row
            if all(_eval_nexpr(c, env, db) for c in filters):
                yield from loop(level + 1)
        env.pop(binder, None)

    yield from loop(0)


def _vars_of(e: NExpr) -> set[str]:
    if isinstance(e, Col):
        return {e.binder}
    if isinstance(e, Lit):
        return set()
    if isinstance(e, Call):
        out: set[str] = set()
        for a in e.args:
            out |= _vars_of(a)
        return out
    if isinstance(e, Case):
        return _vars_of(e.cond) | _vars_of(e.then) | _vars_of(e.orelse)
    if isinstance(e, Exists):
        out = set()
        for comp in e.nf.branches:
            out |= _nf_vars(comp) - {b for b, _ in comp.generators}
        return out
    raise TypeError(f"not an NExpr: {e!r}")


def _nf_vars(comp: Comprehension) -> set[str]:
    out = _vars_of(comp.predicate)
    out |= _head_vars(comp.head)
    return out


def _head_vars(h: Head) -> set[str]:
    if isinstance(h, HeadScalar):
        return _vars_of(h.expr)
    if isinstance(h, HeadRecord):
        out: set[str] = set()
        for _, v in h.fields:
            out |= _head_vars(v)
        return out
    if isinstance(h, HeadCollection):
        out = set()
        for comp in h.nf.branches:
            out |= _nf_vars(comp) - {b for b, _ in comp.generators}
        return out
    raise TypeError(f"not a Head: {h!r}")


def _equi_probe(c: NExpr, binder: str, bound: set[str]) -> Optional[tuple[str, NExpr]]:
    """Recognize ``binder.col == earlier-expr`` (either side) for hash probing."""
    if not (isinstance(c, Call) and c.op == "=="):
        return None
    left, right = c.args
    earlier = bound - {binder}
    if isinstance(left, Col) and left.binder == binder and _vars_of(right) <= earlier:
        return (left.field, right)
    if isinstance(right, Col) and right.binder == binder and _vars_of(left) <= earlier:
        return (right.field, left)
    return None


def eval_nf(nf: NormalForm, db: Database, outer: Optional[RawEnv] = None) -> ListV:
    """Evaluate a normal form to its nested value, without shredding."""
    return ListV(tuple(_eval_nf_items(nf, db, outer or {})))


def _eval_nf_items(nf: NormalForm, db: Database, outer: RawEnv) -> list[Value]:
    items: list[Value] = []
    for comp in nf.branches:
        for env in _comp_envs(comp, db, outer):
            items.append(_head_value(comp.head, env, db))
    return items


def _head_value(h: Head, env: RawEnv, db: Database) -> Value:
    if isinstance(h, HeadScalar):
        return wrap_scalar(_eval_nexpr(h.expr, env, db))
    if isinstance(h, HeadRecord):
        return RecordV(tuple((l, _head_value(v, env, db)) for l, v in h.fields))
    if isinstance(h, HeadCollection):
        return ListV(tuple(_eval_nf_items(h.nf, db, env)))
    raise TypeError(f"not a Head: {h!r}")


# ---------------------------------------------------------------------------
# Flat-query execution
# ---------------------------------------------------------------------------


def exec_flat(q: FlatQuery, db: Database) -> list[Row]:
    """Run one flat query in memory; row order follows branch then loop order."""
    out: list[Row] = []
    index_labels = q.index_labels()
    parent_labels = q.parent_index_labels()
    for branch in q.branches:
        comp = Comprehension(branch.generators, branch.predicate, HeadScalar(Lit(True)))
        for env in _comp_envs(comp, db, {}):
            row: Row = {}
            for label, expr in branch.select:
                row[label] = _eval_nexpr(expr, env, db)
            for label, expr in zip(index_labels, branch.index_exprs):
                row[label] = _eval_nexpr(expr, env, db)
            for label, expr in zip(parent_labels, branch.parent_index_exprs):
                row[label] = _eval_nexpr(expr, env, db)
            out.append(row)
    return out


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


class BackendAdapter(Protocol):
    """An external relational backend that can run generated SQL."""

    def execute(self, sql: SqlText) -> list[Row]: ...


def run_query(
    e: QueryExpr,
    db: Database,
    metrics: Optional[MetricsRecord] = None,
    backend: Optional[BackendAdapter] = None,
) -> Value:
    """Normalize, shred, execute, and stitch; accounts work into ``metrics``.

    Query handling time includes normalization and stitching, not just raw
    execution, so the recorded figure reflects everything a request spends on
    getting data.
    """
    start = time.perf_counter()
    env = db.env()
    result_type = ir.typecheck(e, env)
    nf = normalize(e, env)
    plan = shred(nf, result_type, db.schemas)
    results: list[list[Row]] = []
    for q in plan.queries:
        if backend is not None:
            results.append(backend.execute(to_sql(q)))
        else:
            results.append(exec_flat(q, db))
    value = stitch(plan, results)
    if metrics is not None:
        metrics.query_count += len(plan.queries)
        metrics.query_time += (time.perf_counter() - start) * 1000.0
    return value
