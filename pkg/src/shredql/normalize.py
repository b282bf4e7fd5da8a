"""Rewriting of typechecked query expressions into a flat, SQL-ready normal form.

The normal form is a union of comprehensions: every generator ranges over a
base table, the predicate is a quantifier-free boolean expression whose only
subqueries are emptiness tests, and collection values occur only in head
position. Function applications are eliminated by beta reduction, so host
helpers that assemble query fragments are inlined for free.

Rewriting is innermost-first with a fixed rule order, so a given input always
produces the same normal form; golden tests rely on that. A step budget that
is polynomial in the input size turns any rewriting defect into an error
instead of a hang.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Union

from . import ir
from .errors import NormalizationBudgetExceeded, NotTranslatable, TypeMismatch
from .ir import (
    Apply, CollectionT, Concat, Const, EmptyList, Env, For, If, IsEmpty,
    Lambda, PrimOp, Project, QueryExpr, QueryType, RecordLit, RecordT,
    Singleton, TableRef, Var, Where,
)

# ---------------------------------------------------------------------------
# Normal-form data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Col:
    """Projection of a generator binder's column."""

    binder: str
    field: str


@dataclass(frozen=True)
class Lit:
    value: Union[int, float, bool, str]


@dataclass(frozen=True)
class Call:
    op: str
    args: tuple["NExpr", ...]


@dataclass(frozen=True)
class Case:
    """Scalar conditional; renders as SQL CASE WHEN."""

    cond: "NExpr"
    then: "NExpr"
    orelse: "NExpr"


@dataclass(frozen=True)
class Exists:
    """Emptiness test on a nested normal form, possibly negated.

    ``element_type`` is carried only so the atom can be embedded back into an
    expression; it does not participate in equality up to renaming.
    """

    nf: "NormalForm"
    negated: bool = False
    element_type: QueryType | None = None


NExpr = Union[Col, Lit, Call, Case, Exists]


@dataclass(frozen=True)
class HeadScalar:
    expr: NExpr


@dataclass(frozen=True)
class HeadRecord:
    fields: tuple[tuple[str, "Head"], ...]


@dataclass(frozen=True)
class HeadCollection:
    nf: "NormalForm"
    element_type: QueryType | None = None


Head = Union[HeadScalar, HeadRecord, HeadCollection]


@dataclass(frozen=True)
class Comprehension:
    """One union branch: table generators, a flat predicate, and a head."""

    generators: tuple[tuple[str, str], ...]  # (binder, table), in scope order
    predicate: NExpr
    head: Head


@dataclass(frozen=True)
class NormalForm:
    """Ordered union of comprehensions; the empty union denotes no rows."""

    branches: tuple[Comprehension, ...]


TRUE = Lit(True)
FALSE = Lit(False)


def conjoin(parts: list[NExpr]) -> NExpr:
    live = [p for p in parts if p != TRUE]
    if not live:
        return TRUE
    out = live[0]
    for p in live[1:]:
        out = Call("&&", (out, p))
    return out


def conjuncts(pred: NExpr) -> list[NExpr]:
    """Flatten a conjunction tree into its atoms, left to right."""
    if isinstance(pred, Call) and pred.op == "&&":
        return conjuncts(pred.args[0]) + conjuncts(pred.args[1])
    if pred == TRUE:
        return []
    return [pred]


# ---------------------------------------------------------------------------
# Rewriting
# ---------------------------------------------------------------------------


def step_budget(size: int) -> int:
    return 2_000 + 10 * size**3


def normalize(e: QueryExpr, env: Env) -> NormalForm:
    """Rewrite ``e`` to normal form; requires that ``e`` typechecks to a collection.

    Evaluating the result over any database (directly, or by shredding and
    stitching) yields the same bag of values as evaluating ``e`` itself.
    """
    t = ir.typecheck(e, env)
    if not isinstance(t, CollectionT):
        raise TypeMismatch(f"normalize needs a collection-typed query, got {t!r}")
    rw = _Rewriter(env)
    reduced = rw.norm(e, dict(env.bindings))
    return _extract_union(reduced, env, dict(env.bindings), "query")


class _Rewriter:
    def __init__(self, env: Env) -> None:
        self.env = env
        self.steps = 0
        self.budget = 0

    def norm(self, e: QueryExpr, binders: dict[str, QueryType]) -> QueryExpr:
        self.budget = step_budget(ir.expr_size(e))
        self.steps = 0
        return self._norm(e, binders)

    def _step(self) -> None:
        self.steps += 1
        if self.steps > self.budget:
            raise NormalizationBudgetExceeded(self.steps, self.budget)

    def _type_of(self, e: QueryExpr, binders: dict[str, QueryType]) -> QueryType:
        return ir.typecheck(e, ir.Env(self.env.schemas, binders))

    def _norm(self, e: QueryExpr, binders: dict[str, QueryType]) -> QueryExpr:
        if isinstance(e, (Var, Const, TableRef, EmptyList, Lambda)):
            return e

        if isinstance(e, Apply):
            args = tuple(self._norm(a, binders) for a in e.args)
            fn = e.fn if isinstance(e.fn, Lambda) else self._norm(e.fn, binders)
            if isinstance(fn, Lambda):
                self._step()
                body = ir.substitute_many(fn.body, dict(zip(fn.params, args)))
                return self._norm(body, binders)
            return Apply(fn, args)

        if isinstance(e, Project):
            rec = self._norm(e.record, binders)
            if isinstance(rec, RecordLit):
                self._step()
                for l, v in rec.fields:
                    if l == e.label:
                        return v
                raise NotTranslatable(f"projection of missing field '{e.label}'")
            if isinstance(rec, If):
                self._step()
                return self._norm(
                    If(rec.cond, Project(rec.then, e.label), Project(rec.orelse, e.label)),
                    binders,
                )
            return Project(rec, e.label)

        if isinstance(e, RecordLit):
            return RecordLit(tuple((l, self._norm(v, binders)) for l, v in e.fields))

        if isinstance(e, Singleton):
            return Singleton(self._norm(e.element, binders))

        if isinstance(e, Concat):
            left = self._norm(e.left, binders)
            right = self._norm(e.right, binders)
            if isinstance(left, EmptyList):
                self._step()
                return right
            if isinstance(right, EmptyList):
                self._step()
                return left
            return Concat(left, right)

        if isinstance(e, IsEmpty):
            return IsEmpty(self._norm(e.collection, binders))

        if isinstance(e, PrimOp):
            args = tuple(self._norm(a, binders) for a in e.args)
            if e.op == "not":
                (a,) = args
                if isinstance(a, Const):
                    self._step()
                    return Const(not a.value)
                if isinstance(a, PrimOp) and a.op == "not":
                    self._step()
                    return a.args[0]
            return PrimOp(e.op, args)

        if isinstance(e, If):
            cond = self._norm(e.cond, binders)
            if isinstance(cond, Const):
                self._step()
                return self._norm(e.then if cond.value else e.orelse, binders)
            then = self._norm(e.then, binders)
            orelse = self._norm(e.orelse, binders)
            branch_t = self._type_of(then, binders)
            if isinstance(branch_t, CollectionT):
                self._step()
                return self._norm(
                    Concat(Where(cond, then), Where(PrimOp("not", (cond,)), orelse)),
                    binders,
                )
            if isinstance(branch_t, RecordT):
                self._step()
                expanded = RecordLit(
                    tuple(
                        (l, If(cond, Project(then, l), Project(orelse, l)))
                        for l in branch_t.labels()
                    )
                )
                return self._norm(expanded, binders)
            return If(cond, then, orelse)

        if isinstance(e, Where):
            cond = self._norm(e.cond, binders)
            body = self._norm(e.body, binders)
            if isinstance(cond, Const):
                self._step()
                if cond.value:
                    return body
                elem = self._type_of(body, binders)
                assert isinstance(elem, CollectionT)
                return EmptyList(elem.element)
            if isinstance(body, EmptyList):
                self._step()
                return body
            if isinstance(body, Concat):
                self._step()
                return self._norm(
                    Concat(Where(cond, body.left), Where(cond, body.right)), binders
                )
            return Where(cond, body)

        if isinstance(e, For):
            source = self._norm(e.source, binders)
            src_t = self._type_of(source, binders)
            if not isinstance(src_t, CollectionT):
                raise NotTranslatable("generator source lost its collection type")
            inner = dict(binders)
            inner[e.binder] = src_t.element
            body = self._norm(e.body, inner)
            return self._norm_for(e.binder, source, body, binders)

        raise NotTranslatable(f"unrecognized expression {type(e).__name__}")

    def _norm_for(
        self,
        binder: str,
        source: QueryExpr,
        body: QueryExpr,
        binders: dict[str, QueryType],
    ) -> QueryExpr:
        """Apply the generator rules to an already-normalized source and body."""
        if isinstance(source, Singleton):
            self._step()
            return self._norm(ir.substitute(body, binder, source.element), binders)
        if isinstance(source, EmptyList):
            self._step()
            body_t = self._type_of_body(body, binder, source, binders)
            return EmptyList(body_t.element)
        if isinstance(source, Concat):
            self._step()
            return self._norm(
                Concat(For(binder, source.left, body), For(binder, source.right, body)),
                binders,
            )
        if isinstance(source, For):
            self._step()
            y = source.binder
            inner_body = source.body
            if y == binder or y in ir.free_vars(body):
                fresh = ir.fresh_name(y, ir.free_vars(body) | ir.free_vars(inner_body) | {binder, y})
                inner_body = ir.substitute(inner_body, y, Var(fresh))
                y = fresh
            return self._norm(For(y, source.source, For(binder, inner_body, body)), binders)
        if isinstance(source, Where):
            self._step()
            return self._norm(Where(source.cond, For(binder, source.body, body)), binders)
        if isinstance(source, TableRef):
            if isinstance(body, EmptyList):
                self._step()
                return body
            if isinstance(body, Concat):
                self._step()
                return self._norm(
                    Concat(For(binder, source, body.left), For(binder, source, body.right)),
                    binders,
                )
            return For(binder, source, body)
        # A stuck source (unapplied function and the like): keep the node and
        # let extraction report it.
        return For(binder, source, body)

    def _type_of_body(
        self,
        body: QueryExpr,
        binder: str,
        source: QueryExpr,
        binders: dict[str, QueryType],
    ) -> CollectionT:
        src_t = self._type_of(source, binders)
        inner = dict(binders)
        inner[binder] = src_t.element  # type: ignore[union-attr]
        body_t = self._type_of(body, inner)
        assert isinstance(body_t, CollectionT)
        return body_t


# ---------------------------------------------------------------------------
# Extraction into the normal-form data model
# ---------------------------------------------------------------------------


def _extract_union(
    e: QueryExpr, env: Env, binders: dict[str, QueryType], path: str
) -> NormalForm:
    branches: list[Comprehension] = []
    for part in _union_parts(e):
        if isinstance(part, EmptyList):
            continue
        branches.append(_extract_comp(part, env, binders, path))
    return NormalForm(tuple(branches))


def _union_parts(e: QueryExpr) -> list[QueryExpr]:
    if isinstance(e, Concat):
        return _union_parts(e.left) + _union_parts(e.right)
    return [e]


def _extract_comp(
    e: QueryExpr, env: Env, binders: dict[str, QueryType], path: str
) -> Comprehension:
    gens: list[tuple[str, str]] = []
    preds: list[NExpr] = []
    scope = dict(binders)
    node = e
    while True:
        if isinstance(node, For):
            if not isinstance(node.source, TableRef):
                raise NotTranslatable(
                    f"generator source is {type(node.source).__name__}, not a table", path
                )
            schema = env.schemas[node.source.table]
            gens.append((node.binder, node.source.table))
            scope[node.binder] = schema.row_type()
            node = node.body
            continue
        if isinstance(node, Where):
            preds.append(_extract_pred(node.cond, env, scope, f"{path}.where"))
            node = node.body
            continue
        if isinstance(node, Singleton):
            head = _extract_head(node.element, env, scope, f"{path}.head")
            return Comprehension(tuple(gens), conjoin(preds), head)
        raise NotTranslatable(
            f"{type(node).__name__} cannot terminate a comprehension", path
        )


def _extract_pred(
    e: QueryExpr, env: Env, scope: dict[str, QueryType], path: str
) -> NExpr:
    if isinstance(e, PrimOp) and e.op == "not" and isinstance(e.args[0], IsEmpty):
        inner = e.args[0].collection
        return Exists(
            _extract_union(inner, env, scope, f"{path}.exists"),
            negated=False,
            element_type=_element_type(inner, env, scope),
        )
    if isinstance(e, IsEmpty):
        return Exists(
            _extract_union(e.collection, env, scope, f"{path}.exists"),
            negated=True,
            element_type=_element_type(e.collection, env, scope),
        )
    if isinstance(e, PrimOp):
        return Call(e.op, tuple(_extract_pred(a, env, scope, path) for a in e.args))
    if isinstance(e, Const):
        return Lit(e.value)
    if isinstance(e, Project):
        if isinstance(e.record, Var):
            return Col(e.record.name, e.label)
        raise NotTranslatable("projection of a non-generator record survived rewriting", path)
    if isinstance(e, If):
        return Case(
            _extract_pred(e.cond, env, scope, path),
            _extract_pred(e.then, env, scope, path),
            _extract_pred(e.orelse, env, scope, path),
        )
    raise NotTranslatable(f"{type(e).__name__} is not a flat scalar expression", path)


def _element_type(e: QueryExpr, env: Env, scope: dict[str, QueryType]) -> QueryType:
    t = ir.typecheck(e, ir.Env(env.schemas, scope))
    assert isinstance(t, CollectionT)
    return t.element


def _extract_head(
    e: QueryExpr, env: Env, scope: dict[str, QueryType], path: str
) -> Head:
    t = ir.typecheck(e, ir.Env(env.schemas, scope))
    if isinstance(t, CollectionT):
        return HeadCollection(_extract_union(e, env, scope, path), element_type=t.element)
    if isinstance(t, RecordT):
        if isinstance(e, RecordLit):
            return HeadRecord(
                tuple((l, _extract_head(v, env, scope, f"{path}.{l}")) for l, v in e.fields)
            )
        if isinstance(e, Var):
            # A whole-row head: expand to one column per schema field.
            return HeadRecord(
                tuple((l, HeadScalar(Col(e.name, l))) for l in t.labels())
            )
        raise NotTranslatable(
            f"record-typed head is {type(e).__name__}, expected a literal or a binder", path
        )
    return HeadScalar(_extract_pred(e, env, scope, path))


# ---------------------------------------------------------------------------
# Alpha-insensitive equality and canonical renaming
# ---------------------------------------------------------------------------


def canonical(nf: NormalForm) -> NormalForm:
    """Rename generator binders to a position-determined scheme (g0, g1, ...).

    Two normal forms are alpha-equivalent exactly when their canonical forms
    are equal. The renaming also guarantees globally unique binders, which the
    shredder relies on when it concatenates generator scopes.
    """
    counter = itertools.count()
    return _canon_nf(nf, {}, counter)


def nf_equal(a: NormalForm, b: NormalForm) -> bool:
    return canonical(a) == canonical(b)


def _canon_nf(nf: NormalForm, names: dict[str, str], counter) -> NormalForm:
    return NormalForm(tuple(_canon_comp(c, names, counter) for c in nf.branches))


def _canon_comp(c: Comprehension, names: dict[str, str], counter) -> Comprehension:
    local = dict(names)
    gens = []
    for binder, table in c.generators:
        new = f"g{next(counter)}"
        local[binder] = new
        gens.append((new, table))
    return Comprehension(
        tuple(gens),
        _canon_expr(c.predicate, local, counter),
        _canon_head(c.head, local, counter),
    )


def _canon_expr(e: NExpr, names: dict[str, str], counter) -> NExpr:
    if isinstance(e, Col):
        return Col(names.get(e.binder, e.binder), e.field)
    if isinstance(e, Lit):
        return e
    if isinstance(e, Call):
        return Call(e.op, tuple(_canon_expr(a, names, counter) for a in e.args))
    if isinstance(e, Case):
        return Case(
            _canon_expr(e.cond, names, counter),
            _canon_expr(e.then, names, counter),
            _canon_expr(e.orelse, names, counter),
        )
    if isinstance(e, Exists):
        return Exists(_canon_nf(e.nf, names, counter), e.negated, element_type=None)
    raise TypeError(f"not an NExpr: {e!r}")


def _canon_head(h: Head, names: dict[str, str], counter) -> Head:
    if isinstance(h, HeadScalar):
        return HeadScalar(_canon_expr(h.expr, names, counter))
    if isinstance(h, HeadRecord):
        return HeadRecord(tuple((l, _canon_head(v, names, counter)) for l, v in h.fields))
    if isinstance(h, HeadCollection):
        return HeadCollection(_canon_nf(h.nf, names, counter), element_type=None)
    raise TypeError(f"not a Head: {h!r}")


# ---------------------------------------------------------------------------
# Debug dump (stable format, used by golden tests)
# ---------------------------------------------------------------------------


def dump_nf(nf: NormalForm) -> str:
    lines: list[str] = []
    _dump_nf(nf, lines, 0)
    return "\n".join(lines) + "\n"


def _dump_nf(nf: NormalForm, lines: list[str], depth: int) -> None:
    pad = "  " * depth
    if not nf.branches:
        lines.append(f"{pad}union (empty)")
        return
    lines.append(f"{pad}union")
    for comp in nf.branches:
        lines.append(f"{pad}  comprehension")
        for binder, table in comp.generators:
            lines.append(f"{pad}    for {binder} in {table}")
        lines.append(f"{pad}    where {format_nexpr(comp.predicate)}")
        _dump_head(comp.head, lines, depth + 2)


def _dump_head(h: Head, lines: list[str], depth: int) -> None:
    pad = "  " * depth
    if isinstance(h, HeadScalar):
        lines.append(f"{pad}head {format_nexpr(h.expr)}")
    elif isinstance(h, HeadRecord):
        lines.append(f"{pad}head record")
        for l, v in h.fields:
            if isinstance(v, HeadScalar):
                lines.append(f"{pad}  {l} = {format_nexpr(v.expr)}")
            else:
                lines.append(f"{pad}  {l} =")
                _dump_head(v, lines, depth + 2)
    elif isinstance(h, HeadCollection):
        _dump_nf(h.nf, lines, depth)
    else:
        raise TypeError(f"not a Head: {h!r}")


_PRECEDENCE = {"||": 1, "&&": 2, "not": 3, "==": 4, "!=": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
               "+": 5, "-": 5, "*": 6, "/": 6}


def format_nexpr(e: NExpr, parent_prec: int = 0) -> str:
    if isinstance(e, Col):
        return f"{e.binder}.{e.field}"
    if isinstance(e, Lit):
        return repr(e.value) if isinstance(e.value, str) else str(e.value)
    if isinstance(e, Call):
        if e.op == "not":
            text = f"not {format_nexpr(e.args[0], _PRECEDENCE['not'])}"
            prec = _PRECEDENCE["not"]
        else:
            prec = _PRECEDENCE[e.op]
            text = f"{format_nexpr(e.args[0], prec)} {e.op} {format_nexpr(e.args[1], prec + 1)}"
        return f"({text})" if prec < parent_prec else text
    if isinstance(e, Case):
        return (
            f"case({format_nexpr(e.cond)}, {format_nexpr(e.then)}, {format_nexpr(e.orelse)})"
        )
    if isinstance(e, Exists):
        label = "not-exists" if e.negated else "exists"
        inner = dump_nf(e.nf).rstrip("\n").replace("\n", "; ")
        return f"{label}[{inner}]"
    raise TypeError(f"not an NExpr: {e!r}")


# ---------------------------------------------------------------------------
# Embedding back into the expression language (round-trip support)
# ---------------------------------------------------------------------------


def embed(nf: NormalForm, element_type: QueryType) -> QueryExpr:
    """Rebuild a query expression denoting ``nf``; useful for idempotence checks."""
    if not nf.branches:
        return EmptyList(element_type)
    parts = [_embed_comp(c) for c in nf.branches]
    out = parts[0]
    for p in parts[1:]:
        out = Concat(out, p)
    return out


def _embed_comp(c: Comprehension) -> QueryExpr:
    body: QueryExpr = Singleton(_embed_head(c.head))
    if c.predicate != TRUE:
        body = Where(_embed_nexpr(c.predicate), body)
    for binder, table in reversed(c.generators):
        body = For(binder, TableRef(table), body)
    return body


def _embed_head(h: Head) -> QueryExpr:
    if isinstance(h, HeadScalar):
        return _embed_nexpr(h.expr)
    if isinstance(h, HeadRecord):
        return RecordLit(tuple((l, _embed_head(v)) for l, v in h.fields))
    if isinstance(h, HeadCollection):
        if h.element_type is None:
            raise ValueError("cannot embed a collection head without its element type")
        return embed(h.nf, h.element_type)
    raise TypeError(f"not a Head: {h!r}")


def _embed_nexpr(e: NExpr) -> QueryExpr:
    if isinstance(e, Col):
        return Project(Var(e.binder), e.field)
    if isinstance(e, Lit):
        return Const(e.value)
    if isinstance(e, Call):
        return PrimOp(e.op, tuple(_embed_nexpr(a) for a in e.args))
    if isinstance(e, Case):
        return If(_embed_nexpr(e.cond), _embed_nexpr(e.then), _embed_nexpr(e.orelse))
    if isinstance(e, Exists):
        if e.element_type is None:
            raise ValueError("cannot embed an exists atom without its element type")
        test = IsEmpty(embed(e.nf, e.element_type))
        return test if e.negated else PrimOp("not", (test,))
    raise TypeError(f"not an NExpr: {e!r}")
