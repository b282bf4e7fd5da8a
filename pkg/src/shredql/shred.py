"""Compilation of a normal form with nested heads into flat queries plus a stitch plan.

Every collection constructor in the result type becomes exactly one flat
query, regardless of database contents. A nested collection's query carries
the generators and predicate of its enclosing level, so its rows can be
grouped under parent rows by composite key columns; when a level is a union
of several comprehensions, a literal branch tag keeps the key spaces of the
branches apart.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Union

from .errors import MissingKey, OrphanRow
from .ir import CollectionT, QueryType, RecordT, ScalarT, TableSchema, collection_count
from .normalize import (
    Call, Col, Comprehension, Exists, Head, HeadCollection, HeadRecord,
    HeadScalar, Lit, NExpr, NormalForm, TRUE, canonical, conjoin,
)
from .values import ListV, RecordV, Value, coerce_scalar

INDEX_LABEL = "_ix_{}"
PARENT_INDEX_LABEL = "_ix_p{}"


# ---------------------------------------------------------------------------
# Plan data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Branch:
    """One union branch of a flat query."""

    generators: tuple[tuple[str, str], ...]
    predicate: NExpr
    select: tuple[tuple[str, NExpr], ...]
    index_exprs: tuple[NExpr, ...]
    parent_index_exprs: tuple[NExpr, ...]


@dataclass(frozen=True)
class FlatQuery:
    """A flat query: a union of branches sharing one output column list.

    ``index_arity`` / ``parent_index_arity`` count the key columns that
    position a row relative to its children and its parent; the corresponding
    columns are materialized only when some query actually consumes them
    (``emit_index`` for parents, a nonzero parent arity for children).
    """

    branches: tuple[Branch, ...]
    select_labels: tuple[str, ...]
    index_arity: int
    parent_index_arity: int
    parent_query: int | None
    emit_index: bool

    @property
    def generators(self) -> tuple[tuple[str, str], ...]:
        self._single()
        return self.branches[0].generators

    @property
    def predicate(self) -> NExpr:
        self._single()
        return self.branches[0].predicate

    @property
    def select(self) -> tuple[tuple[str, NExpr], ...]:
        self._single()
        return self.branches[0].select

    @property
    def index_cols(self) -> tuple[NExpr, ...]:
        self._single()
        return self.branches[0].index_exprs

    @property
    def parent_index_cols(self) -> tuple[NExpr, ...]:
        self._single()
        return self.branches[0].parent_index_exprs

    def _single(self) -> None:
        if len(self.branches) != 1:
            raise ValueError("query is a union; inspect .branches instead")

    def index_labels(self) -> tuple[str, ...]:
        if not self.emit_index:
            return ()
        return tuple(INDEX_LABEL.format(i) for i in range(self.index_arity))

    def parent_index_labels(self) -> tuple[str, ...]:
        if self.parent_query is None:
            return ()
        return tuple(PARENT_INDEX_LABEL.format(i) for i in range(self.parent_index_arity))


@dataclass(frozen=True)
class ScalarSlot:
    label: str
    scalar_type: ScalarT


@dataclass(frozen=True)
class RecordSlot:
    fields: tuple[tuple[str, "Slot"], ...]


@dataclass(frozen=True)
class CollectionSlot:
    query: int
    element: "Slot"


Slot = Union[ScalarSlot, RecordSlot, CollectionSlot]


@dataclass(frozen=True)
class ShredPlan:
    queries: tuple[FlatQuery, ...]
    stitch: CollectionSlot
    result_type: QueryType


# ---------------------------------------------------------------------------
# Plan construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Context:
    """A union branch of the enclosing level, seen from a nested collection."""

    generators: tuple[tuple[str, str], ...]
    predicate: NExpr
    parent_keys: tuple[NExpr, ...]  # enclosing index (unpadded, no tag)
    parent_tag: int
    nf: NormalForm


def shred(nf: NormalForm, result_type: QueryType, schemas: Mapping[str, TableSchema]) -> ShredPlan:
    """Compile ``nf`` into exactly ``collection_count(result_type)`` flat queries."""
    if not isinstance(result_type, CollectionT):
        raise ValueError(f"result type must be a collection, got {result_type!r}")
    nf = canonical(nf)  # guarantees globally unique binders across scope chains
    builder = _Builder(schemas)
    root_ctx = _Context(generators=(), predicate=TRUE, parent_keys=(), parent_tag=0, nf=nf)
    stitch = builder.build_collection([root_ctx], result_type, parent_query=None)
    queries = builder.finish()
    plan = ShredPlan(tuple(queries), stitch, result_type)
    assert len(plan.queries) == collection_count(result_type)
    return plan


class _Builder:
    def __init__(self, schemas: Mapping[str, TableSchema]) -> None:
        self.schemas = schemas
        self.queries: list[FlatQuery | None] = []

    def finish(self) -> list[FlatQuery]:
        assert all(q is not None for q in self.queries)
        return self.queries  # type: ignore[return-value]

    def build_collection(
        self, contexts: Sequence[_Context], ctype: CollectionT, parent_query: int | None
    ) -> CollectionSlot:
        query_index = len(self.queries)
        self.queries.append(None)  # reserve the slot; children take later indexes

        # Flatten (enclosing branch, local branch) pairs into this query's branches.
        raw: list[tuple[_Context, Comprehension, tuple[NExpr, ...], int]] = []
        tag = 0
        for ctx in contexts:
            for comp in ctx.nf.branches:
                own_keys = ctx.parent_keys + self._generator_keys(comp.generators)
                raw.append((ctx, comp, own_keys, tag))
                tag += 1

        multi = len(raw) > 1
        parent_arity = max((len(c.parent_keys) for c in contexts), default=0)
        parent_tagged = len(contexts) > 1
        if parent_query is not None and parent_tagged:
            parent_arity += 1
        index_arity = max((len(k) for _, _, k, _ in raw), default=0) + (1 if multi else 0)

        element_slot = self._slot_of(ctype.element, "")

        branches: list[Branch] = []
        for ctx, comp, own_keys, tag_value in raw:
            select = tuple(self._select_items(element_slot, comp.head))
            index_exprs = self._pad_index(own_keys, tag_value if multi else None, index_arity)
            parent_exprs = self._pad_index(
                ctx.parent_keys,
                ctx.parent_tag if parent_tagged else None,
                parent_arity if parent_query is not None else 0,
            )
            branches.append(
                Branch(
                    generators=ctx.generators + comp.generators,
                    predicate=conjoin([ctx.predicate, comp.predicate]),
                    select=select,
                    index_exprs=index_exprs,
                    parent_index_exprs=parent_exprs if parent_query is not None else (),
                )
            )

        # Recurse into nested collections after this query's own branches exist,
        # so child query indexes follow the parent's (preorder numbering).
        final_element = self._build_children(
            element_slot, ctype.element, raw, branches, query_index
        )
        emit_index = _has_collection(final_element)

        labels = (
            tuple(l for l, _ in branches[0].select)
            if branches
            else self._labels_for(final_element)
        )
        self.queries[query_index] = FlatQuery(
            branches=tuple(branches),
            select_labels=labels,
            index_arity=index_arity,
            parent_index_arity=parent_arity if parent_query is not None else 0,
            parent_query=parent_query,
            emit_index=emit_index,
        )
        return CollectionSlot(query_index, final_element)

    # -- element handling ----------------------------------------------------

    def _slot_of(self, t: QueryType, prefix: str) -> Slot:
        if isinstance(t, ScalarT):
            return ScalarSlot(prefix or "value", t)
        if isinstance(t, RecordT):
            fields = []
            for label, ft in t.fields:
                path = f"{prefix}.{label}" if prefix else label
                fields.append((label, self._slot_of(ft, path)))
            return RecordSlot(tuple(fields))
        if isinstance(t, CollectionT):
            # Placeholder; _build_children replaces it with the real query index.
            return CollectionSlot(-1, self._slot_of(t.element, ""))
        raise TypeError(f"not a QueryType: {t!r}")

    def _build_children(
        self,
        slot: Slot,
        elem_type: QueryType,
        raw: list[tuple[_Context, Comprehension, tuple[NExpr, ...], int]],
        branches: list[Branch],
        query_index: int,
    ) -> Slot:
        """Replace placeholder collection slots by building their child queries."""

        def rebuild(s: Slot, path: tuple[str, ...]) -> Slot:
            if isinstance(s, ScalarSlot):
                return s
            if isinstance(s, RecordSlot):
                return RecordSlot(tuple((l, rebuild(v, path + (l,))) for l, v in s.fields))
            if isinstance(s, CollectionSlot):
                contexts = []
                for (ctx, comp, own_keys, tag_value), branch in zip(raw, branches):
                    contexts.append(
                        _Context(
                            generators=branch.generators,
                            predicate=branch.predicate,
                            parent_keys=own_keys,
                            parent_tag=tag_value,
                            nf=_head_at(comp.head, path),
                        )
                    )
                ct = _type_at(elem_type, path)
                assert isinstance(ct, CollectionT)
                return self.build_collection(contexts, ct, parent_query=query_index)
            raise TypeError(f"not a Slot: {s!r}")

        return rebuild(slot, ())

    # -- select and index columns ---------------------------------------------

    def _select_items(self, slot: Slot, head: Head) -> list[tuple[str, NExpr]]:
        out: list[tuple[str, NExpr]] = []

        def walk(s: Slot, h: Head) -> None:
            if isinstance(s, ScalarSlot):
                if not isinstance(h, HeadScalar):
                    raise TypeError(f"head shape mismatch at '{s.label}'")
                out.append((s.label, h.expr))
            elif isinstance(s, RecordSlot):
                if not isinstance(h, HeadRecord):
                    raise TypeError("head shape mismatch: expected a record head")
                fields = dict(h.fields)
                for label, sub in s.fields:
                    walk(sub, fields[label])
            elif isinstance(s, CollectionSlot):
                pass  # nested collections are fed by their own query
            else:
                raise TypeError(f"not a Slot: {s!r}")

        walk(slot, head)
        return out

    def _generator_keys(self, generators: tuple[tuple[str, str], ...]) -> tuple[NExpr, ...]:
        keys: list[NExpr] = []
        for binder, tbl in generators:
            schema = self.schemas[tbl]
            if not schema.key:
                raise MissingKey(tbl)
            keys.extend(Col(binder, k) for k in schema.key)
        return tuple(keys)

    @staticmethod
    def _pad_index(keys: tuple[NExpr, ...], tag: int | None, arity: int) -> tuple[NExpr, ...]:
        exprs: list[NExpr] = []
        if tag is not None:
            exprs.append(Lit(tag))
        exprs.extend(keys)
        while len(exprs) < arity:
            exprs.append(Lit(0))
        return tuple(exprs)

    @staticmethod
    def _labels_for(slot: Slot) -> tuple[str, ...]:
        labels: list[str] = []

        def walk(s: Slot) -> None:
            if isinstance(s, ScalarSlot):
                labels.append(s.label)
            elif isinstance(s, RecordSlot):
                for _, sub in s.fields:
                    walk(sub)

        walk(slot)
        return tuple(labels)


def _head_at(head: Head, path: tuple[str, ...]) -> NormalForm:
    node: Head = head
    for label in path:
        if not isinstance(node, HeadRecord):
            raise TypeError(f"no record at path {path!r}")
        node = dict(node.fields)[label]
    if not isinstance(node, HeadCollection):
        raise TypeError(f"no collection at path {path!r}")
    return node.nf


def _type_at(t: QueryType, path: tuple[str, ...]) -> QueryType:
    node = t
    for label in path:
        assert isinstance(node, RecordT)
        ft = node.field_type(label)
        assert ft is not None
        node = ft
    return node


def _has_collection(slot: Slot) -> bool:
    if isinstance(slot, CollectionSlot):
        return True
    if isinstance(slot, RecordSlot):
        return any(_has_collection(v) for _, v in slot.fields)
    return False


# ---------------------------------------------------------------------------
# Stitching
# ---------------------------------------------------------------------------

Row = Mapping[str, object]


def stitch(plan: ShredPlan, results: Sequence[Sequence[Row]]) -> Value:
    """Reassemble flat query results into a nested value of the plan's result type.

    Child rows are grouped under the parent row whose index equals their
    parent index; a child whose parent index matches nothing signals an
    executor defect and raises.
    """
    if len(results) != len(plan.queries):
        raise ValueError(f"expected {len(plan.queries)} result sets, got {len(results)}")

    groups: list[dict[tuple, list[Row]]] = []
    for qi, query in enumerate(plan.queries):
        rows = results[qi]
        if query.parent_query is None:
            groups.append({(): list(rows)})
            continue
        parent_labels = query.parent_index_labels()
        grouped: dict[tuple, list[Row]] = {}
        for row in rows:
            key = tuple(row[l] for l in parent_labels)
            grouped.setdefault(key, []).append(row)
        groups.append(grouped)

    # Orphan detection: every child group key must be some parent row's index.
    for qi, query in enumerate(plan.queries):
        if query.parent_query is None:
            continue
        parent = plan.queries[query.parent_query]
        parent_keys = {
            tuple(row[l] for l in parent.index_labels())
            for row in results[query.parent_query]
        }
        for key in groups[qi]:
            if key not in parent_keys:
                raise OrphanRow(qi, key)

    def build_collection(slot: CollectionSlot, parent_key: tuple) -> ListV:
        rows = groups[slot.query].get(parent_key, [])
        query = plan.queries[slot.query]
        own_labels = query.index_labels()
        items = []
        for row in rows:
            own_key = tuple(row[l] for l in own_labels)
            items.append(build_slot(slot.element, row, own_key))
        return ListV(tuple(items))

    def build_slot(slot: Slot, row: Row, row_key: tuple) -> Value:
        if isinstance(slot, ScalarSlot):
            return coerce_scalar(row[slot.label], slot.scalar_type)
        if isinstance(slot, RecordSlot):
            return RecordV(tuple((l, build_slot(v, row, row_key)) for l, v in slot.fields))
        if isinstance(slot, CollectionSlot):
            return build_collection(slot, row_key)
        raise TypeError(f"not a Slot: {slot!r}")

    return build_collection(plan.stitch, ())
