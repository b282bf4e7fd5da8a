"""Nested result values produced by query evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .ir import BOOL, FLOAT, INT, STRING, CollectionT, QueryType, RecordT, ScalarT, ScalarType


@dataclass(frozen=True)
class IntV:
    value: int


@dataclass(frozen=True)
class FloatV:
    value: float


@dataclass(frozen=True)
class BoolV:
    value: bool


@dataclass(frozen=True)
class StringV:
    value: str


@dataclass(frozen=True)
class RecordV:
    fields: tuple[tuple[str, "Value"], ...]

    def get(self, label: str) -> "Value":
        for l, v in self.fields:
            if l == label:
                return v
        raise KeyError(label)


@dataclass(frozen=True)
class ListV:
    items: tuple["Value", ...]


Value = Union[IntV, FloatV, BoolV, StringV, RecordV, ListV]


def wrap_scalar(v: Union[int, float, bool, str]) -> Value:
    # bool is a subclass of int; test it first.
    if isinstance(v, bool):
        return BoolV(v)
    if isinstance(v, int):
        return IntV(v)
    if isinstance(v, float):
        return FloatV(v)
    if isinstance(v, str):
        return StringV(v)
    raise TypeError(f"not a scalar: {v!r}")


def unwrap_scalar(v: Value) -> Union[int, float, bool, str]:
    if isinstance(v, (IntV, FloatV, BoolV, StringV)):
        return v.value
    raise TypeError(f"not a scalar value: {v!r}")


def coerce_scalar(raw: object, t: ScalarT) -> Value:
    """Wrap a raw backend scalar, repairing representation drift (0/1 booleans)."""
    if t.kind is ScalarType.BOOL:
        if isinstance(raw, bool):
            return BoolV(raw)
        if isinstance(raw, int) and raw in (0, 1):
            return BoolV(bool(raw))
        raise TypeError(f"cannot read {raw!r} as Bool")
    if t.kind is ScalarType.INT:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise TypeError(f"cannot read {raw!r} as Int")
        return IntV(raw)
    if t.kind is ScalarType.FLOAT:
        if isinstance(raw, bool):
            raise TypeError(f"cannot read {raw!r} as Float")
        if isinstance(raw, (int, float)):
            return FloatV(float(raw))
        raise TypeError(f"cannot read {raw!r} as Float")
    if t.kind is ScalarType.STRING:
        if not isinstance(raw, str):
            raise TypeError(f"cannot read {raw!r} as String")
        return StringV(raw)
    raise TypeError(f"unknown scalar type {t!r}")


def sort_key(v: Value) -> tuple:
    """Deterministic total order on values of one type; drives canonicalization."""
    if isinstance(v, BoolV):
        return (0, v.value)
    if isinstance(v, IntV):
        return (1, v.value)
    if isinstance(v, FloatV):
        return (2, v.value)
    if isinstance(v, StringV):
        return (3, v.value)
    if isinstance(v, RecordV):
        return (4, tuple((l, sort_key(x)) for l, x in v.fields))
    if isinstance(v, ListV):
        return (5, tuple(sort_key(x) for x in v.items))
    raise TypeError(f"not a Value: {v!r}")


def canonical_value(v: Value) -> Value:
    """Sort every collection recursively; two bag-equal values canonicalize equally."""
    if isinstance(v, RecordV):
        return RecordV(tuple((l, canonical_value(x)) for l, x in v.fields))
    if isinstance(v, ListV):
        items = tuple(canonical_value(x) for x in v.items)
        return ListV(tuple(sorted(items, key=sort_key)))
    return v


def values_equivalent(a: Value, b: Value) -> bool:
    """Equality under bag semantics: collections compared as multisets, recursively."""
    return canonical_value(a) == canonical_value(b)


def value_conforms(v: Value, t: QueryType) -> bool:
    if isinstance(t, ScalarT):
        return (
            (t.kind is ScalarType.INT and isinstance(v, IntV))
            or (t.kind is ScalarType.FLOAT and isinstance(v, FloatV))
            or (t.kind is ScalarType.BOOL and isinstance(v, BoolV))
            or (t.kind is ScalarType.STRING and isinstance(v, StringV))
        )
    if isinstance(t, RecordT):
        if not isinstance(v, RecordV):
            return False
        got = dict(v.fields)
        want = dict(t.fields)
        if got.keys() != want.keys():
            return False
        return all(value_conforms(got[l], want[l]) for l in want)
    if isinstance(t, CollectionT):
        return isinstance(v, ListV) and all(value_conforms(x, t.element) for x in v.items)
    return False


def to_python(v: Value) -> object:
    """Plain-data view (dicts and lists), handy for tests and JSON dumps."""
    if isinstance(v, (IntV, FloatV, BoolV, StringV)):
        return v.value
    if isinstance(v, RecordV):
        return {l: to_python(x) for l, x in v.fields}
    if isinstance(v, ListV):
        return [to_python(x) for x in v.items]
    raise TypeError(f"not a Value: {v!r}")
