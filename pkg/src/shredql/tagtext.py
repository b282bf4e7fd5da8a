"""Strict parser and renderer for curation text with embedded entity tags.

Curated text mixes plain prose, a small HTML subset (sub/sup/i/b/u/br), named
character entities, and two self-closing domain tags: ``<Reference id=N/>``
marks a literature citation and ``<Ligand id=N/>`` a cross-reference to a
ligand. Parsing is strict: a bare ``<`` or ``>``, an unknown tag or entity, or
a mismatched pair is an error, never silently repaired. Reference tags feed a
numbered reference list sorted by PubMed id; rendering replaces each tag with
its bracketed superscript number.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from html import escape
from typing import Callable, Iterable, Mapping, Union

from .errors import MalformedMarkup, UnknownLigand, UnknownReference

PAIRED_TAGS = ("sub", "sup", "i", "b", "u")
VOID_TAGS = ("br",)

ENTITIES = {
    "amp": "&",
    "lt": "<",
    "gt": ">",
    "beta": "β",
    "alpha": "α",
    "gamma": "γ",
    "Delta": "Δ",
    "micro": "µ",
}


@dataclass(frozen=True)
class Text:
    text: str


@dataclass(frozen=True)
class Entity:
    name: str


@dataclass(frozen=True)
class Html:
    tag: str
    children: tuple["Segment", ...] = ()

    def __post_init__(self) -> None:
        if self.tag not in PAIRED_TAGS + VOID_TAGS:
            raise ValueError(f"tag '{self.tag}' outside the allowed set")
        if self.tag in VOID_TAGS and self.children:
            raise ValueError(f"void tag '{self.tag}' cannot have children")


@dataclass(frozen=True)
class RefTag:
    reference_id: int


@dataclass(frozen=True)
class LigandTag:
    ligand_id: int


Segment = Union[Text, Entity, Html, RefTag, LigandTag]


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_DOMAIN_TAG = re.compile(r"(Reference|Ligand) id=(\d+)/>")
_ENTITY = re.compile(r"([A-Za-z]+);")
_CLOSE = re.compile(r"/([a-z]+)>")
_OPEN = re.compile(r"([a-z]+)(/?)>")


def parse_tagtext(s: str) -> list[Segment]:
    """Parse curation text to segments, or raise on the first malformed construct."""
    segments, pos = _parse_children(s, 0, None)
    if pos != len(s):
        raise MalformedMarkup(pos, "unexpected closing tag")
    return segments


def _parse_children(s: str, pos: int, open_tag: str | None) -> tuple[list[Segment], int]:
    out: list[Segment] = []
    buf: list[str] = []

    def flush() -> None:
        if buf:
            out.append(Text("".join(buf)))
            buf.clear()

    while pos < len(s):
        ch = s[pos]
        if ch == ">":
            raise MalformedMarkup(pos, "bare '>' in text")
        if ch == "&":
            m = _ENTITY.match(s, pos + 1)
            if not m:
                raise MalformedMarkup(pos, "bare '&' does not start an entity")
            if m.group(1) not in ENTITIES:
                raise MalformedMarkup(pos, f"unknown entity '&{m.group(1)};'")
            flush()
            out.append(Entity(m.group(1)))
            pos = m.end()
            continue
        if ch != "<":
            buf.append(ch)
            pos += 1
            continue

        m = _DOMAIN_TAG.match(s, pos + 1)
        if m:
            flush()
            ident = int(m.group(2))
            out.append(RefTag(ident) if m.group(1) == "Reference" else LigandTag(ident))
            pos = m.end()
            continue
        m = _CLOSE.match(s, pos + 1)
        if m:
            if open_tag is None or m.group(1) != open_tag:
                if open_tag is None:
                    raise MalformedMarkup(pos, f"closing tag '</{m.group(1)}>' without opener")
                raise MalformedMarkup(
                    pos, f"mismatched closing tag '</{m.group(1)}>', expected '</{open_tag}>'"
                )
            flush()
            return out, m.end()
        m = _OPEN.match(s, pos + 1)
        if m:
            name, self_closing = m.group(1), m.group(2)
            if name in VOID_TAGS:
                flush()
                out.append(Html(name))
                pos = m.end()
                continue
            if name not in PAIRED_TAGS:
                raise MalformedMarkup(pos, f"unrecognized element '<{name}>'")
            if self_closing:
                raise MalformedMarkup(pos, f"'<{name}/>' is not a void tag")
            flush()
            children, pos = _parse_children(s, m.end(), name)
            out.append(Html(name, tuple(children)))
            continue
        raise MalformedMarkup(pos, "bare '<' does not start a recognized construct")

    if open_tag is not None:
        raise MalformedMarkup(pos, f"unterminated '<{open_tag}>'")
    flush()
    return out, pos


# Lenient reference-id scan, independent of the strict grammar. Used as the
# trusted side when checking rendered pages: a field that fails strict parsing
# still reveals which references it carries.
_REF_SCAN = re.compile(r"<Reference id=(\d+)/>")
_LIGAND_SCAN = re.compile(r"<Ligand id=(\d+)/>")


def scan_reference_ids(raw: str) -> list[int]:
    return [int(m) for m in _REF_SCAN.findall(raw)]


def scan_ligand_ids(raw: str) -> list[int]:
    return [int(m) for m in _LIGAND_SCAN.findall(raw)]


# ---------------------------------------------------------------------------
# Reference lists
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RefEntry:
    position: int  # 1-based
    reference_id: int
    pubmed_id: int


@dataclass(frozen=True)
class RefList:
    entries: tuple[RefEntry, ...]

    def position_of(self, reference_id: int) -> int:
        for e in self.entries:
            if e.reference_id == reference_id:
                return e.position
        raise UnknownReference(reference_id)

    def pubmed_ids(self) -> list[int]:
        return [e.pubmed_id for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def collect_refs(
    fields: Iterable[list[Segment]], resolver: Callable[[int], int] | Mapping[int, int]
) -> RefList:
    """Gather reference tags across fields into a numbered list.

    Ids are deduplicated, resolved to PubMed ids, and numbered 1..n in
    ascending PubMed order.
    """
    if not callable(resolver):
        mapping = resolver

        def resolver(rid: int) -> int:
            if rid not in mapping:
                raise UnknownReference(rid)
            return mapping[rid]

    seen: dict[int, int] = {}
    for segs in fields:
        for rid in _walk_ref_ids(segs):
            if rid not in seen:
                seen[rid] = resolver(rid)
    ordered = sorted(seen.items(), key=lambda kv: (kv[1], kv[0]))
    return RefList(
        tuple(RefEntry(i + 1, rid, pubmed) for i, (rid, pubmed) in enumerate(ordered))
    )


def _walk_ref_ids(segs: Iterable[Segment]) -> Iterable[int]:
    for seg in segs:
        if isinstance(seg, RefTag):
            yield seg.reference_id
        elif isinstance(seg, Html):
            yield from _walk_ref_ids(seg.children)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render_segments(
    segs: Iterable[Segment], refs: RefList, ligand_names: Mapping[int, str]
) -> str:
    """Render segments to display HTML.

    Reference tags become superscript bracketed numbers linking to their
    reference-list anchors; ligand tags become links showing the ligand name.
    """
    out: list[str] = []
    for seg in segs:
        if isinstance(seg, Text):
            out.append(escape(seg.text, quote=False))
        elif isinstance(seg, Entity):
            out.append(escape(ENTITIES[seg.name], quote=False))
        elif isinstance(seg, Html):
            if seg.tag in VOID_TAGS:
                out.append(f"<{seg.tag}/>")
            else:
                inner = render_segments(seg.children, refs, ligand_names)
                out.append(f"<{seg.tag}>{inner}</{seg.tag}>")
        elif isinstance(seg, RefTag):
            n = refs.position_of(seg.reference_id)
            out.append(f'<a href="#ref-{n}"><sup>[{n}]</sup></a>')
        elif isinstance(seg, LigandTag):
            if seg.ligand_id not in ligand_names:
                raise UnknownLigand(seg.ligand_id)
            name = escape(ligand_names[seg.ligand_id], quote=False)
            out.append(f'<a class="ligand" href="/ligand/{seg.ligand_id}">{name}</a>')
        else:
            raise TypeError(f"not a Segment: {seg!r}")
    return "".join(out)


def text_content(segs: Iterable[Segment]) -> str:
    """Plain text carried by the segments, tags and entities expanded."""
    out: list[str] = []
    for seg in segs:
        if isinstance(seg, Text):
            out.append(seg.text)
        elif isinstance(seg, Entity):
            out.append(ENTITIES[seg.name])
        elif isinstance(seg, Html):
            out.append(text_content(seg.children))
    return "".join(out)
