"""Immutable domain objects: documents, spans, mentions, relations, chains."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional

__all__ = [
    "TaskKind",
    "Document",
    "Span",
    "TypedMention",
    "RelationTriple",
    "CorefPartition",
    "TaskStructure",
    "span_overlap",
    "validate_structure",
]


class TaskKind(str, enum.Enum):
    NER = "ner"
    ERE = "ere"
    COREF = "coref"


@dataclass(frozen=True)
class Document:
    """Tokenized text with half-open sentence ranges covering it exactly."""

    doc_id: str
    tokens: tuple[str, ...]
    sentence_bounds: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(
            self, "sentence_bounds", tuple((int(s), int(e)) for s, e in self.sentence_bounds)
        )
        pos = 0
        for start, end in self.sentence_bounds:
            if start != pos or end <= start:
                raise ValueError(
                    f"{self.doc_id}: sentence bounds must be contiguous and non-empty, "
                    f"got ({start}, {end}) at offset {pos}"
                )
            pos = end
        if pos != len(self.tokens):
            raise ValueError(
                f"{self.doc_id}: sentence bounds cover {pos} tokens, document has {len(self.tokens)}"
            )

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_sentences(cls, doc_id: str, sentences: Iterable[Iterable[str]]) -> "Document":
        tokens: list[str] = []
        bounds = []
        for sent in sentences:
            sent = list(sent)
            if not sent:
                continue
            bounds.append((len(tokens), len(tokens) + len(sent)))
            tokens.extend(sent)
        return cls(doc_id, tuple(tokens), tuple(bounds))

    def sentences(self) -> list[tuple[str, ...]]:
        return [self.tokens[s:e] for s, e in self.sentence_bounds]

    def sentence_index(self) -> tuple[int, ...]:
        """Sentence number of every token."""
        out = []
        for k, (s, e) in enumerate(self.sentence_bounds):
            out.extend([k] * (e - s))
        return tuple(out)


@dataclass(frozen=True, order=True)
class Span:
    """Inclusive token range ``[start, end]``."""

    start: int
    end: int

    def __len__(self) -> int:
        return self.end - self.start + 1

    def valid_for(self, n_tokens: int) -> bool:
        return 0 <= self.start <= self.end < n_tokens


@dataclass(frozen=True, order=True)
class TypedMention:
    span: Span
    entity_type: str


@dataclass(frozen=True, order=True)
class RelationTriple:
    head: TypedMention
    relation: str
    tail: TypedMention


@dataclass(frozen=True)
class CorefPartition:
    """Coreference chains as a set of disjoint mention sets."""

    chains: frozenset[frozenset[Span]] = frozenset()

    def __post_init__(self):
        object.__setattr__(
            self, "chains", frozenset(frozenset(c) for c in self.chains)
        )

    @classmethod
    def from_lists(cls, chains: Iterable[Iterable[Span]]) -> "CorefPartition":
        return cls(frozenset(frozenset(c) for c in chains))

    def mentions(self) -> frozenset[Span]:
        return frozenset(m for c in self.chains for m in c)

    def sorted_chains(self) -> list[list[Span]]:
        return sorted(sorted(c) for c in self.chains)


@dataclass(frozen=True)
class TaskStructure:
    """Decoded object for one document, discriminated by ``kind``.

    NER carries ``mentions``; ERE carries ``mentions`` and ``relations``;
    COREF carries ``partition``.
    """

    kind: TaskKind
    mentions: frozenset[TypedMention] = frozenset()
    relations: frozenset[RelationTriple] = frozenset()
    partition: Optional[CorefPartition] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))
        object.__setattr__(self, "mentions", frozenset(self.mentions))
        object.__setattr__(self, "relations", frozenset(self.relations))
        if self.kind is TaskKind.COREF and self.partition is None:
            object.__setattr__(self, "partition", CorefPartition())

    @classmethod
    def empty(cls, kind: TaskKind) -> "TaskStructure":
        return cls(TaskKind(kind))

    @classmethod
    def ner(cls, mentions: Iterable[TypedMention]) -> "TaskStructure":
        return cls(TaskKind.NER, mentions=frozenset(mentions))

    @classmethod
    def ere(
        cls, mentions: Iterable[TypedMention], relations: Iterable[RelationTriple] = ()
    ) -> "TaskStructure":
        relations = frozenset(relations)
        mentions = frozenset(mentions) | {r.head for r in relations} | {r.tail for r in relations}
        return cls(TaskKind.ERE, mentions=mentions, relations=relations)

    @classmethod
    def coref(cls, chains: Iterable[Iterable[Span]]) -> "TaskStructure":
        return cls(TaskKind.COREF, partition=CorefPartition.from_lists(chains))

    def spans(self) -> list[Span]:
        if self.kind is TaskKind.COREF:
            return sorted(self.partition.mentions())
        return sorted({m.span for m in self.mentions})


def span_overlap(a: Span, b: Span) -> bool:
    return a.start <= b.end and b.start <= a.end


def validate_structure(s: TaskStructure, d: Document, schema=None) -> list[str]:
    """Return one human-readable description per invariant violation.

    An empty list means the structure is well-formed for ``d``. ``schema`` is
    optional; when given, entity and relation labels are checked against it.
    """
    problems: list[str] = []
    n = len(d)

    def check_span(span: Span, what: str):
        if not span.valid_for(n):
            problems.append(f"{what} span ({span.start}, {span.end}) out of range for |D|={n}")

    if s.kind is TaskKind.COREF:
        if s.mentions or s.relations:
            problems.append("coref structure carries typed mentions or relations")
        seen: dict[Span, int] = {}
        for k, chain in enumerate(s.partition.sorted_chains()):
            if len(chain) < 2:
                problems.append(f"singleton coref chain {chain[0].start}-{chain[0].end}")
            for span in chain:
                check_span(span, "coref mention")
                if span in seen:
                    problems.append(
                        f"mention ({span.start}, {span.end}) appears in two chains"
                    )
                seen[span] = k
        return problems

    if s.partition is not None and s.partition.chains:
        problems.append(f"{s.kind.value} structure carries a coref partition")
    if s.kind is TaskKind.NER and s.relations:
        problems.append("ner structure carries relations")

    types = set(schema.entity_types) if schema is not None else None
    for m in sorted(s.mentions):
        check_span(m.span, "mention")
        if not m.entity_type:
            problems.append(f"mention ({m.span.start}, {m.span.end}) has empty type")
        elif types is not None and m.entity_type not in types:
            problems.append(f"mention type {m.entity_type!r} not in schema")

    rels = set(schema.relation_types) if schema is not None else None
    for r in sorted(s.relations):
        if r.head == r.tail:
            problems.append(f"relation {r.relation!r} has identical head and tail")
        if r.head not in s.mentions or r.tail not in s.mentions:
            problems.append(f"relation {r.relation!r} argument missing from mention set")
        if rels is not None and r.relation not in rels:
            problems.append(f"relation type {r.relation!r} not in schema")
    return problems
