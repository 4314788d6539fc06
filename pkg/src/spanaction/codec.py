"""Conversion between task structures and structure-building action sequences.

A sequence is a list of :class:`ActionTriple` values. ``COPY`` emits the next
input token (the end sentinel after the last one), ``LEFT`` opens a group of
one or more left brackets before the next token, and ``RIGHT`` closes a span
at the last copied token, pairing with a left group ``b`` and carrying a
:class:`LabelAction` ``z``.

Triples are indexed by their position in the sequence. Consecutive left
brackets are stored as a single ``LEFT`` triple with a multiplicity, while
the model emits them one decision at a time; :class:`PrefixState` merges a
``LEFT`` decision into a directly preceding ``LEFT`` triple.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from .schema import LabelAction, TaskSchema, labels_for_antecedents
from .structures import (
    CorefPartition,
    Document,
    RelationTriple,
    Span,
    TaskKind,
    TaskStructure,
    TypedMention,
    validate_structure,
)
from .unionfind import UnionFind

logger = logging.getLogger(__name__)

LEFT_SYMBOL = "⟦"
RIGHT_SYMBOL = "⟧"
EOS_SYMBOL = "</s>"


class CodecError(ValueError):
    pass


class MalformedPairingError(CodecError):
    pass


class MalformedLabelError(CodecError):
    pass


class TerminalError(CodecError):
    pass


class CursorError(CodecError):
    pass


class Act(str, enum.Enum):
    COPY = "copy"
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class ActionTriple:
    act: Act
    b: Optional[int] = None
    z: Optional[LabelAction] = None
    multiplicity: int = 1

    def __post_init__(self):
        if self.act is Act.RIGHT:
            if self.b is None or self.z is None:
                raise CodecError("right bracket needs a pairing index and a label")
        elif self.b is not None or self.z is not None:
            raise CodecError(f"{self.act.value} carries no pairing or label")
        if self.multiplicity < 1 or (self.act is not Act.LEFT and self.multiplicity != 1):
            raise CodecError(f"bad multiplicity {self.multiplicity} for {self.act.value}")

    @property
    def is_right(self) -> bool:
        return self.act is Act.RIGHT

    @property
    def is_left(self) -> bool:
        return self.act is Act.LEFT

    @property
    def is_copy(self) -> bool:
        return self.act is Act.COPY

    def to_json(self) -> dict:
        if self.act is Act.RIGHT:
            return {"a": "right", "b": self.b, "z": self.z.to_json()}
        if self.act is Act.LEFT:
            return {"a": "left", "k": self.multiplicity}
        return {"a": "copy"}

    @classmethod
    def from_json(cls, obj: dict) -> "ActionTriple":
        a = Act(obj["a"])
        if a is Act.RIGHT:
            return cls(a, int(obj["b"]), LabelAction.from_json(obj["z"]))
        if a is Act.LEFT:
            return cls(a, multiplicity=int(obj.get("k", 1)))
        return cls(a)


COPY = ActionTriple(Act.COPY)
LEFT = ActionTriple(Act.LEFT)


def left(k: int = 1) -> ActionTriple:
    return ActionTriple(Act.LEFT, multiplicity=k)


def right(b: int, z: LabelAction) -> ActionTriple:
    return ActionTriple(Act.RIGHT, b, z)


@dataclass(frozen=True)
class ActionSequence:
    doc_id: str
    triples: tuple[ActionTriple, ...]
    terminal: bool
    warnings: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.triples)

    def n_copies(self) -> int:
        return sum(t.is_copy for t in self.triples)

    def decisions(self) -> list[ActionTriple]:
        """The per-decision view: each left group expands to single brackets."""
        out = []
        for t in self.triples:
            out.extend([LEFT] * t.multiplicity if t.is_left else [t])
        return out

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "triples": [t.to_json() for t in self.triples],
            "terminal": self.terminal,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ActionSequence":
        return cls(
            obj["doc_id"],
            tuple(ActionTriple.from_json(t) for t in obj["triples"]),
            bool(obj["terminal"]),
        )


def default_prune(kind: TaskKind) -> bool:
    """Sentence pruning of bracket pairing is on for NER/ERE, off for COREF."""
    return TaskKind(kind) is not TaskKind.COREF


class PrefixState:
    """Incremental view of a valid action prefix over one document.

    Tracks the copy cursor, the left groups still holding unpaired brackets,
    the steps of emitted right brackets and the decision index at which each
    triple was created.
    """

    def __init__(self, doc: Document, schema: TaskSchema, prune_sentences: Optional[bool] = None):
        self.doc = doc
        self.schema = schema
        self.prune = default_prune(schema.kind) if prune_sentences is None else prune_sentences
        self.sent_of = doc.sentence_index()
        self.triples: list[ActionTriple] = []
        self.cursor = 0
        self.groups: dict[int, list[int]] = {}
        self.right_steps: list[int] = []
        self.triple_decision: list[int] = []
        self.n_decisions = 0

    @classmethod
    def from_history(
        cls,
        history: Sequence[ActionTriple],
        doc: Document,
        schema: TaskSchema,
        prune_sentences: Optional[bool] = None,
    ) -> "PrefixState":
        state = cls(doc, schema, prune_sentences)
        for t in history:
            state.append(t)
        return state

    @property
    def terminal(self) -> bool:
        return self.cursor > len(self.doc)

    def open_groups(self) -> list[int]:
        """Pairable left groups: unconsumed, at least one token copied since."""
        out = []
        last = self.cursor - 1
        for g, (start, remaining) in self.groups.items():
            if remaining <= 0 or start > last:
                continue
            if self.prune and self.sent_of[start] != self.sent_of[last]:
                continue
            out.append(g)
        return sorted(out)

    def labels(self) -> list[LabelAction]:
        return labels_for_antecedents(self.schema, self.right_steps)

    def candidates(self) -> list[ActionTriple]:
        if self.terminal:
            raise TerminalError("history already copied the end sentinel")
        out = [COPY, LEFT]
        groups = self.open_groups()
        if groups:
            labels = self.labels()
            out.extend(right(b, z) for b in groups for z in labels)
        return out

    def append(self, t: ActionTriple) -> None:
        """Append a whole triple (a left group counts as ``multiplicity`` decisions)."""
        if t.is_left:
            for _ in range(t.multiplicity):
                self.step(LEFT)
        else:
            self.step(t)

    def step(self, t: ActionTriple) -> None:
        """Apply one decision. Left brackets merge into a preceding left group."""
        if self.terminal:
            raise TerminalError("history already copied the end sentinel")
        idx = len(self.triples)
        if t.is_copy:
            self.triples.append(t)
            self.triple_decision.append(self.n_decisions)
            self.cursor += 1
        elif t.is_left:
            if self.triples and self.triples[-1].is_left:
                last = self.triples[-1]
                self.triples[-1] = left(last.multiplicity + t.multiplicity)
                self.groups[idx - 1][1] += t.multiplicity
            else:
                self.triples.append(t)
                self.triple_decision.append(self.n_decisions)
                self.groups[idx] = [self.cursor, t.multiplicity]
        else:
            group = self.groups.get(t.b)
            if group is None or group[1] <= 0 or group[0] > self.cursor - 1:
                raise MalformedPairingError(f"step {idx}: no open left bracket at {t.b}")
            _check_label(t.z, self.schema, set(self.right_steps), idx)
            group[1] -= 1
            self.triples.append(t)
            self.triple_decision.append(self.n_decisions)
            self.right_steps.append(idx)
        self.n_decisions += 1

    def sequence(self) -> ActionSequence:
        return ActionSequence(self.doc.doc_id, tuple(self.triples), self.terminal)


def candidate_actions(
    history: Sequence[ActionTriple],
    d: Document,
    schema: TaskSchema,
    prune_sentences: Optional[bool] = None,
) -> list[ActionTriple]:
    """Ordered candidate set for the next decision after ``history``."""
    return PrefixState.from_history(history, d, schema, prune_sentences).candidates()


def verbalize(t: ActionTriple, d: Document, copy_cursor: int) -> tuple[str, ...]:
    """Surface symbols fed back to the decoder for one triple."""
    if t.is_copy:
        if copy_cursor < len(d):
            return (d.tokens[copy_cursor],)
        if copy_cursor == len(d):
            return (EOS_SYMBOL,)
        raise CursorError(f"copy cursor {copy_cursor} past the end sentinel")
    if t.is_left:
        return (LEFT_SYMBOL,) * t.multiplicity
    return (RIGHT_SYMBOL,)


def _check_label(z: LabelAction, schema: TaskSchema, right_steps, idx: int) -> None:
    kind = schema.kind
    if z.antecedent is not None:
        if kind is TaskKind.NER:
            raise MalformedLabelError(f"step {idx}: ner labels carry no antecedent")
        if z.antecedent not in right_steps:
            raise MalformedLabelError(
                f"step {idx}: antecedent {z.antecedent} is not an earlier right bracket"
            )
    if kind is TaskKind.COREF:
        if z.entity_type is not None or z.relation is not None:
            raise MalformedLabelError(f"step {idx}: coref labels carry no type or relation")
        return
    if z.entity_type is None or not 0 <= z.entity_type < schema.n_types:
        raise MalformedLabelError(f"step {idx}: entity type index {z.entity_type} out of range")
    if kind is TaskKind.ERE:
        if (z.antecedent is None) != (z.relation is None):
            raise MalformedLabelError(f"step {idx}: link and relation must come together")
        if z.relation is not None and not 0 <= z.relation < schema.n_relations:
            raise MalformedLabelError(f"step {idx}: relation index {z.relation} out of range")
    elif z.relation is not None:
        raise MalformedLabelError(f"step {idx}: ner labels carry no relation")


# -- linearization -----------------------------------------------------------


def _closing_key(schema: TaskSchema):
    """Right brackets at one token close innermost first, then by type order."""

    def key(item):
        span, type_name = item
        return (span.end, -span.start, schema.type_index(type_name) if type_name else -1)

    return key


def _ere_links(s: TaskStructure, schema: TaskSchema, order: dict[TypedMention, int]):
    """Pick one outgoing link per later-closing mention (nearest earlier head).

    Returns ``{later: (earlier, relation_name)}`` and the list of warnings.
    """
    options: dict[TypedMention, list] = {}
    notes = []
    for r in sorted(s.relations):
        head, tail = r.head, r.tail
        if order[head] > order[tail]:
            head, tail = tail, head
            if r.relation not in schema.symmetric_relations:
                notes.append(
                    f"relation {r.relation} ({r.head.span.start}-{r.head.span.end} -> "
                    f"{r.tail.span.start}-{r.tail.span.end}) has its head closing after its "
                    "tail; arguments swapped"
                )
        options.setdefault(tail, []).append((head, r.relation))
    chosen = {}
    for tail, opts in options.items():
        best = max(opts, key=lambda o: (order[o[0]], -schema.relation_index(o[1])))
        chosen[tail] = best
        if len(opts) > 1:
            notes.append(
                f"mention {tail.span.start}-{tail.span.end} is the tail of {len(opts)} "
                f"relations; kept {best[1]} to the nearest head"
            )
    return chosen, notes


def nearest_head_reduction(s: TaskStructure, schema: TaskSchema) -> TaskStructure:
    """The ERE structure that survives linearization's one-link-per-span rule."""
    if s.kind is not TaskKind.ERE:
        return s
    key = _closing_key(schema)
    ordered = sorted(s.mentions, key=lambda m: key((m.span, m.entity_type)))
    order = {m: i for i, m in enumerate(ordered)}
    chosen, _ = _ere_links(s, schema, order)
    relations = {RelationTriple(head, rel, tail) for tail, (head, rel) in chosen.items()}
    return TaskStructure.ere(s.mentions, relations)


def linearize(s: TaskStructure, d: Document, schema: TaskSchema) -> ActionSequence:
    """Gold action sequence for structure ``s`` over document ``d``."""
    problems = validate_structure(s, d, schema)
    if problems:
        raise CodecError(f"{d.doc_id}: invalid structure: {'; '.join(problems)}")
    if s.kind is not schema.kind:
        raise CodecError(f"structure kind {s.kind.value} does not match schema {schema.kind.value}")

    key = _closing_key(schema)
    if s.kind is TaskKind.COREF:
        items = [(span, None) for span in s.partition.mentions()]
    else:
        items = [(m.span, m.entity_type) for m in s.mentions]
    items.sort(key=key)
    rank = {it: i for i, it in enumerate(items)}

    notes: list[str] = []
    link_of: dict = {}
    if s.kind is TaskKind.ERE:
        order = {TypedMention(sp, ty): i for (sp, ty), i in rank.items()}
        chosen, notes = _ere_links(s, schema, order)
        link_of = {
            (tail.span, tail.entity_type): ((head.span, head.entity_type), rel)
            for tail, (head, rel) in chosen.items()
        }
        for note in notes:
            logger.warning("%s: %s", d.doc_id, note)
    elif s.kind is TaskKind.COREF:
        for chain in s.partition.chains:
            members = sorted(((sp, None) for sp in chain), key=rank.__getitem__)
            for prev, cur in zip(members, members[1:]):
                link_of[cur] = prev

    opening: dict[int, int] = {}
    closing: dict[int, list] = {}
    for it in items:
        opening[it[0].start] = opening.get(it[0].start, 0) + 1
        closing.setdefault(it[0].end, []).append(it)

    triples: list[ActionTriple] = []
    group_at: dict[int, int] = {}
    right_at: dict = {}
    for i in range(len(d)):
        if i in opening:
            group_at[i] = len(triples)
            triples.append(left(opening[i]))
        triples.append(COPY)
        for it in closing.get(i, ()):
            span, type_name = it
            if s.kind is TaskKind.NER:
                z = LabelAction(entity_type=schema.type_index(type_name))
            elif s.kind is TaskKind.COREF:
                prev = link_of.get(it)
                z = LabelAction(antecedent=None if prev is None else right_at[prev])
            else:
                c = schema.type_index(type_name)
                link = link_of.get(it)
                if link is None:
                    z = LabelAction(entity_type=c)
                else:
                    z = LabelAction(c, right_at[link[0]], schema.relation_index(link[1]))
            right_at[it] = len(triples)
            triples.append(right(group_at[span.start], z))
    triples.append(COPY)
    return ActionSequence(d.doc_id, tuple(triples), True, tuple(notes))


def delinearize(seq: ActionSequence | Sequence[ActionTriple], d: Document, schema: TaskSchema) -> TaskStructure:
    """Rebuild a structure from matched brackets; unpaired left brackets are dropped."""
    triples = seq.triples if isinstance(seq, ActionSequence) else tuple(seq)
    n = len(d)
    groups: dict[int, list[int]] = {}
    rights: dict[int, tuple[Span, LabelAction]] = {}
    cursor = 0
    for idx, t in enumerate(triples):
        if t.is_copy:
            if cursor > n:
                raise CursorError(f"step {idx}: copy past the end sentinel")
            cursor += 1
        elif t.is_left:
            groups[idx] = [cursor, t.multiplicity]
        else:
            group = groups.get(t.b)
            if group is None:
                raise MalformedPairingError(f"step {idx}: pairing index {t.b} is not a left bracket")
            start, end = group[0], min(cursor, n) - 1
            if group[1] <= 0 or end < start:
                raise MalformedPairingError(f"step {idx}: left bracket at {t.b} cannot pair here")
            _check_label(t.z, schema, rights.keys(), idx)
            group[1] -= 1
            rights[idx] = (Span(start, end), t.z)

    kind = schema.kind
    if kind is TaskKind.COREF:
        uf = UnionFind()
        first_step: dict[Span, int] = {}
        for idx, (span, z) in rights.items():
            uf.find(idx)
            if span in first_step:
                uf.union(first_step[span], idx)
            else:
                first_step[span] = idx
            if z.antecedent is not None:
                uf.union(z.antecedent, idx)
        chains: dict[int, set[Span]] = {}
        for idx, (span, _) in rights.items():
            chains.setdefault(uf.find(idx), set()).add(span)
        return TaskStructure.coref(c for c in chains.values() if len(c) >= 2)

    mention_at = {
        idx: TypedMention(span, schema.entity_types[z.entity_type])
        for idx, (span, z) in rights.items()
    }
    if kind is TaskKind.NER:
        return TaskStructure.ner(mention_at.values())
    relations = set()
    for idx, (span, z) in rights.items():
        if z.antecedent is not None:
            head, tail = mention_at[z.antecedent], mention_at[idx]
            if head != tail:
                relations.add(RelationTriple(head, schema.relation_types[z.relation], tail))
    return TaskStructure.ere(mention_at.values(), relations)


def is_dyck_valid(seq: ActionSequence | Sequence[ActionTriple]) -> bool:
    """Bracket symbols, after dropping unpaired left brackets, form a Dyck word."""
    triples = seq.triples if isinstance(seq, ActionSequence) else tuple(seq)
    paired: dict[int, int] = {}
    for idx, t in enumerate(triples):
        if t.is_right:
            if t.b is None or t.b >= idx or not triples[t.b].is_left:
                return False
            paired[t.b] = paired.get(t.b, 0) + 1
    depth = 0
    for idx, t in enumerate(triples):
        if t.is_left:
            used = paired.get(idx, 0)
            if used > t.multiplicity:
                return False
            depth += used
        elif t.is_right:
            depth -= 1
            if depth < 0:
                return False
    return depth == 0
