"""Task parameterizations: label alphabets and the per-step labeling sets."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .structures import TaskKind

__all__ = [
    "SchemaError",
    "TaskSchema",
    "LabelAction",
    "labeling_set",
    "labels_for_antecedents",
    "load_schema",
]


class SchemaError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class LabelAction:
    """Span labeling chosen at a right bracket.

    ``entity_type`` and ``relation`` are indices into the schema's ordered
    label sets. ``antecedent`` is the step index of an earlier right bracket,
    or ``None`` for the null link (epsilon).
    """

    entity_type: Optional[int] = None
    antecedent: Optional[int] = None
    relation: Optional[int] = None

    @property
    def is_epsilon(self) -> bool:
        return self.antecedent is None

    def to_json(self) -> dict:
        return {"type": self.entity_type, "ante": self.antecedent, "rel": self.relation}

    @classmethod
    def from_json(cls, obj: dict) -> "LabelAction":
        return cls(obj.get("type"), obj.get("ante"), obj.get("rel"))


EPSILON = LabelAction()


@dataclass(frozen=True)
class TaskSchema:
    kind: TaskKind
    entity_types: tuple[str, ...] = ()
    relation_types: tuple[str, ...] = ()
    symmetric_relations: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        try:
            kind = TaskKind(self.kind)
        except ValueError:
            raise SchemaError(f"unknown task kind {self.kind!r}") from None
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "entity_types", tuple(self.entity_types))
        object.__setattr__(self, "relation_types", tuple(self.relation_types))
        object.__setattr__(self, "symmetric_relations", frozenset(self.symmetric_relations))
        if len(set(self.entity_types)) != len(self.entity_types):
            raise SchemaError("duplicate entity types")
        if len(set(self.relation_types)) != len(self.relation_types):
            raise SchemaError("duplicate relation types")
        if kind in (TaskKind.NER, TaskKind.ERE) and not self.entity_types:
            raise SchemaError(f"{kind.value} schema needs at least one entity type")
        if kind is TaskKind.ERE and not self.relation_types:
            raise SchemaError("ere schema needs at least one relation type")
        if kind is not TaskKind.ERE and self.relation_types:
            raise SchemaError(f"{kind.value} schema must not declare relation types")
        if not self.symmetric_relations <= set(self.relation_types):
            raise SchemaError("symmetric relations must be declared relation types")

    @property
    def allow_epsilon(self) -> bool:
        return self.kind is not TaskKind.NER

    @property
    def n_types(self) -> int:
        return len(self.entity_types)

    @property
    def n_relations(self) -> int:
        return len(self.relation_types)

    def type_index(self, name: str) -> int:
        try:
            return self.entity_types.index(name)
        except ValueError:
            raise SchemaError(f"entity type {name!r} not in schema") from None

    def relation_index(self, name: str) -> int:
        try:
            return self.relation_types.index(name)
        except ValueError:
            raise SchemaError(f"relation type {name!r} not in schema") from None

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "entity_types": list(self.entity_types),
            "relation_types": list(self.relation_types),
            "symmetric_relations": sorted(self.symmetric_relations),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TaskSchema":
        if "kind" not in obj:
            raise SchemaError("schema is missing 'kind'")
        return cls(
            obj["kind"],
            tuple(obj.get("entity_types", ())),
            tuple(obj.get("relation_types", ())),
            frozenset(obj.get("symmetric_relations", ())),
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")


def load_schema(path) -> TaskSchema:
    with open(path, encoding="utf-8") as f:
        return TaskSchema.from_json(json.load(f))


def labels_for_antecedents(schema: TaskSchema, right_steps: Sequence[int]) -> list[LabelAction]:
    """Labeling set given the step indices of all earlier right brackets."""
    kind = schema.kind
    if kind is TaskKind.NER:
        return [LabelAction(entity_type=c) for c in range(schema.n_types)]
    if kind is TaskKind.COREF:
        return [EPSILON] + [LabelAction(antecedent=m) for m in sorted(right_steps)]
    if kind is TaskKind.ERE:
        links = [(None, None)] + [
            (m, r) for m in sorted(right_steps) for r in range(schema.n_relations)
        ]
        return [
            LabelAction(entity_type=c, antecedent=m, relation=r)
            for m, r in links
            for c in range(schema.n_types)
        ]
    raise SchemaError(f"unknown task kind {kind!r}")


def labeling_set(schema: TaskSchema, history: Sequence, step: Optional[int] = None) -> list[LabelAction]:
    """Ordered labeling choices for the next right bracket after ``history``."""
    if step is not None and step != len(history):
        raise ValueError(f"labeling set is defined for step {len(history)}, got {step}")
    right_steps = [i for i, t in enumerate(history) if t.is_right]
    return labels_for_antecedents(schema, right_steps)
