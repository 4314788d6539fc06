"""Entity, relation and coreference evaluation.

Coreference metrics follow the CoNLL-2012 scorer definitions: MUC is
link-based, B-cubed mention-based and CEAF-phi4 entity-alignment-based.
Every metric returns raw numerators and denominators so corpus scores can be
micro-pooled before division.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .structures import CorefPartition, Document, RelationTriple, Span, TaskKind, TypedMention

__all__ = [
    "PRF",
    "CorefScores",
    "MentionAnalysis",
    "entity_prf",
    "relation_prf",
    "muc",
    "b_cubed",
    "ceaf_phi4",
    "coref_scores",
    "mention_analysis",
    "corpus_report",
    "format_report",
]


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass(frozen=True)
class PRF:
    """Precision/recall with their numerators and denominators kept."""

    p_num: float = 0.0
    p_den: float = 0.0
    r_num: float = 0.0
    r_den: float = 0.0

    @classmethod
    def from_counts(cls, tp: int, predicted: int, gold: int) -> "PRF":
        return cls(tp, predicted, tp, gold)

    @property
    def precision(self) -> float:
        return self.p_num / self.p_den if self.p_den > 0 else 0.0

    @property
    def recall(self) -> float:
        return self.r_num / self.r_den if self.r_den > 0 else 0.0

    @property
    def f1(self) -> float:
        return _f1(self.precision, self.recall)

    def __add__(self, other: "PRF") -> "PRF":
        return PRF(
            self.p_num + other.p_num,
            self.p_den + other.p_den,
            self.r_num + other.r_num,
            self.r_den + other.r_den,
        )

    def to_json(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "p_num": self.p_num,
            "p_den": self.p_den,
            "r_num": self.r_num,
            "r_den": self.r_den,
        }


@dataclass(frozen=True)
class CorefScores:
    muc: PRF
    b3: PRF
    ceaf_phi4: PRF

    @property
    def avg_f1(self) -> float:
        return (self.muc.f1 + self.b3.f1 + self.ceaf_phi4.f1) / 3

    def __add__(self, other: "CorefScores") -> "CorefScores":
        return CorefScores(self.muc + other.muc, self.b3 + other.b3, self.ceaf_phi4 + other.ceaf_phi4)

    def to_json(self) -> dict:
        return {
            "muc": self.muc.to_json(),
            "b3": self.b3.to_json(),
            "ceaf_phi4": self.ceaf_phi4.to_json(),
            "avg_f1": self.avg_f1,
        }


def entity_prf(gold: Iterable[TypedMention], pred: Iterable[TypedMention]) -> PRF:
    """Exact span-and-type match; duplicates collapse."""
    gold, pred = set(gold), set(pred)
    return PRF.from_counts(len(gold & pred), len(pred), len(gold))


def _relation_key(r: RelationTriple, strict: bool, symmetric: frozenset[str]):
    if strict:
        head, tail = (r.head.span, r.head.entity_type), (r.tail.span, r.tail.entity_type)
    else:
        head, tail = (r.head.span,), (r.tail.span,)
    if r.relation in symmetric and tail < head:
        head, tail = tail, head
    return head, r.relation, tail


def relation_prf(
    gold: Iterable[RelationTriple],
    pred: Iterable[RelationTriple],
    strict: bool = False,
    symmetric: Iterable[str] = (),
) -> PRF:
    """Rel (boundaries + label) or, with ``strict``, Rel+ (also both types).

    Symmetric labels ignore argument order, so each undirected pair counts once.
    """
    symmetric = frozenset(symmetric)
    g = {_relation_key(r, strict, symmetric) for r in gold}
    p = {_relation_key(r, strict, symmetric) for r in pred}
    return PRF.from_counts(len(g & p), len(p), len(g))


# -- coreference -------------------------------------------------------------


def _clusters(partition) -> list[frozenset]:
    if isinstance(partition, CorefPartition):
        clusters = [frozenset(c) for c in partition.chains]
    else:
        clusters = [frozenset(c) for c in partition]
    clusters = [c for c in clusters if c]
    seen: set = set()
    for c in clusters:
        if seen & c:
            raise ValueError("coreference clusters overlap")
        seen |= c
    return clusters


def _muc_side(key: Sequence[frozenset], response: Sequence[frozenset]) -> tuple[float, float]:
    where = {m: i for i, c in enumerate(response) for m in c}
    num = den = 0
    for cluster in key:
        parts = set()
        unaligned = 0
        for m in cluster:
            if m in where:
                parts.add(where[m])
            else:
                unaligned += 1
        num += len(cluster) - len(parts) - unaligned
        den += len(cluster) - 1
    return num, den


def muc(gold, pred) -> PRF:
    gold, pred = _clusters(gold), _clusters(pred)
    r_num, r_den = _muc_side(gold, pred)
    p_num, p_den = _muc_side(pred, gold)
    return PRF(p_num, p_den, r_num, r_den)


def _b3_side(key: Sequence[frozenset], response: Sequence[frozenset]) -> tuple[float, float]:
    where = {m: i for i, c in enumerate(response) for m in c}
    num = 0.0
    den = 0
    for cluster in key:
        counts: dict[int, int] = {}
        for m in cluster:
            if m in where:
                counts[where[m]] = counts.get(where[m], 0) + 1
        num += sum(c * c for c in counts.values()) / len(cluster)
        den += len(cluster)
    return num, den


def b_cubed(gold, pred) -> PRF:
    gold, pred = _clusters(gold), _clusters(pred)
    r_num, r_den = _b3_side(gold, pred)
    p_num, p_den = _b3_side(pred, gold)
    return PRF(p_num, p_den, r_num, r_den)


def phi4(k: frozenset, r: frozenset) -> float:
    return 2 * len(k & r) / (len(k) + len(r))


def ceaf_phi4(gold, pred) -> PRF:
    """Entity CEAF with the phi4 similarity under the optimal 1-1 alignment."""
    gold, pred = _clusters(gold), _clusters(pred)
    if not gold or not pred:
        return PRF(0.0, len(pred), 0.0, len(gold))
    sim = np.array([[phi4(k, r) for r in pred] for k in gold])
    rows, cols = linear_sum_assignment(sim, maximize=True)
    total = float(sim[rows, cols].sum())
    return PRF(total, len(pred), total, len(gold))


def coref_scores(gold, pred) -> CorefScores:
    """MUC, B-cubed and CEAF-phi4 for one document (pool with ``+``)."""
    return CorefScores(muc(gold, pred), b_cubed(gold, pred), ceaf_phi4(gold, pred))


# -- mention detection analysis ---------------------------------------------


@dataclass(frozen=True)
class MentionAnalysis:
    n_pred: int
    n_gold: int
    n_matched: int
    n_tokens: int

    @property
    def ratio(self) -> float:
        if self.n_tokens == 0:
            raise ValueError("mention ratio is undefined for an empty document")
        return self.n_pred / self.n_tokens

    @property
    def recall(self) -> float:
        return self.n_matched / self.n_gold if self.n_gold else 0.0

    def __add__(self, other: "MentionAnalysis") -> "MentionAnalysis":
        return MentionAnalysis(
            self.n_pred + other.n_pred,
            self.n_gold + other.n_gold,
            self.n_matched + other.n_matched,
            self.n_tokens + other.n_tokens,
        )

    def to_json(self) -> dict:
        return {
            "ratio": self.ratio,
            "recall": self.recall,
            "n_pred": self.n_pred,
            "n_gold": self.n_gold,
            "n_matched": self.n_matched,
            "n_tokens": self.n_tokens,
        }


def mention_analysis(gold: CorefPartition, pred_mentions: Iterable[Span], d: Document) -> MentionAnalysis:
    """Predicted mentions per token and the fraction of gold mentions found."""
    if len(d) == 0:
        raise ValueError(f"{d.doc_id}: mention ratio is undefined for an empty document")
    gold_m = set(gold.mentions()) if isinstance(gold, CorefPartition) else set(gold)
    pred_m = set(pred_mentions)
    return MentionAnalysis(len(pred_m), len(gold_m), len(gold_m & pred_m), len(d))


# -- corpus reports ------------------------------------------------------------


def corpus_report(pairs, schema) -> dict:
    """Micro-pooled scores over ``(gold, pred)`` structure pairs."""
    pairs = list(pairs)
    report: dict = {"task": schema.kind.value, "n_docs": len(pairs)}
    if schema.kind is TaskKind.COREF:
        total = CorefScores(PRF(), PRF(), PRF())
        for gold, pred in pairs:
            total = total + coref_scores(gold.partition, pred.partition)
        report.update(total.to_json())
        return report
    ent = PRF()
    rel = PRF()
    rel_strict = PRF()
    for gold, pred in pairs:
        ent = ent + entity_prf(gold.mentions, pred.mentions)
        if schema.kind is TaskKind.ERE:
            rel = rel + relation_prf(gold.relations, pred.relations, False, schema.symmetric_relations)
            rel_strict = rel_strict + relation_prf(gold.relations, pred.relations, True, schema.symmetric_relations)
    report["entity"] = ent.to_json()
    if schema.kind is TaskKind.ERE:
        report["relation"] = rel.to_json()
        report["relation_strict"] = rel_strict.to_json()
    return report


def format_report(report: dict) -> str:
    rows = [(k, v) for k, v in report.items() if isinstance(v, dict) and "f1" in v]
    lines = [f"{'metric':<16}{'P':>8}{'R':>8}{'F1':>8}"]
    for name, v in rows:
        lines.append(f"{name:<16}{100 * v['precision']:>8.2f}{100 * v['recall']:>8.2f}{100 * v['f1']:>8.2f}")
    if "avg_f1" in report:
        lines.append(f"{'avg_f1':<16}{'':>8}{'':>8}{100 * report['avg_f1']:>8.2f}")
    return "\n".join(lines)
