"""Corpus ingestion (JSON-lines, BIO columns), synthetic corpora, chunking."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .schema import SchemaError, TaskSchema
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

logger = logging.getLogger(__name__)

NER_TYPES = ("PER", "LOC", "ORG", "MISC")
ERE_TYPES = ("Loc", "Org", "Peop", "Other")
ERE_RELATIONS = ("Work_For", "Kill", "OrgBased_In", "Live_In", "Located_In")


class CorpusError(ValueError):
    pass


def default_schema(kind: TaskKind | str) -> TaskSchema:
    kind = TaskKind(kind)
    if kind is TaskKind.NER:
        return TaskSchema(kind, NER_TYPES)
    if kind is TaskKind.ERE:
        return TaskSchema(kind, ERE_TYPES, ERE_RELATIONS)
    return TaskSchema(kind)


@dataclass(frozen=True)
class AnnotatedDocument:
    doc: Document
    structure: TaskStructure
    provenance: dict = field(default_factory=dict, hash=False)

    @property
    def doc_id(self) -> str:
        return self.doc.doc_id


# -- JSON lines --------------------------------------------------------------


def structure_to_json(s: TaskStructure) -> dict:
    if s.kind is TaskKind.COREF:
        return {"chains": [[[m.start, m.end] for m in c] for c in s.partition.sorted_chains()]}
    mentions = sorted(s.mentions)
    index = {m: i for i, m in enumerate(mentions)}
    out = {"mentions": [{"start": m.span.start, "end": m.span.end, "type": m.entity_type} for m in mentions]}
    if s.kind is TaskKind.ERE:
        out["relations"] = [
            {"head": index[r.head], "relation": r.relation, "tail": index[r.tail]}
            for r in sorted(s.relations)
        ]
    return out


def structure_from_json(obj: dict, kind: TaskKind) -> TaskStructure:
    if kind is TaskKind.COREF:
        chains = obj.get("chains", [])
        return TaskStructure.coref([Span(int(s), int(e)) for s, e in c] for c in chains)
    mentions = [
        TypedMention(Span(int(m["start"]), int(m["end"])), str(m["type"]))
        for m in obj.get("mentions", [])
    ]
    if kind is TaskKind.NER:
        return TaskStructure.ner(mentions)
    relations = [
        RelationTriple(mentions[int(r["head"])], str(r["relation"]), mentions[int(r["tail"])])
        for r in obj.get("relations", [])
    ]
    return TaskStructure.ere(mentions, relations)


def document_to_json(ad: AnnotatedDocument) -> dict:
    rec = {
        "doc_id": ad.doc.doc_id,
        "task": ad.structure.kind.value,
        "tokens": list(ad.doc.tokens),
        "sentence_bounds": [list(b) for b in ad.doc.sentence_bounds],
    }
    rec.update(structure_to_json(ad.structure))
    if ad.provenance:
        rec["meta"] = ad.provenance
    return rec


def document_from_json(obj: dict, schema: TaskSchema) -> AnnotatedDocument:
    for key in ("doc_id", "tokens", "sentence_bounds"):
        if key not in obj:
            raise CorpusError(f"missing field {key!r}")
    task = obj.get("task", schema.kind.value)
    if TaskKind(task) is not schema.kind:
        raise CorpusError(f"record task {task!r} does not match schema {schema.kind.value!r}")
    doc = Document(str(obj["doc_id"]), tuple(obj["tokens"]), tuple(tuple(b) for b in obj["sentence_bounds"]))
    structure = structure_from_json(obj, schema.kind)
    problems = validate_structure(structure, doc, schema)
    if problems:
        raise CorpusError("; ".join(problems))
    return AnnotatedDocument(doc, structure, dict(obj.get("meta", {})))


def read_jsonl(path, schema: TaskSchema) -> list[AnnotatedDocument]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(document_from_json(json.loads(line), schema))
            except (ValueError, KeyError, TypeError, IndexError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_jsonl(path, docs: Iterable[AnnotatedDocument]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ad in docs:
            f.write(json.dumps(document_to_json(ad), ensure_ascii=False) + "\n")


# -- BIO columns -------------------------------------------------------------


def _bio_spans(tags: list[str], offset: int, locator: str) -> list[TypedMention]:
    mentions = []
    start, label = None, None
    for i, tag in enumerate(tags + ["O"]):
        prefix, _, name = tag.partition("-")
        if tag == "O" or prefix == "B" or (prefix == "I" and name != label):
            if start is not None:
                mentions.append(TypedMention(Span(offset + start, offset + i - 1), label))
                start, label = None, None
            if prefix == "I":
                logger.warning("%s: tag %s at token %d without B-; opening a new span", locator, tag, offset + i)
            if prefix in ("B", "I"):
                start, label = i, name
        elif prefix != "I":
            raise CorpusError(f"{locator}: unrecognized tag {tag!r}")
    return mentions


def read_conll_columns(path, schema: Optional[TaskSchema] = None) -> list[AnnotatedDocument]:
    """Read whitespace-separated columns: token first, BIO tag last.

    Blank lines end sentences and ``-DOCSTART-`` lines start a new document.
    """
    path = Path(path)
    docs: list[AnnotatedDocument] = []
    sentences: list[list[str]] = []
    tags: list[list[str]] = []
    current_t: list[str] = []
    current_g: list[str] = []
    first_line = 1

    def end_sentence():
        nonlocal current_t, current_g
        if current_t:
            sentences.append(current_t)
            tags.append(current_g)
        current_t, current_g = [], []

    def end_document(lineno: int):
        nonlocal sentences, tags
        end_sentence()
        if sentences:
            doc = Document.from_sentences(f"{path.stem}-{len(docs)}", sentences)
            mentions = []
            for (s, _), sent_tags in zip(doc.sentence_bounds, tags):
                mentions.extend(_bio_spans(sent_tags, s, f"{path}:{first_line}"))
            if schema is not None:
                for m in mentions:
                    if m.entity_type not in schema.entity_types:
                        raise SchemaError(f"{path}:{first_line}: unknown entity type {m.entity_type!r}")
            docs.append(AnnotatedDocument(doc, TaskStructure.ner(mentions), {"source": str(path)}))
        sentences, tags = [], []

    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            cols = line.split()
            if not cols:
                end_sentence()
                continue
            if cols[0] == "-DOCSTART-":
                end_document(lineno)
                first_line = lineno
                continue
            if len(cols) < 2:
                raise CorpusError(f"{path}:{lineno}: expected token and tag columns")
            current_t.append(cols[0])
            current_g.append(cols[-1])
    end_document(0)
    return docs


# -- synthetic corpora -------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic corpus generator.

    Entity words carry their type in their spelling (``per3`` is a PER word)
    and coreferent mentions share a name token, so structure is recoverable
    from surface patterns.
    """

    seed: int = 0
    n_docs: int = 100
    vocab_size: int = 40
    entity_vocab: int = 6
    sentences_per_doc: tuple[int, int] = (2, 3)
    sentence_length: tuple[int, int] = (5, 10)
    mention_density: float = 0.2
    nesting_prob: float = 0.1
    max_mention_len: int = 2
    relation_density: float = 0.5
    chains_per_doc: tuple[int, int] = (1, 3)
    chain_length: tuple[int, int] = (2, 3)

    def __post_init__(self):
        for name in ("mention_density", "nesting_prob", "relation_density"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("sentences_per_doc", "sentence_length", "chains_per_doc", "chain_length"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < (0 if name == "chains_per_doc" else 1):
                raise ValueError(f"bad range {name}={lo, hi}")
        if self.vocab_size < 1 or self.entity_vocab < 1 or self.max_mention_len < 1 or self.n_docs < 0:
            raise ValueError("vocabulary sizes, max_mention_len and n_docs must be positive")


def _filler(rng: random.Random, spec: SyntheticSpec) -> str:
    return f"w{rng.randrange(spec.vocab_size)}"


def _type_word(rng: random.Random, spec: SyntheticSpec, type_name: str) -> str:
    return f"{type_name.lower()}{rng.randrange(spec.entity_vocab)}"


def _entity_segment(rng, spec, schema, tokens, mentions):
    """Append one (possibly nested) typed mention; return the outermost mention."""
    c = rng.choice(schema.entity_types)
    length = rng.randint(1, spec.max_mention_len)
    start = len(tokens)
    tokens.extend(_type_word(rng, spec, c) for _ in range(length))
    inner = TypedMention(Span(start, len(tokens) - 1), c)
    mentions.append(inner)
    if schema.n_types > 1 and rng.random() < spec.nesting_prob:
        outer_type = rng.choice([t for t in schema.entity_types if t != c])
        tokens.append(_type_word(rng, spec, outer_type))
        outer = TypedMention(Span(start, len(tokens) - 1), outer_type)
        mentions.append(outer)
        return outer
    return inner


def _tagging_sentence(rng, spec, schema, tokens, mentions, relations):
    start = len(tokens)
    target = rng.randint(*spec.sentence_length)
    want_relation = schema.kind is TaskKind.ERE and rng.random() < spec.relation_density
    if want_relation:
        tokens.append(_filler(rng, spec))
        head = _entity_segment(rng, spec, schema, tokens, mentions)
        rel = rng.choice(schema.relation_types)
        tokens.append(_filler(rng, spec))
        tokens.append(rel.lower())
        tokens.append(_filler(rng, spec))
        tail = _entity_segment(rng, spec, schema, tokens, mentions)
        relations.append(RelationTriple(head, rel, tail))
    tokens.append(_filler(rng, spec))
    while len(tokens) - start < target:
        if rng.random() < spec.mention_density and target - (len(tokens) - start) > spec.max_mention_len + 1:
            _entity_segment(rng, spec, schema, tokens, mentions)
        tokens.append(_filler(rng, spec))
    return start, len(tokens)


def _coref_document(rng, spec, doc_id):
    n_sent = rng.randint(*spec.sentences_per_doc)
    n_chains = rng.randint(*spec.chains_per_doc)
    lengths = [rng.randint(*spec.chain_length) for _ in range(n_chains)]
    names = rng.sample(range(spec.entity_vocab), n_chains)
    order = [c for c, n in enumerate(lengths) for _ in range(n)]
    rng.shuffle(order)
    per_sentence: list[list[int]] = [[] for _ in range(n_sent)]
    for c in order:
        per_sentence[rng.randrange(n_sent)].append(c)

    tokens: list[str] = []
    bounds = []
    chains: list[list[Span]] = [[] for _ in range(n_chains)]
    for assigned in per_sentence:
        start = len(tokens)
        target = rng.randint(*spec.sentence_length)
        tokens.append(_filler(rng, spec))
        queue = list(assigned)
        while queue:
            c = queue.pop(0)
            m_start = len(tokens)
            if rng.random() < 0.3:
                tokens.append(f"m{rng.randrange(4)}")
            tokens.append(f"n{names[c]}")
            if queue and queue[0] != c and rng.random() < spec.nesting_prob:
                inner = queue.pop(0)
                tokens.append("of")
                tokens.append(f"n{names[inner]}")
                chains[inner].append(Span(len(tokens) - 1, len(tokens) - 1))
            chains[c].append(Span(m_start, len(tokens) - 1))
            tokens.append(_filler(rng, spec))
        while len(tokens) - start < target:
            tokens.append(_filler(rng, spec))
        bounds.append((start, len(tokens)))
    doc = Document(doc_id, tuple(tokens), tuple(bounds))
    return doc, TaskStructure.coref(chains)


def generate_synthetic(spec: SyntheticSpec, schema: TaskSchema) -> list[AnnotatedDocument]:
    """Deterministic synthetic corpus for ``schema``'s task."""
    if schema.kind is TaskKind.COREF:
        if spec.chains_per_doc[1] > spec.entity_vocab:
            raise CorpusError(
                f"up to {spec.chains_per_doc[1]} chains need distinct names, entity_vocab={spec.entity_vocab}"
            )
    elif spec.mention_density > 0 and spec.max_mention_len + 2 > spec.sentence_length[1]:
        raise CorpusError("mention_density > 0 but no mention fits in the longest sentence")
    rng = random.Random(spec.seed)
    out = []
    for k in range(spec.n_docs):
        doc_id = f"synth-{schema.kind.value}-{spec.seed}-{k:05d}"
        if schema.kind is TaskKind.COREF:
            doc, structure = _coref_document(rng, spec, doc_id)
        else:
            tokens: list[str] = []
            mentions: list[TypedMention] = []
            relations: list[RelationTriple] = []
            bounds = [
                _tagging_sentence(rng, spec, schema, tokens, mentions, relations)
                for _ in range(rng.randint(*spec.sentences_per_doc))
            ]
            doc = Document(doc_id, tuple(tokens), tuple(bounds))
            if schema.kind is TaskKind.NER:
                structure = TaskStructure.ner(mentions)
            else:
                structure = TaskStructure.ere(mentions, relations)
        problems = validate_structure(structure, doc, schema)
        if problems:
            raise CorpusError(f"{doc_id}: generator produced an invalid structure: {problems}")
        out.append(AnnotatedDocument(doc, structure, {"source": "synthetic", "seed": spec.seed}))
    return out


# -- chunking ----------------------------------------------------------------


def chunk_document(ad: AnnotatedDocument, max_words: int = 2048) -> list[AnnotatedDocument]:
    """Split on sentence boundaries into chunks of at most ``max_words`` tokens.

    Annotations inside one chunk are re-based; anything crossing a chunk
    boundary is dropped with a warning.
    """
    doc = ad.doc
    if len(doc) <= max_words:
        return [ad]
    ranges: list[tuple[int, int]] = []
    for s, e in doc.sentence_bounds:
        if e - s > max_words:
            raise CorpusError(f"{doc.doc_id}: sentence of {e - s} tokens exceeds max_words={max_words}")
        if ranges and e - ranges[-1][0] <= max_words:
            ranges[-1] = (ranges[-1][0], e)
        else:
            ranges.append((s, e))

    def chunk_of(span: Span) -> Optional[int]:
        for k, (s, e) in enumerate(ranges):
            if s <= span.start and span.end < e:
                return k
            if s <= span.start < e:
                return None
        return None

    def rebase(span: Span, k: int) -> Span:
        return Span(span.start - ranges[k][0], span.end - ranges[k][0])

    kind = ad.structure.kind
    per_chunk_mentions: list[list] = [[] for _ in ranges]
    per_chunk_relations: list[list] = [[] for _ in ranges]
    per_chunk_chains: list[list] = [[] for _ in ranges]
    dropped = 0
    if kind is TaskKind.COREF:
        for chain in ad.structure.partition.sorted_chains():
            split: dict[int, list[Span]] = {}
            for m in chain:
                k = chunk_of(m)
                if k is None:
                    dropped += 1
                    continue
                split.setdefault(k, []).append(rebase(m, k))
            if len(split) > 1:
                logger.warning("%s: coref chain split across %d chunks; cross-chunk links dropped", doc.doc_id, len(split))
            for k, members in split.items():
                if len(members) >= 2:
                    per_chunk_chains[k].append(members)
                else:
                    dropped += 1
    else:
        where = {}
        for m in ad.structure.mentions:
            k = chunk_of(m.span)
            if k is None:
                dropped += 1
                continue
            where[m] = (k, TypedMention(rebase(m.span, k), m.entity_type))
            per_chunk_mentions[k].append(where[m][1])
        for r in ad.structure.relations:
            h, t = where.get(r.head), where.get(r.tail)
            if h is None or t is None or h[0] != t[0]:
                dropped += 1
                continue
            per_chunk_relations[h[0]].append(RelationTriple(h[1], r.relation, t[1]))
    if dropped:
        logger.warning("%s: %d annotations dropped at chunk boundaries", doc.doc_id, dropped)

    out = []
    for k, (s, e) in enumerate(ranges):
        bounds = tuple((a - s, b - s) for a, b in doc.sentence_bounds if s <= a and b <= e)
        sub = Document(f"{doc.doc_id}#{k}", doc.tokens[s:e], bounds)
        if kind is TaskKind.COREF:
            structure = TaskStructure.coref(per_chunk_chains[k])
        elif kind is TaskKind.NER:
            structure = TaskStructure.ner(per_chunk_mentions[k])
        else:
            structure = TaskStructure.ere(per_chunk_mentions[k], per_chunk_relations[k])
        prov = dict(ad.provenance, parent=doc.doc_id, offset=s)
        out.append(AnnotatedDocument(sub, structure, prov))
    return out
