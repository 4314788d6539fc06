"""Independent oracles and generators shared by the test modules."""

import random
from itertools import permutations

from spanaction.codec import Act, ActionTriple, PrefixState, right
from spanaction.schema import LabelAction
from spanaction.structures import (
    CorefPartition,
    Document,
    RelationTriple,
    Span,
    TaskKind,
    TaskStructure,
    TypedMention,
)


def random_document(rng: random.Random, max_sentences=3, max_len=6, doc_id="r"):
    sents = [
        [f"t{rng.randrange(6)}" for _ in range(rng.randint(1, max_len))]
        for _ in range(rng.randint(1, max_sentences))
    ]
    return Document.from_sentences(doc_id, sents)


def random_spans(rng, n_tokens, k, max_len=4):
    spans = []
    for _ in range(k):
        s = rng.randrange(n_tokens)
        spans.append(Span(s, min(n_tokens - 1, s + rng.randrange(max_len))))
    return spans


def random_structure(rng: random.Random, d: Document, schema) -> TaskStructure:
    """Arbitrary valid structure: nesting, crossing and shared spans allowed."""
    n = len(d)
    kind = schema.kind
    if kind is TaskKind.COREF:
        spans = list(dict.fromkeys(random_spans(rng, n, rng.randint(0, 8))))
        rng.shuffle(spans)
        chains, i = [], 0
        while len(spans) - i >= 2:
            k = rng.randint(2, max(2, len(spans) - i))
            chains.append(spans[i : i + k])
            i += k
        return TaskStructure.coref(chains)
    mentions = list(
        {TypedMention(sp, rng.choice(schema.entity_types)) for sp in random_spans(rng, n, rng.randint(0, 6))}
    )
    if kind is TaskKind.NER:
        return TaskStructure.ner(mentions)
    relations = set()
    if len(mentions) >= 2:
        for _ in range(rng.randint(0, 4)):
            h, t = rng.sample(mentions, 2)
            relations.add(RelationTriple(h, rng.choice(schema.relation_types), t))
    return TaskStructure.ere(mentions, relations)


def random_prefix(rng: random.Random, d: Document, schema, prune, max_len=30):
    """A valid decision history reached by a uniformly random walk."""
    state = PrefixState(d, schema, prune)
    hist = []
    target = rng.randint(0, max_len)
    while len(hist) < target:
        if state.terminal:
            break
        cands = state.candidates()
        # keep walks from terminating immediately
        weights = [3.0 if c.is_copy else 1.0 for c in cands]
        t = rng.choices(cands, weights)[0]
        state.step(t)
        hist.append(t)
        if state.terminal:
            hist.pop()
            state = PrefixState.from_history(hist, d, schema, prune)
            break
    return state


def brute_force_candidates(state: PrefixState) -> set:
    """Filter the full universe of triples through the well-formedness rules."""
    triples = state.triples
    d, schema, prune = state.doc, state.schema, state.prune
    n_copied = sum(t.is_copy for t in triples)
    out = set()
    if n_copied <= len(d):
        out.add(ActionTriple(Act.COPY))
    out.add(ActionTriple(Act.LEFT))
    starts, used = {}, {}
    cursor = 0
    for i, t in enumerate(triples):
        if t.is_copy:
            cursor += 1
        elif t.is_left:
            starts[i] = cursor
        else:
            used[t.b] = used.get(t.b, 0) + 1
    sent = d.sentence_index()
    last = n_copied - 1
    rights = [i for i, t in enumerate(triples) if t.is_right]
    types = [None] + list(range(schema.n_types))
    antes = [None] + list(range(len(triples)))
    rels = [None] + list(range(schema.n_relations))
    labels = []
    for c in types:
        for m in antes:
            for r in rels:
                if m is not None and m not in rights:
                    continue
                if schema.kind is TaskKind.NER and not (c is not None and m is None and r is None):
                    continue
                if schema.kind is TaskKind.COREF and not (c is None and r is None):
                    continue
                if schema.kind is TaskKind.ERE and (c is None or (m is None) != (r is None)):
                    continue
                labels.append(LabelAction(c, m, r))
    for b in range(len(triples)):
        if not triples[b].is_left:
            continue
        if used.get(b, 0) >= triples[b].multiplicity:
            continue
        if last < 0 or starts[b] > last:
            continue
        if prune and sent[starts[b]] != sent[last]:
            continue
        for z in labels:
            out.add(right(b, z))
    return out


# -- metric oracles ----------------------------------------------------------


def oracle_muc(key, response):
    """Vilain et al. link counting, by explicit partitioning of each key chain."""
    num = den = 0
    for k in key:
        parts = set()
        for m in k:
            owner = next((i for i, r in enumerate(response) if m in r), None)
            parts.add(("r", owner) if owner is not None else ("s", m))
        num += len(k) - len(parts)
        den += len(k) - 1
    return num, den


def oracle_b3(key, response):
    num = 0.0
    den = 0
    for k in key:
        for m in k:
            r = next((r for r in response if m in r), set())
            num += len(set(k) & set(r)) / len(k)
            den += 1
    return num, den


def oracle_ceaf(key, response):
    """Exhaustive search over all one-to-one alignments."""
    def phi(a, b):
        return 2 * len(set(a) & set(b)) / (len(a) + len(b))

    small, large = (key, response) if len(key) <= len(response) else (response, key)
    best = 0.0
    for perm in permutations(range(len(large)), len(small)):
        best = max(best, sum(phi(small[i], large[j]) for i, j in enumerate(perm)))
    return best, len(response), best, len(key)


def f1(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)
