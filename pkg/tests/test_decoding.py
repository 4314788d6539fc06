import random

import pytest
import torch

from conftest import synth, tiny_model
from helpers import random_document
from spanaction.codec import delinearize, is_dyck_valid, linearize
from spanaction.corpus import default_schema
from spanaction.decoding import greedy_decode, predict_structure
from spanaction.scorer import Alphabet, ScorerConfig, ScorerModel, fit
from spanaction.structures import TaskKind, TaskStructure, validate_structure


def clamp(head, value):
    with torch.no_grad():
        head[-1].weight.zero_()
        head[-1].bias.fill_(value)


def test_clamped_heads_give_pure_copy(kind):
    schema = default_schema(kind)
    docs = synth(kind, n=3)
    m = tiny_model(schema, [ad.doc for ad in docs])
    clamp(m.ffn_left, float("-inf"))
    clamp(m.ffn_right, float("-inf"))
    if m.ffn_link is not None:
        clamp(m.ffn_link, float("-inf"))
    for ad in docs:
        res = greedy_decode(m, ad.doc)
        assert res.terminal and all(t.is_copy for t in res.sequence.triples)
        assert len(res.sequence) == len(ad.doc) + 1
        assert predict_structure(m, ad.doc) == TaskStructure.empty(kind)


@pytest.mark.parametrize("kind", list(TaskKind), ids=lambda k: k.value)
def test_random_models_decode_safely(kind):
    schema = default_schema(kind)
    rng = random.Random(11)
    for seed in range(100):
        d = random_document(rng, doc_id=f"r{seed}")
        m = tiny_model(schema, [d], seed=seed)
        res = greedy_decode(m, d)
        seq = res.sequence
        s = delinearize(seq, d, schema)
        assert validate_structure(s, d, schema) == []
        assert is_dyck_valid([t for t in seq.triples])
        if seq.terminal:
            assert seq.n_copies() == len(d) + 1
            n_right = sum(t.is_right for t in seq.triples)
            n_groups = sum(t.is_left for t in seq.triples)
            # every span costs a right bracket and a share of a left group
            assert len(seq) <= len(d) + 1 + n_right + n_groups
        assert res.n_decisions <= 4 * (len(d) + 1)
        assert len(res.probabilities) == res.n_decisions
        assert all(0.0 < p <= 1.0 for p in res.probabilities)


def test_decode_is_deterministic():
    schema = default_schema("coref")
    docs = synth(TaskKind.COREF, n=5)
    m = tiny_model(schema, [ad.doc for ad in docs], seed=1)
    for ad in docs:
        assert greedy_decode(m, ad.doc) == greedy_decode(m, ad.doc)


def test_max_steps_bound_and_truncation():
    schema = default_schema("ner")
    ad = synth(TaskKind.NER, n=1)[0]
    m = tiny_model(schema, [ad.doc])
    with pytest.raises(ValueError):
        greedy_decode(m, ad.doc, max_steps=len(ad.doc))
    clamp(m.ffn_left, 1e4)
    res = greedy_decode(m, ad.doc, max_steps=len(ad.doc) + 1)
    assert not res.terminal and res.n_decisions == len(ad.doc) + 1
    assert delinearize(res.sequence, ad.doc, schema) == TaskStructure.empty(TaskKind.NER)


def test_ties_go_to_copy():
    schema = default_schema("ner")
    ad = synth(TaskKind.NER, n=1)[0]
    m = tiny_model(schema, [ad.doc])
    for head in (m.ffn_copy, m.ffn_left, m.ffn_right):
        clamp(head, 0.0)
    res = greedy_decode(m, ad.doc)
    assert all(t.is_copy for t in res.sequence.triples)
    assert res.probabilities[0] == pytest.approx(0.5)


@pytest.mark.parametrize("kind", list(TaskKind), ids=lambda k: k.value)
def test_overfit_document_decodes_to_gold(kind):
    schema = default_schema(kind)
    ad = synth(kind, n=1, seed=4)[0]
    gold = linearize(ad.structure, ad.doc, schema)
    config = ScorerConfig.profile("small", lr=1e-3, epochs=200)
    m = ScorerModel(config, Alphabet.build([ad.doc]), schema)
    fit(m, [(ad.doc, gold)], config)
    res = greedy_decode(m, ad.doc)
    assert res.sequence.triples == gold.triples
    assert predict_structure(m, ad.doc) == ad.structure
