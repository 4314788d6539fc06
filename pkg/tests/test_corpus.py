import json
import logging
import time

import pytest

from conftest import synth
from spanaction.codec import delinearize, linearize
from spanaction.corpus import (
    AnnotatedDocument,
    CorpusError,
    SyntheticSpec,
    chunk_document,
    default_schema,
    document_to_json,
    generate_synthetic,
    read_conll_columns,
    read_jsonl,
    write_jsonl,
)
from spanaction.schema import SchemaError
from spanaction.structures import Document, Span, TaskKind, TaskStructure, TypedMention, validate_structure


def write(tmp_path, text, name="data.txt"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# -- BIO columns ----------------------------------------------------------------


def test_bio_basic(tmp_path):
    path = write(tmp_path, "U.N. NNP B-ORG\nofficial NN O\nEkeus NNP B-PER\n")
    (ad,) = read_conll_columns(path, default_schema("ner"))
    assert ad.doc.tokens == ("U.N.", "official", "Ekeus")
    assert ad.structure.mentions == {
        TypedMention(Span(0, 0), "ORG"),
        TypedMention(Span(2, 2), "PER"),
    }


def test_bio_all_outside(tmp_path):
    (ad,) = read_conll_columns(write(tmp_path, "a O\nb O\n"))
    assert ad.structure.mentions == frozenset()


def test_bio_repair_logs(tmp_path, caplog):
    path = write(tmp_path, "a O\nJohn I-PER\nSmith I-PER\nx I-LOC\n")
    with caplog.at_level(logging.WARNING):
        (ad,) = read_conll_columns(path)
    assert ad.structure.mentions == {TypedMention(Span(1, 2), "PER"), TypedMention(Span(3, 3), "LOC")}
    assert sum("without B-" in r.message for r in caplog.records) == 2


def test_bio_documents_and_sentences(tmp_path):
    text = (
        "-DOCSTART- -X- O\n\n"
        "EU B-ORG\nrejects O\n\nGerman B-MISC\ncall O\n\n"
        "-DOCSTART- -X- O\n\nPeter B-PER\nBlackburn I-PER\n"
    )
    docs = read_conll_columns(write(tmp_path, text), default_schema("ner"))
    assert len(docs) == 2
    assert docs[0].doc.sentence_bounds == ((0, 2), (2, 4))
    assert docs[0].structure.mentions == {TypedMention(Span(0, 0), "ORG"), TypedMention(Span(2, 2), "MISC")}
    assert docs[1].structure.mentions == {TypedMention(Span(0, 1), "PER")}
    for ad in docs:
        assert validate_structure(ad.structure, ad.doc) == []


def test_bio_unknown_label(tmp_path):
    with pytest.raises(SchemaError):
        read_conll_columns(write(tmp_path, "a B-FOO\n"), default_schema("ner"))
    with pytest.raises(CorpusError, match="data.txt:1"):
        read_conll_columns(write(tmp_path, "a X-FOO\n"))


def test_bio_missing_file(tmp_path):
    with pytest.raises(OSError):
        read_conll_columns(tmp_path / "absent.txt")


# -- JSON lines -----------------------------------------------------------------


def test_jsonl_round_trip(tmp_path, kind):
    schema = default_schema(kind)
    docs = synth(kind, n=30, seed=3)
    path = tmp_path / "c.jsonl"
    write_jsonl(path, docs)
    again = read_jsonl(path, schema)
    assert [(a.doc, a.structure, a.provenance) for a in again] == [(a.doc, a.structure, a.provenance) for a in docs]
    write_jsonl(tmp_path / "d.jsonl", again)
    assert (tmp_path / "d.jsonl").read_bytes() == path.read_bytes()


def test_jsonl_count_conservation(tmp_path):
    docs = synth(TaskKind.NER, n=348, seed=1)
    write_jsonl(tmp_path / "c.jsonl", docs)
    assert len(read_jsonl(tmp_path / "c.jsonl", default_schema("ner"))) == 348


def test_jsonl_errors_carry_line_numbers(tmp_path):
    good = document_to_json(synth(TaskKind.COREF, n=1)[0])
    bad = dict(good, chains=[[[0, 0], [999, 999]]])
    path = write(tmp_path, json.dumps(good) + "\n\n" + json.dumps(bad) + "\n", "c.jsonl")
    with pytest.raises(CorpusError, match=r"c\.jsonl:3"):
        read_jsonl(path, default_schema("coref"))
    path = write(tmp_path, json.dumps(good) + "\n{not json\n", "d.jsonl")
    with pytest.raises(CorpusError, match=r"d\.jsonl:2"):
        read_jsonl(path, default_schema("coref"))
    with pytest.raises(CorpusError, match="does not match"):
        path = write(tmp_path, json.dumps(good) + "\n", "e.jsonl")
        read_jsonl(path, default_schema("ner"))


def test_metadata_is_preserved(tmp_path):
    ad = synth(TaskKind.COREF, n=1)[0]
    ad = AnnotatedDocument(ad.doc, ad.structure, {"speaker": ["A", "B"], "genre": "bc"})
    write_jsonl(tmp_path / "m.jsonl", [ad])
    assert read_jsonl(tmp_path / "m.jsonl", default_schema("coref"))[0].provenance == ad.provenance


# -- synthetic corpora ------------------------------------------------------------


def test_synthetic_deterministic(kind):
    a, b = synth(kind, n=20, seed=7), synth(kind, n=20, seed=7)
    assert [(x.doc, x.structure) for x in a] == [(x.doc, x.structure) for x in b]
    c = synth(kind, n=20, seed=8)
    assert [x.doc for x in a] != [x.doc for x in c]


def test_zero_density_is_structure_free(kind):
    if kind is TaskKind.COREF:
        docs = synth(kind, n=20, chains_per_doc=(0, 0))
    else:
        docs = synth(kind, n=20, mention_density=0.0, relation_density=0.0)
    assert all(ad.structure == TaskStructure.empty(kind) for ad in docs)


def test_thousand_documents_validate_and_round_trip(kind):
    schema = default_schema(kind)
    docs = synth(kind, n=1000, seed=5)
    t0 = time.perf_counter()
    for ad in docs:
        assert validate_structure(ad.structure, ad.doc, schema) == []
        seq = linearize(ad.structure, ad.doc, schema)
        assert delinearize(seq, ad.doc, schema) == ad.structure
    assert time.perf_counter() - t0 < 60
    if kind is TaskKind.COREF:
        assert all(len(c) >= 2 for ad in docs for c in ad.structure.partition.chains)
    assert sum(len(ad.structure.spans()) for ad in docs) > 1000


def test_entity_type_follows_token_pattern():
    for ad in synth(TaskKind.NER, n=50):
        for m in ad.structure.mentions:
            last = ad.doc.tokens[m.span.end]
            assert last.startswith(m.entity_type.lower())


@pytest.mark.parametrize(
    "kwargs",
    [dict(mention_density=1.5), dict(sentence_length=(5, 3)), dict(n_docs=-1), dict(vocab_size=0)],
)
def test_invalid_spec(kwargs):
    with pytest.raises(ValueError):
        SyntheticSpec(**kwargs)


def test_infeasible_spec():
    with pytest.raises(CorpusError):
        generate_synthetic(SyntheticSpec(chains_per_doc=(1, 9), entity_vocab=4), default_schema("coref"))
    with pytest.raises(CorpusError):
        generate_synthetic(SyntheticSpec(sentence_length=(3, 3), max_mention_len=2), default_schema("ner"))


# -- chunking ---------------------------------------------------------------------


def long_doc(lengths, kind=TaskKind.NER, structure=None):
    d = Document.from_sentences("L", [[f"w{i}" for i in range(n)] for n in lengths])
    return AnnotatedDocument(d, structure or TaskStructure.empty(kind))


def test_short_document_single_chunk():
    ad = synth(TaskKind.NER, n=1)[0]
    assert chunk_document(ad, 2048) == [ad]


def test_two_long_sentences():
    ad = long_doc([1500, 1500], structure=TaskStructure.ner([TypedMention(Span(1600, 1601), "PER")]))
    chunks = chunk_document(ad, 2048)
    assert [len(c.doc) for c in chunks] == [1500, 1500]
    assert sum((c.doc.tokens for c in chunks), ()) == ad.doc.tokens
    assert chunks[1].structure.mentions == {TypedMention(Span(100, 101), "PER")}
    assert chunks[1].provenance["offset"] == 1500


def test_sentence_longer_than_limit():
    with pytest.raises(CorpusError):
        chunk_document(long_doc([10, 30]), 20)


def test_coref_chain_across_chunks(caplog):
    chains = [[Span(0, 0), Span(1, 1), Span(12, 12), Span(13, 13)], [Span(2, 2), Span(14, 14)]]
    ad = long_doc([10, 10], TaskKind.COREF, TaskStructure.coref(chains))
    with caplog.at_level(logging.WARNING):
        first, second = chunk_document(ad, 12)
    assert first.structure.partition.sorted_chains() == [[Span(0, 0), Span(1, 1)]]
    assert second.structure.partition.sorted_chains() == [[Span(2, 2), Span(3, 3)]]
    assert any("cross-chunk" in r.message for r in caplog.records)
    for c in (first, second):
        assert validate_structure(c.structure, c.doc) == []


def test_chunking_packs_and_conserves_tokens():
    docs = synth(TaskKind.ERE, n=30, sentences_per_doc=(4, 6))
    for ad in docs:
        chunks = chunk_document(ad, 20)
        assert all(len(c.doc) <= 20 for c in chunks)
        assert sum((c.doc.tokens for c in chunks), ()) == ad.doc.tokens
        kept = sum(len(c.structure.mentions) for c in chunks)
        assert kept <= len(ad.structure.mentions)
