import pytest

from spanaction.corpus import SyntheticSpec, default_schema, generate_synthetic
from spanaction.scorer import Alphabet, ScorerConfig, ScorerModel
from spanaction.structures import TaskKind

KINDS = [TaskKind.NER, TaskKind.ERE, TaskKind.COREF]


def tiny_config(**kw) -> ScorerConfig:
    base = dict(embed_dim=8, enc_width=8, enc_layers=1, dec_width=8, ffn_hidden=8)
    base.update(kw)
    return ScorerConfig(**base)


def tiny_model(schema, docs, **kw) -> ScorerModel:
    return ScorerModel(tiny_config(**kw), Alphabet.build(docs), schema)


def synth(kind, n=20, seed=0, **kw):
    return generate_synthetic(SyntheticSpec(seed=seed, n_docs=n, **kw), default_schema(kind))


@pytest.fixture(params=KINDS, ids=lambda k: k.value)
def kind(request):
    return request.param


@pytest.fixture
def schema(kind):
    return default_schema(kind)
