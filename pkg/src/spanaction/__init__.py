"""Span structures as sequences of structure-building actions.

Named entities, relations and coreference chains are linearized into copy /
left-bracket / right-bracket actions, scored by a compact autoregressive
model over a per-step candidate set, and decoded greedily under hard
well-formedness constraints.
"""

from .codec import (
    Act,
    ActionSequence,
    ActionTriple,
    PrefixState,
    candidate_actions,
    delinearize,
    is_dyck_valid,
    linearize,
    nearest_head_reduction,
    verbalize,
)
from .corpus import (
    AnnotatedDocument,
    SyntheticSpec,
    chunk_document,
    default_schema,
    generate_synthetic,
    read_conll_columns,
    read_jsonl,
    write_jsonl,
)
from .decoding import greedy_decode, predict_structure
from .metrics import (
    PRF,
    CorefScores,
    coref_scores,
    entity_prf,
    mention_analysis,
    relation_prf,
)
from .schema import LabelAction, TaskSchema, labeling_set, load_schema
from .scorer import (
    Alphabet,
    ScorerConfig,
    ScorerModel,
    fit,
    gradient_check,
    load_checkpoint,
    save_checkpoint,
    sequence_log_likelihood,
    step_distribution,
)
from .structures import (
    CorefPartition,
    Document,
    RelationTriple,
    Span,
    TaskKind,
    TaskStructure,
    TypedMention,
    span_overlap,
    validate_structure,
)

__version__ = "0.1.0"
