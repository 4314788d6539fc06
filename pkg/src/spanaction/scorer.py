"""Score function and conditional distribution over dynamic action sets.

The model is a small encoder-decoder: a bidirectional LSTM contextualizes the
document, and a unidirectional LSTM reads the verbalized actions emitted so
far. At every decision the decoder input concatenates the embedding of the
previous verbalized symbol with the encoder states on both sides of the copy
cursor. Candidates are scored by parameter-disjoint feed-forward heads:

* ``copy`` and ``left`` score the decoder state ``h_n``;
* ``right`` scores the mention representation ``[h_n; h_b]`` with one output
  per entity type plus one label-agnostic epsilon output;
* ``link`` scores ``[m_n; m_z]`` against the representation of a candidate
  antecedent span, one output per relation (a single output for coref).
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .codec import (
    Act,
    ActionSequence,
    ActionTriple,
    CodecError,
    LEFT,
    PrefixState,
    default_prune,
)
from .schema import TaskSchema
from .structures import Document, TaskKind

logger = logging.getLogger(__name__)

PAD, UNK, EOS, LBR, RBR = range(5)
RESERVED = ("<pad>", "<unk>", "</s>", "⟦", "⟧")


class ScorerError(RuntimeError):
    pass


class InconsistentGoldError(ScorerError):
    """The gold action is not in the candidate set of its step."""


class StateCacheError(ScorerError):
    pass


class TrainingError(ScorerError):
    pass


class CheckpointError(ScorerError):
    pass


# -- alphabet ------------------------------------------------------------------


class Alphabet:
    """Document vocabulary plus reserved symbols at fixed indices 0-4."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens: list[str] = []
        self._index: dict[str, int] = {}
        for t in tokens:
            if t not in self._index:
                self._index[t] = len(RESERVED) + len(self.tokens)
                self.tokens.append(t)

    @classmethod
    def build(cls, docs: Iterable[Document]) -> "Alphabet":
        return cls(t for d in docs for t in d.tokens)

    def __len__(self) -> int:
        return len(RESERVED) + len(self.tokens)

    def index(self, token: str) -> int:
        return self._index.get(token, UNK)

    def encode(self, doc: Document) -> list[int]:
        return [self.index(t) for t in doc.tokens]

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()[:16]


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class ScorerConfig:
    embed_dim: int = 64
    enc_width: int = 64
    enc_layers: int = 2
    dec_width: int = 64
    dec_layers: int = 1
    ffn_hidden: int = 150
    lr: float = 5e-5
    weight_decay: float = 0.01
    epochs: int = 100
    batch_size: int = 8
    seed: int = 0
    precision: str = "float32"
    grad_clip: float = 1.0

    def __post_init__(self):
        for f in ("embed_dim", "enc_width", "enc_layers", "dec_width", "dec_layers", "ffn_hidden", "batch_size"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")
        if self.enc_width % 2:
            raise ValueError("enc_width must be even (two LSTM directions)")
        if self.lr < 0 or self.epochs < 0 or self.grad_clip <= 0:
            raise ValueError("lr and epochs must be non-negative, grad_clip positive")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")

    @classmethod
    def profile(cls, name: str, **overrides) -> "ScorerConfig":
        if name == "small":
            base = {}
        elif name == "large":
            base = dict(embed_dim=256, enc_width=256, dec_width=256, ffn_hidden=4096)
        else:
            raise ValueError(f"unknown profile {name!r}")
        base.update(overrides)
        return cls(**base)

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == "float64" else torch.float32

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def _ffn(n_in: int, hidden: int, n_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(n_in, hidden), nn.GELU(), nn.Linear(hidden, n_out))


# -- candidate indexing --------------------------------------------------------

_COPY, _LEFT, _RIGHT, _LINK, _ZERO = range(5)


class _CandidateIndex:
    """Flattened gather plan mapping candidates to head outputs.

    Each candidate score is the sum of two entries of one flat vector holding
    the copy, left, right and link head outputs followed by a constant 0.
    """

    def __init__(self, schema: TaskSchema):
        self.schema = schema
        self.right_dim = schema.n_types + int(schema.allow_epsilon)
        self.link_dim = max(1, schema.n_relations)
        self.eps_slot = schema.n_types
        self.rows: list[int] = []
        self.pair_dec: list[int] = []
        self.pair_left: list[int] = []
        self.link_pair: list[int] = []
        self.link_ar: list[int] = []
        self.link_al: list[int] = []
        self.seg = ([], [])
        self.loc = ([], [])
        self.cand_row: list[int] = []
        self.cand_col: list[int] = []
        self.max_c = 0

    def add(self, row: int, candidates: Sequence[ActionTriple], triples, triple_decision) -> None:
        d = len(self.rows)
        self.rows.append(row)
        kind = self.schema.kind
        pair_of: dict[int, int] = {}
        link_of: dict[tuple[int, int], int] = {}

        def pair(b):
            p = pair_of.get(b)
            if p is None:
                p = pair_of[b] = len(self.pair_dec)
                self.pair_dec.append(row)
                self.pair_left.append(triple_decision[b])
            return p

        def link(p, m):
            key = (p, m)
            k = link_of.get(key)
            if k is None:
                k = link_of[key] = len(self.link_pair)
                self.link_pair.append(p)
                self.link_ar.append(triple_decision[m])
                self.link_al.append(triple_decision[triples[m].b])
            return k

        (s1, s2), (l1, l2) = self.seg, self.loc
        for col, cand in enumerate(candidates):
            if cand.act is Act.COPY:
                a, x, b, y = _COPY, d, _ZERO, 0
            elif cand.act is Act.LEFT:
                a, x, b, y = _LEFT, d, _ZERO, 0
            else:
                p = pair(cand.b)
                z = cand.z
                base = p * self.right_dim
                if kind is TaskKind.NER:
                    a, x, b, y = _RIGHT, base + z.entity_type, _ZERO, 0
                elif kind is TaskKind.COREF:
                    if z.antecedent is None:
                        a, x, b, y = _RIGHT, base + self.eps_slot, _ZERO, 0
                    else:
                        a, x, b, y = _LINK, link(p, z.antecedent) * self.link_dim, _ZERO, 0
                else:
                    a, x = _RIGHT, base + z.entity_type
                    if z.antecedent is None:
                        b, y = _RIGHT, base + self.eps_slot
                    else:
                        b, y = _LINK, link(p, z.antecedent) * self.link_dim + z.relation
            s1.append(a)
            l1.append(x)
            s2.append(b)
            l2.append(y)
            self.cand_row.append(d)
            self.cand_col.append(col)
        self.max_c = max(self.max_c, len(candidates))

    def tensors(self) -> dict:
        n = len(self.rows)
        offsets = np.array(
            [0, n, 2 * n, 2 * n + len(self.pair_dec) * self.right_dim,
             2 * n + len(self.pair_dec) * self.right_dim + len(self.link_pair) * self.link_dim],
            dtype=np.int64,
        )
        src1 = offsets[np.asarray(self.seg[0], dtype=np.int64)] + np.asarray(self.loc[0], dtype=np.int64)
        src2 = offsets[np.asarray(self.seg[1], dtype=np.int64)] + np.asarray(self.loc[1], dtype=np.int64)
        as_long = lambda v: torch.as_tensor(np.asarray(v, dtype=np.int64))  # noqa: E731
        return {
            "n": n,
            "max_c": self.max_c,
            "rows": as_long(self.rows),
            "pair_dec": as_long(self.pair_dec),
            "pair_left": as_long(self.pair_left),
            "link_pair": as_long(self.link_pair),
            "link_ar": as_long(self.link_ar),
            "link_al": as_long(self.link_al),
            "src1": torch.as_tensor(src1),
            "src2": torch.as_tensor(src2),
            "cand_row": as_long(self.cand_row),
            "cand_col": as_long(self.cand_col),
        }


@dataclass
class TeacherPlan:
    """Everything needed to score a gold sequence under teacher forcing."""

    doc: Document
    n_decisions: int
    prev_ids: torch.Tensor
    cursors: torch.Tensor
    index: dict
    gold_col: torch.Tensor
    candidate_counts: list[int]


# -- model ---------------------------------------------------------------------


class ScorerModel(nn.Module):
    def __init__(self, config: ScorerConfig, alphabet: Alphabet, schema: TaskSchema):
        super().__init__()
        self.config = config
        self.alphabet = alphabet
        self.schema = schema
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(config.seed)
        c = config
        self.embed = nn.Embedding(len(alphabet), c.embed_dim)
        self.encoder = nn.LSTM(
            c.embed_dim, c.enc_width // 2, c.enc_layers, batch_first=True, bidirectional=True
        )
        self.enc_bos = nn.Parameter(torch.randn(c.enc_width) * 0.1)
        self.enc_eos = nn.Parameter(torch.randn(c.enc_width) * 0.1)
        self.decoder = nn.LSTM(c.embed_dim + 2 * c.enc_width, c.dec_width, c.dec_layers, batch_first=True)
        h = c.dec_width
        self.ffn_copy = _ffn(h, c.ffn_hidden, 1)
        self.ffn_left = _ffn(h, c.ffn_hidden, 1)
        self.ffn_right = _ffn(2 * h, c.ffn_hidden, schema.n_types + int(schema.allow_epsilon))
        self.ffn_link = (
            _ffn(4 * h, c.ffn_hidden, max(1, schema.n_relations)) if schema.allow_epsilon else None
        )
        torch.random.set_rng_state(gen_state)
        self.to(c.dtype)

    @property
    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    @property
    def dtype(self) -> torch.dtype:
        return self.enc_bos.dtype

    # encoder ---------------------------------------------------------------

    def encode_document(self, doc: Document) -> torch.Tensor:
        if len(doc) == 0:
            raise ScorerError(f"{doc.doc_id}: cannot encode an empty document")
        ids = torch.tensor([self.alphabet.encode(doc)], dtype=torch.long)
        out, _ = self.encoder(self.embed(ids))
        return out[0]

    def encode_extended(self, doc: Document) -> torch.Tensor:
        """Encoder states framed by the begin and end boundary vectors."""
        parts = [self.enc_bos[None]]
        if len(doc):
            parts.append(self.encode_document(doc))
        parts.append(self.enc_eos[None])
        return torch.cat(parts)

    def decoder_inputs(self, enc_ext: torch.Tensor, prev_ids: torch.Tensor, cursors: torch.Tensor) -> torch.Tensor:
        return torch.cat([self.embed(prev_ids), enc_ext[cursors + 1], enc_ext[cursors]], dim=-1)

    # scoring ---------------------------------------------------------------

    def flat_scores(self, H: torch.Tensor, idx: dict) -> torch.Tensor:
        """Candidate scores as a padded ``(decisions, max_candidates)`` matrix."""
        hr = H[idx["rows"]]
        parts = [self.ffn_copy(hr).reshape(-1), self.ffn_left(hr).reshape(-1)]
        if len(idx["pair_dec"]):
            M = torch.cat([H[idx["pair_dec"]], H[idx["pair_left"]]], dim=-1)
            parts.append(self.ffn_right(M).reshape(-1))
            if len(idx["link_pair"]):
                Mz = torch.cat([H[idx["link_ar"]], H[idx["link_al"]]], dim=-1)
                X = torch.cat([M[idx["link_pair"]], Mz], dim=-1)
                parts.append(self.ffn_link(X).reshape(-1))
        parts.append(H.new_zeros(1))
        V = torch.cat(parts)
        s = V[idx["src1"]] + V[idx["src2"]]
        S = H.new_full((idx["n"], idx["max_c"]), float("-inf"))
        S[idx["cand_row"], idx["cand_col"]] = s
        return S

    def teacher_plan(
        self, doc: Document, gold: ActionSequence, prune_sentences: Optional[bool] = None
    ) -> TeacherPlan:
        state = PrefixState(doc, self.schema, prune_sentences)
        index = _CandidateIndex(self.schema)
        prev_ids, cursors, gold_cols, counts = [], [], [], []
        prev = PAD
        for t in gold.decisions():
            cands = state.candidates()
            try:
                col = cands.index(t)
            except ValueError:
                raise InconsistentGoldError(
                    f"{doc.doc_id}: decision {state.n_decisions} ({t.act.value}) is not a candidate"
                ) from None
            row = state.n_decisions
            prev_ids.append(prev)
            cursors.append(state.cursor)
            cursor = state.cursor
            index.add(row, cands, state.triples, state.triple_decision)
            state.step(t)
            gold_cols.append(col)
            counts.append(len(cands))
            if t.is_copy:
                prev = self.alphabet.index(doc.tokens[cursor]) if cursor < len(doc) else EOS
            else:
                prev = LBR if t.is_left else RBR
        if not state.terminal:
            raise InconsistentGoldError(f"{doc.doc_id}: gold sequence does not terminate")
        return TeacherPlan(
            doc,
            len(gold_cols),
            torch.tensor(prev_ids, dtype=torch.long),
            torch.tensor(cursors, dtype=torch.long),
            index.tensors(),
            torch.tensor(gold_cols, dtype=torch.long),
            counts,
        )

    def plan_log_probs(self, plan: TeacherPlan) -> torch.Tensor:
        """Per-decision ``log p(gold | prefix, D)``."""
        enc_ext = self.encode_extended(plan.doc)
        x = self.decoder_inputs(enc_ext, plan.prev_ids, plan.cursors)
        H, _ = self.decoder(x[None])
        S = self.flat_scores(H[0], plan.index)
        logp = torch.log_softmax(S, dim=-1)
        return logp.gather(1, plan.gold_col[:, None])[:, 0]

    def score_step(self, H: torch.Tensor, state: PrefixState, candidates: Sequence[ActionTriple]) -> torch.Tensor:
        """Scores for the pending decision; ``H`` holds every decoder state so far."""
        row = state.n_decisions
        if row >= len(H):
            raise StateCacheError(f"no decoder state for decision {row}")
        index = _CandidateIndex(self.schema)
        td = state.triple_decision
        for cand in candidates:
            if cand.is_right and (cand.b >= len(td) or td[cand.b] >= len(H)):
                raise StateCacheError(f"no cached state for left bracket {cand.b}")
        index.add(row, candidates, state.triples, td)
        return self.flat_scores(H, index.tensors())[0]


# -- module-level operations ----------------------------------------------------


def encode_document(model: ScorerModel, d: Document) -> torch.Tensor:
    with torch.no_grad():
        return model.encode_document(d)


def score_candidates(model: ScorerModel, H: torch.Tensor, state: PrefixState, candidates) -> torch.Tensor:
    return model.score_step(H, state, candidates)


def step_distribution(scores) -> np.ndarray:
    """Softmax over a candidate set with max-shifted exponentiation."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("need a non-empty vector of scores")
    if np.isnan(s).any():
        raise FloatingPointError("NaN candidate score")
    top = s.max()
    if not np.isfinite(top):
        raise FloatingPointError("no finite candidate score")
    e = np.exp(s - top)
    return e / e.sum()


def sequence_log_likelihood(
    model: ScorerModel,
    d: Document,
    gold: ActionSequence,
    schema: Optional[TaskSchema] = None,
    prune_sentences: Optional[bool] = None,
) -> float:
    if schema is not None and schema != model.schema:
        raise ScorerError("schema does not match the model's schema")
    plan = model.teacher_plan(d, gold, prune_sentences)
    with torch.no_grad():
        return float(model.plan_log_probs(plan).sum())


def teacher_forced_accuracy(model: ScorerModel, plans: Sequence[TeacherPlan]) -> float:
    """Fraction of gold decisions that are the argmax of their candidate set."""
    hit = total = 0
    with torch.no_grad():
        for plan in plans:
            enc_ext = model.encode_extended(plan.doc)
            x = model.decoder_inputs(enc_ext, plan.prev_ids, plan.cursors)
            H, _ = model.decoder(x[None])
            S = model.flat_scores(H[0], plan.index)
            hit += int((S.argmax(dim=-1) == plan.gold_col).sum())
            total += plan.n_decisions
    return hit / total if total else 0.0


def build_plans(model: ScorerModel, corpus, prune_sentences: Optional[bool] = None) -> list[TeacherPlan]:
    return [model.teacher_plan(doc, seq, prune_sentences) for doc, seq in corpus]


def fit(
    model: ScorerModel,
    corpus: Sequence[tuple[Document, ActionSequence]],
    config: Optional[ScorerConfig] = None,
    prune_sentences: Optional[bool] = None,
    plans: Optional[Sequence[TeacherPlan]] = None,
    on_epoch=None,
) -> tuple[ScorerModel, list[float]]:
    """Minimize per-decision mean NLL with AdamW; returns the model and loss trace.

    Each trace entry is the mean loss over the epoch's batches, measured before
    each batch update.
    """
    config = config or model.config
    if not corpus and not plans:
        raise TrainingError("empty training corpus")
    if plans is None:
        plans = build_plans(model, corpus, prune_sentences)
    opt = torch.optim.AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    rng = random.Random(config.seed)
    order = list(range(len(plans)))
    trace: list[float] = []
    model.train()
    for epoch in range(1, config.epochs + 1):
        rng.shuffle(order)
        total = 0.0
        decisions = 0
        for i in range(0, len(order), config.batch_size):
            batch = [plans[j] for j in order[i : i + config.batch_size]]
            opt.zero_grad()
            nll = -sum(model.plan_log_probs(p).sum() for p in batch)
            n = sum(p.n_decisions for p in batch)
            loss = nll / n
            if not torch.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            total += float(nll.detach())
            decisions += n
        trace.append(total / decisions)
        if on_epoch is not None:
            on_epoch(epoch, trace[-1])
    model.eval()
    return model, trace


# -- gradient check ------------------------------------------------------------


def _mean_nll(model: ScorerModel, plan: TeacherPlan) -> torch.Tensor:
    return -model.plan_log_probs(plan).mean()


def _analytic_gradient(model: ScorerModel, plan: TeacherPlan) -> list[torch.Tensor]:
    model.zero_grad()
    _mean_nll(model, plan).backward()
    return [
        p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        for p in model.parameters()
    ]


@dataclass
class GradientReport:
    n_checked: int
    max_rel_error: float
    max_abs_error: float
    tolerance: float
    entries: list[tuple[str, int, float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def to_json(self) -> dict:
        return {
            "n_checked": self.n_checked,
            "max_rel_error": self.max_rel_error,
            "max_abs_error": self.max_abs_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def gradient_check(
    model: ScorerModel,
    d: Document,
    gold: ActionSequence,
    tolerance: float = 1e-4,
    n_params: int = 100,
    step: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-6,
    prune_sentences: Optional[bool] = None,
) -> GradientReport:
    """Compare autograd gradients of the mean NLL with central differences.

    Coordinates are sampled among those with a non-zero analytic gradient
    (falling back to all coordinates). Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    if model.dtype != torch.float64:
        raise ScorerError("gradient checks need a float64 model")
    if model.n_parameters > 10_000:
        logger.warning("gradient check on a %d-parameter model", model.n_parameters)
    plan = model.teacher_plan(d, gold, prune_sentences)
    names = [n for n, _ in model.named_parameters()]
    params = list(model.parameters())
    grads = _analytic_gradient(model, plan)
    coords = [
        (k, i) for k, g in enumerate(grads) for i in torch.nonzero(g.reshape(-1)).reshape(-1).tolist()
    ]
    if len(coords) < n_params:
        coords = [(k, i) for k, p in enumerate(params) for i in range(p.numel())]
    rng = random.Random(seed)
    chosen = rng.sample(coords, min(n_params, len(coords)))
    report = GradientReport(0, 0.0, 0.0, tolerance)
    with torch.no_grad():
        for k, i in chosen:
            flat = params[k].view(-1)
            old = flat[i].item()
            flat[i] = old + step
            f_plus = _mean_nll(model, plan).item()
            flat[i] = old - step
            f_minus = _mean_nll(model, plan).item()
            flat[i] = old
            numeric = (f_plus - f_minus) / (2 * step)
            analytic = grads[k].view(-1)[i].item()
            abs_err = abs(analytic - numeric)
            rel = abs_err / max(abs(analytic), abs(numeric), floor)
            report.entries.append((names[k], i, analytic, numeric, rel))
            report.max_rel_error = max(report.max_rel_error, rel)
            report.max_abs_error = max(report.max_abs_error, abs_err)
            report.n_checked += 1
    return report


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_FORMAT = "spanaction-checkpoint/1"


def save_checkpoint(model: ScorerModel, path) -> None:
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "config": model.config.to_json(),
            "alphabet": list(model.alphabet.tokens),
            "alphabet_fingerprint": model.alphabet.fingerprint(),
            "schema": model.schema.to_json(),
            "schema_fingerprint": model.schema.fingerprint(),
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path, schema: Optional[TaskSchema] = None) -> ScorerModel:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    stored = TaskSchema.from_json(blob["schema"])
    if stored.fingerprint() != blob["schema_fingerprint"]:
        raise CheckpointError(f"{path}: schema fingerprint mismatch")
    if schema is not None and schema.fingerprint() != stored.fingerprint():
        raise CheckpointError(f"{path}: checkpoint was trained with a different schema")
    alphabet = Alphabet(blob["alphabet"])
    if alphabet.fingerprint() != blob["alphabet_fingerprint"]:
        raise CheckpointError(f"{path}: alphabet fingerprint mismatch")
    model = ScorerModel(ScorerConfig(**blob["config"]), alphabet, stored)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model
