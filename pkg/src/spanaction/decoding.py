"""Greedy constrained decoding over the dynamic candidate sets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .codec import ActionSequence, PrefixState, delinearize
from .schema import TaskSchema
from .scorer import EOS, LBR, PAD, RBR, ScorerModel, step_distribution
from .structures import Document, TaskStructure


@dataclass(frozen=True)
class DecodeResult:
    sequence: ActionSequence
    probabilities: tuple[float, ...]
    n_decisions: int

    @property
    def terminal(self) -> bool:
        return self.sequence.terminal


class DecodeState:
    """Per-document decoding state: the action prefix plus cached decoder states."""

    def __init__(self, model: ScorerModel, doc: Document, schema: TaskSchema, prune_sentences, max_steps: int):
        self.model = model
        self.doc = doc
        self.prefix = PrefixState(doc, schema, prune_sentences)
        self.enc_ext = model.encode_extended(doc)
        self.H = torch.empty(max_steps, model.config.dec_width, dtype=model.dtype)
        self.hidden = None
        self.prev = PAD

    @property
    def cursor(self) -> int:
        return self.prefix.cursor

    @property
    def terminal(self) -> bool:
        return self.prefix.terminal

    def advance_decoder(self) -> torch.Tensor:
        t = self.prefix.n_decisions
        x = self.model.decoder_inputs(
            self.enc_ext, torch.tensor([self.prev]), torch.tensor([self.prefix.cursor])
        )
        out, self.hidden = self.model.decoder(x[None], self.hidden)
        self.H[t] = out[0, 0]
        return self.H[: t + 1]

    def apply(self, choice) -> None:
        cursor = self.prefix.cursor
        self.prefix.step(choice)
        if choice.is_copy:
            self.prev = self.model.alphabet.index(self.doc.tokens[cursor]) if cursor < len(self.doc) else EOS
        else:
            self.prev = LBR if choice.is_left else RBR


def greedy_decode(
    model: ScorerModel,
    d: Document,
    schema: Optional[TaskSchema] = None,
    prune_sentences: Optional[bool] = None,
    max_steps: Optional[int] = None,
) -> DecodeResult:
    """Argmax decoding; ties go to the earliest candidate (copy first).

    Stops after copying the end sentinel or after ``max_steps`` decisions,
    in which case the returned sequence is flagged non-terminal.
    """
    schema = schema or model.schema
    if max_steps is None:
        max_steps = 4 * (len(d) + 1)
    if max_steps < len(d) + 1:
        raise ValueError(f"max_steps={max_steps} is below |D| + 1 = {len(d) + 1}")
    probs = []
    with torch.no_grad():
        state = DecodeState(model, d, schema, prune_sentences, max_steps)
        while not state.terminal and state.prefix.n_decisions < max_steps:
            H = state.advance_decoder()
            candidates = state.prefix.candidates()
            p = step_distribution(model.score_step(H, state.prefix, candidates).tolist())
            k = int(np.argmax(p))
            probs.append(float(p[k]))
            state.apply(candidates[k])
    return DecodeResult(state.prefix.sequence(), tuple(probs), state.prefix.n_decisions)


def predict_structure(
    model: ScorerModel,
    d: Document,
    schema: Optional[TaskSchema] = None,
    prune_sentences: Optional[bool] = None,
    max_steps: Optional[int] = None,
) -> TaskStructure:
    schema = schema or model.schema
    result = greedy_decode(model, d, schema, prune_sentences, max_steps)
    return delinearize(result.sequence, d, schema)
