"""Passage choice at test time: best single paragraph, best paragraph pair, or top-k selected sentences."""

from __future__ import annotations

import itertools
import logging
import random
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import MultiHopExample, Passage, Vocabulary, make_passage, paragraph_units, tokenize, write_jsonl
from .interpreter import EvidenceSet
from .qa_model import Encoder, EncoderConfig, Prediction, Reader, collate
from .setgen import TrainingInstance

logger = logging.getLogger(__name__)

MODES = ("single_paragraph", "paired_paragraph", "selected_evidences")


class SelectorModel(nn.Module):
    """Separate encoder with a binary head read at the ``[S]`` marker closing each sentence."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.f_evi = nn.Linear(cfg.hidden_dim, 1)

    def forward(self, ids, attention_mask) -> torch.Tensor:
        return self.f_evi(self.encoder(ids, attention_mask)).squeeze(-1)  # (B, n) logits


@dataclass(frozen=True)
class SelectorConfig:
    lr: float = 1e-3
    epochs: int = 3
    batch_size: int = 8
    seed: int = 0
    budget: int = 128


class SentenceSelector:
    def __init__(self, model: SelectorModel, vocab: Vocabulary, budget: int = 128, batch_size: int = 128):
        self.model = model
        self.vocab = vocab
        self.budget = min(budget, model.cfg.max_len)
        self.batch_size = batch_size

    @torch.no_grad()
    def score_passages(self, question: str, passages: Sequence[Passage]) -> list[list[float]]:
        """One score in [0, 1] per sentence; sentences cut by the budget score 0."""
        self.model.eval()
        encs = [tokenize(question, p, self.vocab, self.budget, markers=True) for p in passages]
        out = []
        for i in range(0, len(encs), self.batch_size):
            chunk = encs[i:i + self.batch_size]
            ids, attn, _ = collate(chunk)
            probs = torch.sigmoid(self.model(ids, attn))
            for r, enc in enumerate(chunk):
                scores = [float(probs[r, m]) for m in enc.marker_positions]
                out.append(scores + [0.0] * (len(passages[i + r]) - len(scores)))
        return out

    def score_sentences(self, question: str, passage: Passage) -> list[float]:
        return self.score_passages(question, [passage])[0]


def train_selector(instances: Sequence[TrainingInstance], evidence: Iterable[EvidenceSet], vocab: Vocabulary,
                   enc_cfg: EncoderConfig, cfg: SelectorConfig = SelectorConfig(),
                   counts: Optional[Counter] = None) -> SentenceSelector:
    """Per-sentence binary cross-entropy on pseudo labels: E+ members are 1, the rest of the passage 0."""
    counts = counts if counts is not None else Counter()
    members = {es.qid: set(es.members) for es in evidence}
    data = []
    for inst in instances:
        if inst.set_tag != "A+" or inst.qid not in members:
            continue
        enc = tokenize(inst.question, inst.passage, vocab, cfg.budget, markers=True)
        labels = [1.0 if u in members[inst.qid] else 0.0 for u in inst.passage.units]
        counts["sentences_beyond_budget"] += len(labels) - len(enc.marker_positions)
        data.append((enc, labels[: len(enc.marker_positions)]))

    torch.manual_seed(cfg.seed)
    rng = random.Random(cfg.seed)
    model = SelectorModel(enc_cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    model.train()
    for _ in range(cfg.epochs):
        order = list(range(len(data)))
        rng.shuffle(order)
        for b in range(0, len(order), cfg.batch_size):
            batch = [data[k] for k in order[b:b + cfg.batch_size]]
            ids, attn, _ = collate([e for e, _ in batch])
            logits = model(ids, attn)
            rows = torch.tensor([r for r, (e, _) in enumerate(batch) for _ in e.marker_positions], dtype=torch.long)
            cols = torch.tensor([m for e, _ in batch for m in e.marker_positions], dtype=torch.long)
            target = torch.tensor([y for _, ys in batch for y in ys])
            loss = F.binary_cross_entropy_with_logits(logits[rows, cols], target, reduction="sum")
            opt.zero_grad()
            loss.backward()
            opt.step()
    model.eval()
    return SentenceSelector(model, vocab, cfg.budget)


def candidate_pairs(example: MultiHopExample) -> list[tuple[int, int]]:
    return list(itertools.combinations(range(len(example.paragraphs)), 2))


def _argmax_first(values: Sequence[float]) -> int:
    return int(np.argmax(np.asarray(values)))  # first maximum


def select_pair(reader: Reader, example: MultiHopExample) -> Passage:
    """Paragraph pair with the highest answerability 1 - p_none; ties -> smallest (i, j)."""
    pairs = candidate_pairs(example)
    passages = [make_passage(example, paragraph_units(example, pair)) for pair in pairs]
    probs = reader.class_probs(example.question, passages)
    return passages[_argmax_first(1.0 - probs[:, 3])]


def select_single(reader: Reader, example: MultiHopExample) -> Passage:
    passages = [make_passage(example, p.units) for p in example.paragraphs]
    probs = reader.class_probs(example.question, passages)
    return passages[_argmax_first(1.0 - probs[:, 3])]


def select_evidences(selector: SentenceSelector, example: MultiHopExample, k: int = 5) -> Passage:
    """Global top-k sentences (each paragraph scored on its own), reassembled in document order."""
    passages = [make_passage(example, p.units) for p in example.paragraphs]
    scored = []
    for passage, scores in zip(passages, selector.score_passages(example.question, passages)):
        scored += [(-s, u) for s, u in zip(scores, passage.units)]
    top = sorted(scored)[:k]  # ties -> smaller (pid, sid)
    return make_passage(example, sorted(u for _, u in top))


def passage_for(reader: Reader, example: MultiHopExample, mode: str,
                selector: Optional[SentenceSelector] = None, k: int = 5) -> Passage:
    if mode == "single_paragraph":
        return select_single(reader, example)
    if mode == "paired_paragraph":
        return select_pair(reader, example)
    if mode == "selected_evidences":
        if selector is None:
            raise ValueError("selected_evidences mode needs a trained selector")
        return select_evidences(selector, example, k)
    raise ValueError(f"mode must be one of {MODES}")


def predict(reader: Reader, example: MultiHopExample, mode: str,
            selector: Optional[SentenceSelector] = None, k: int = 5) -> Prediction:
    passage = passage_for(reader, example, mode, selector, k)
    return reader.predict_passage(example.question, passage)


def prediction_record(example: MultiHopExample, pred: Prediction, mode: str) -> dict:
    return {
        "qid": example.qid,
        "answer_text": pred.answer_text,
        "class": pred.cls,
        "confidence": round(pred.confidence, 8),
        "mode": mode,
        "selected_units": [list(u) for u in pred.units],
    }


def predict_all(reader: Reader, examples: Sequence[MultiHopExample], mode: str,
                selector: Optional[SentenceSelector] = None, k: int = 5, path=None) -> list[dict]:
    records = [prediction_record(ex, predict(reader, ex, mode, selector, k), mode) for ex in examples]
    if path is not None:
        write_jsonl(path, records)
    return records
