"""Span-extraction QA model with a target head f, a biased head g and a class head."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import CharSpan, Encoding, NotFound, Passage, TruncatedAnswer, Unit, Vocabulary, tokenize
from .setgen import CLASS_LABELS, TrainingInstance, sub_passage
from .corpus import locate_answer

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "evidentiality-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    layers: int = 2
    hidden_dim: int = 64
    heads: int = 4
    max_len: int = 128
    ffn_dim: int = 128
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden_dim % self.heads:
            raise ValueError("hidden_dim must be divisible by heads")


class Encoder(nn.Module):
    """Token + learned position embeddings followed by pre-norm transformer layers."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.tok = nn.Embedding(cfg.vocab_size, cfg.hidden_dim, padding_idx=0)
        self.pos = nn.Embedding(cfg.max_len, cfg.hidden_dim)
        layer = nn.TransformerEncoderLayer(
            cfg.hidden_dim, cfg.heads, cfg.ffn_dim, cfg.dropout, batch_first=True, norm_first=True
        )
        self.layers = nn.TransformerEncoder(layer, cfg.layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(cfg.hidden_dim)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        if ids.shape[1] > self.cfg.max_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_len {self.cfg.max_len}")
        positions = torch.arange(ids.shape[1], device=ids.device)
        x = self.drop(self.tok(ids) + self.pos(positions)[None])
        x = self.layers(x, src_key_padding_mask=~attention_mask)
        return self.norm(x)


def masked_log_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    # finite fill value keeps 0 * logp free of NaNs; exp() still underflows to exactly 0
    logits = logits.masked_fill(~mask, torch.finfo(logits.dtype).min)
    return F.log_softmax(logits, dim=-1)


@dataclass
class ModelOutput:
    hidden: torch.Tensor  # (B, n, d)
    start_logp: torch.Tensor  # target head, (B, n)
    end_logp: torch.Tensor
    bias_start_logp: torch.Tensor  # biased head
    bias_end_logp: torch.Tensor
    cls_logp: torch.Tensor  # (B, 4): span, yes, no, none
    span_mask: torch.Tensor  # (B, n) bool

    ps = property(lambda self: self.start_logp.exp())
    pe = property(lambda self: self.end_logp.exp())
    ps_hat = property(lambda self: self.bias_start_logp.exp())
    pe_hat = property(lambda self: self.bias_end_logp.exp())
    pcls = property(lambda self: self.cls_logp.exp())


class QAModel(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.hidden_dim
        self.encoder = Encoder(cfg)
        self.f_start, self.f_end = nn.Linear(d, 1), nn.Linear(d, 1)
        self.g_start, self.g_end = nn.Linear(d, 1), nn.Linear(d, 1)
        self.cls_head = nn.Linear(d, len(CLASS_LABELS))

    def head_parameters(self, head: str) -> list[nn.Parameter]:
        mods = {
            "target": (self.f_start, self.f_end),
            "biased": (self.g_start, self.g_end),
            "class": (self.cls_head,),
            "encoder": (self.encoder,),
        }[head]
        return [p for m in mods for p in m.parameters()]

    def forward(self, ids, attention_mask, span_mask, detach_bias: bool = True) -> ModelOutput:
        h = self.encoder(ids, attention_mask)
        # the biased head reads a detached copy so its CE never reaches the encoder
        hb = h.detach() if detach_bias else h
        return ModelOutput(
            hidden=h,
            start_logp=masked_log_softmax(self.f_start(h).squeeze(-1), span_mask),
            end_logp=masked_log_softmax(self.f_end(h).squeeze(-1), span_mask),
            bias_start_logp=masked_log_softmax(self.g_start(hb).squeeze(-1), span_mask),
            bias_end_logp=masked_log_softmax(self.g_end(hb).squeeze(-1), span_mask),
            cls_logp=F.log_softmax(self.cls_head(h[:, 0]), dim=-1),
            span_mask=span_mask,
        )


def collate(encodings: Sequence[Encoding], device=None):
    """Pad a list of encodings; returns ids, attention mask and passage-span mask."""
    n = max(len(e) for e in encodings)
    ids = torch.zeros(len(encodings), n, dtype=torch.long)
    attn = torch.zeros(len(encodings), n, dtype=torch.bool)
    span = torch.zeros(len(encodings), n, dtype=torch.bool)
    for i, e in enumerate(encodings):
        ids[i, : len(e)] = torch.tensor(e.ids)
        attn[i, : len(e)] = True
        if e.passage_positions:
            span[i, e.passage_positions] = True
        else:
            span[i, e.eos_index] = True  # empty passage: EOS is the only admissible position
    if device is not None:
        ids, attn, span = ids.to(device), attn.to(device), span.to(device)
    return ids, attn, span


@dataclass(frozen=True)
class AnswerTarget:
    class_index: int
    start: Optional[int] = None  # token indices, span class only
    end: Optional[int] = None


def answer_target(instance: TrainingInstance, encoding: Encoding) -> AnswerTarget:
    """Token-level target; raises TruncatedAnswer when the span was cut off."""
    if instance.class_label == "span":
        s, e = encoding.token_span(instance.answer_span)
        return AnswerTarget(0, s, e)
    return AnswerTarget(instance.class_index)


def answer_confidence(out: ModelOutput, row: int, target: AnswerTarget, head: str = "target") -> float:
    """P(A|Q,D): product of gold start/end probabilities, or the yes/no class probability."""
    if target.start is None:
        return float(out.pcls[row, target.class_index])
    if head == "target":
        ps, pe = out.start_logp, out.end_logp
    elif head == "biased":
        ps, pe = out.bias_start_logp, out.bias_end_logp
    else:
        raise ValueError(f"unknown head {head!r}")
    return float(torch.exp(ps[row, target.start] + pe[row, target.end]))


@dataclass
class Prediction:
    answer_text: str
    cls: str
    confidence: float
    span: Optional[CharSpan] = None
    token_span: Optional[tuple[int, int]] = None
    units: tuple[Unit, ...] = field(default=())

    def __post_init__(self):
        if (self.cls == "span") != (self.token_span is not None):
            raise ValueError("span predictions carry a span, others do not")


def best_span(ps: np.ndarray, pe: np.ndarray, max_span_len: int) -> tuple[int, int, float]:
    """argmax of ps[s] * pe[e] over s <= e <= s + max_span_len; ties -> smallest (s, e)."""
    scores = np.outer(ps, pe)
    n = len(ps)
    i, j = np.indices((n, n))
    scores = np.where((j >= i) & (j <= i + max_span_len), scores, -1.0)
    flat = int(np.argmax(scores))  # first maximum in row-major order
    s, e = divmod(flat, n)
    return s, e, float(scores[s, e])


def decode(out: ModelOutput, row: int = 0, max_span_len: int = 30,
           encoding: Optional[Encoding] = None, passage: Optional[Passage] = None) -> Prediction:
    pcls = out.pcls[row].detach().cpu().numpy()
    cls = CLASS_LABELS[int(np.argmax(pcls))]
    if cls != "span":
        text = "" if cls == "none" else cls
        return Prediction(text, cls, float(pcls.max()))
    ps = out.ps[row].detach().cpu().double().numpy()
    pe = out.pe[row].detach().cpu().double().numpy()
    s, e, conf = best_span(ps, pe, max_span_len)
    span, text = None, ""
    if encoding is not None and passage is not None and s in encoding.passage_positions \
            and e in encoding.passage_positions:
        span = encoding.char_span(s, e)
        text = passage.resolved_text[span[0]:span[1]]
    return Prediction(text, "span", conf, span=span, token_span=(s, e),
                      units=passage.units if passage is not None else ())


class Reader:
    """Read-only inference over a model snapshot: batching, confidences, predictions."""

    def __init__(self, model: QAModel, vocab: Vocabulary, budget: int = 128, max_span_len: int = 30,
                 batch_size: int = 128, head: str = "target"):
        self.model = model
        self.vocab = vocab
        self.budget = min(budget, model.cfg.max_len)
        self.max_span_len = max_span_len
        self.batch_size = batch_size
        self.head = head
        self.n_unlocatable = 0

    def encode(self, question: str, passage: Passage) -> Encoding:
        return tokenize(question, passage, self.vocab, self.budget)

    @torch.no_grad()
    def run(self, encodings: Sequence[Encoding]):
        """Yield (chunk_start, ModelOutput) over chunks of ``encodings``."""
        was_training = self.model.training
        self.model.eval()
        try:
            for i in range(0, len(encodings), self.batch_size):
                chunk = encodings[i:i + self.batch_size]
                yield i, self.model(*collate(chunk))
        finally:
            self.model.train(was_training)

    def confidences(self, instance: TrainingInstance, unit_sets: Sequence[Sequence[Unit]]) -> list[float]:
        """P(A|Q, D') for each sub-passage D' of ``instance.passage``.

        A sub-passage whose answer cannot be located (or was truncated) scores 0.
        """
        results = [0.0] * len(unit_sets)
        encs, targets, rows = [], [], []
        for k, units in enumerate(unit_sets):
            passage = sub_passage(instance.passage, units)
            enc = self.encode(instance.question, passage)
            if instance.class_label == "span":
                try:
                    span = locate_answer(passage, instance.answer, instance.anchor)
                    s, e = enc.token_span(span)
                except (NotFound, TruncatedAnswer):
                    self.n_unlocatable += 1
                    continue
                target = AnswerTarget(0, s, e)
            else:
                target = AnswerTarget(instance.class_index)
            encs.append(enc)
            targets.append(target)
            rows.append(k)
        for start, out in self.run(encs):
            for r in range(out.cls_logp.shape[0]):
                results[rows[start + r]] = answer_confidence(out, r, targets[start + r], self.head)
        return results

    def class_probs(self, question: str, passages: Sequence[Passage]) -> np.ndarray:
        encs = [self.encode(question, p) for p in passages]
        probs = np.zeros((len(encs), len(CLASS_LABELS)))
        for start, out in self.run(encs):
            probs[start:start + out.cls_logp.shape[0]] = out.pcls.double().numpy()
        return probs

    def predict_passages(self, question: str, passages: Sequence[Passage]) -> list[Prediction]:
        encs = [self.encode(question, p) for p in passages]
        preds = []
        for start, out in self.run(encs):
            for r in range(out.cls_logp.shape[0]):
                k = start + r
                preds.append(decode(out, r, self.max_span_len, encs[k], passages[k]))
        return preds

    def predict_passage(self, question: str, passage: Passage) -> Prediction:
        return self.predict_passages(question, [passage])[0]

    def answer(self, example, passage: Passage) -> str:
        return self.predict_passage(example.question, passage).answer_text


def save_checkpoint(path, model: nn.Module, vocab: Vocabulary, meta: Optional[dict] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "kind": type(model).__name__,
            "config": asdict(model.cfg),
            "vocab": list(vocab.tokens),
            "state": model.state_dict(),
            "meta": meta or {},
        },
        path,
    )


def load_checkpoint(path, model_cls=None):
    """Returns (model, vocab, meta); the model is in eval mode."""
    blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a model checkpoint")
    if blob["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob['version']}")
    if model_cls is None:
        from .inference import SelectorModel

        model_cls = {"QAModel": QAModel, "SelectorModel": SelectorModel}[blob["kind"]]
    model = model_cls(EncoderConfig(**blob["config"]))
    model.load_state_dict(blob["state"])
    model.eval()
    return model, Vocabulary(blob["vocab"]), blob["meta"]
