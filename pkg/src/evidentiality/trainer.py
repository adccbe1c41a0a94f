"""Losses and the delayed curriculum: answerability first, pseudo evidence after epoch K."""

from __future__ import annotations

import copy
import csv
import logging
import math
import random
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import torch

from .corpus import Encoding, TruncatedAnswer, Vocabulary, tokenize
from .interpreter import EvidenceSet, ExtractionStats, InterpreterConfig, extract_all
from .qa_model import AnswerTarget, EncoderConfig, ModelOutput, QAModel, Reader, answer_target, collate, save_checkpoint
from .setgen import TrainingInstance, with_pseudo_evidence

logger = logging.getLogger(__name__)

REGULARIZERS = ("none", "uniform_kl", "bias_decorrelate")
LOG_EPS = math.log(1e-12)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 8
    epochs_total: int = 6
    K: int = 3
    lam: float = 0.01
    regularizer: str = "bias_decorrelate"
    seed: int = 0
    use_evidence_positive: bool = True
    bias_grad_to_encoder: bool = False
    budget: int = 128
    max_span_len: int = 30
    max_grad_norm: Optional[float] = 1.0
    interpreter: InterpreterConfig = InterpreterConfig()

    def __post_init__(self):
        if not 1 <= self.K < self.epochs_total:
            raise ValueError("need 1 <= K < epochs_total")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}")

    @property
    def extracts_evidence(self) -> bool:
        return self.use_evidence_positive and self.regularizer != "none"

    @property
    def ablation(self) -> str:
        if self.regularizer == "none":
            return "B"
        if self.regularizer == "uniform_kl":
            return "C"
        return "full" if self.use_evidence_positive else "A"


@dataclass
class LossBreakdown:
    L_A: float = 0.0
    R: float = 0.0
    R_hat: float = 0.0
    L_total: float = 0.0
    counts: Counter = field(default_factory=Counter)

    def add(self, other: "LossBreakdown") -> None:
        self.L_A += other.L_A
        self.R += other.R
        self.R_hat += other.R_hat
        self.L_total += other.L_total
        self.counts.update(other.counts)


def _safe_log(logp: torch.Tensor, counter: Optional[Counter] = None) -> torch.Tensor:
    # clamp only where the probability underflowed to exactly zero
    zero = logp.exp() == 0
    if counter is not None and bool(zero.any()):
        counter["clamped_log"] += int(zero.sum())
    return torch.where(zero, torch.full_like(logp, LOG_EPS), logp)


def span_ce(start_logp, end_logp, starts, ends, counter=None) -> torch.Tensor:
    rows = torch.arange(len(starts))
    return -(_safe_log(start_logp[rows, starts], counter) + _safe_log(end_logp[rows, ends], counter))


def answer_loss(out: ModelOutput, targets: Sequence[AnswerTarget], counter: Optional[Counter] = None) -> torch.Tensor:
    """Per-row L_A: span cross-entropy (span answers only) plus class cross-entropy."""
    rows = torch.arange(len(targets))
    cls = torch.tensor([t.class_index for t in targets])
    loss = -_safe_log(out.cls_logp[rows, cls], counter)
    span_rows = [i for i, t in enumerate(targets) if t.start is not None]
    if span_rows:
        idx = torch.tensor(span_rows)
        starts = torch.tensor([targets[i].start for i in span_rows])
        ends = torch.tensor([targets[i].end for i in span_rows])
        loss = loss.index_add(0, idx, span_ce(out.start_logp[idx], out.end_logp[idx], starts, ends, counter))
    return loss


def _kl(p_logp: torch.Tensor, q_logp: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Row-wise D_KL(p || q) over masked-in positions."""
    diff = (p_logp - q_logp).masked_fill(~mask, 0.0)
    return (p_logp.exp() * diff).sum(-1)


def uniform_kl_regularizer(out: ModelOutput, rows: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Per-row D_KL(Ps || U) + D_KL(Pe || U), U uniform over the valid passage positions."""
    mask = out.span_mask if rows is None else out.span_mask[rows]
    s = out.start_logp if rows is None else out.start_logp[rows]
    e = out.end_logp if rows is None else out.end_logp[rows]
    log_u = -torch.log(mask.sum(-1, keepdim=True).to(s.dtype)).expand_as(s)
    return _kl(s, log_u, mask) + _kl(e, log_u, mask)


def bias_kl(out: ModelOutput, rows: Optional[torch.Tensor] = None) -> torch.Tensor:
    """D_KL(P_hat_s || P_s) + D_KL(P_hat_e || P_e) with the biased distribution held constant."""
    sel = (lambda t: t) if rows is None else (lambda t: t[rows])
    mask = sel(out.span_mask)
    return (_kl(sel(out.bias_start_logp).detach(), sel(out.start_logp), mask)
            + _kl(sel(out.bias_end_logp).detach(), sel(out.end_logp), mask))


def bias_decorrelation_loss(out: ModelOutput, targets: Sequence[AnswerTarget], lam: float,
                            rows: Optional[torch.Tensor] = None, counter=None) -> torch.Tensor:
    """Per-row R_hat = CE(P_hat, A) - lam * KL(P_hat || P)."""
    rows = torch.arange(len(targets)) if rows is None else rows
    starts = torch.tensor([t.start for t in targets])
    ends = torch.tensor([t.end for t in targets])
    ce = span_ce(out.bias_start_logp[rows], out.bias_end_logp[rows], starts, ends, counter)
    return ce - lam * bias_kl(out, rows)


@dataclass
class EncodedInstance:
    instance: TrainingInstance
    encoding: Encoding
    target: AnswerTarget

    @property
    def tag(self) -> str:
        return self.instance.set_tag


def encode_instances(instances: Sequence[TrainingInstance], vocab: Vocabulary, budget: int,
                     counter: Optional[Counter] = None) -> list[EncodedInstance]:
    """Tokenize and resolve targets; instances with a truncated gold span are dropped and counted."""
    out = []
    for inst in instances:
        enc = tokenize(inst.question, inst.passage, vocab, budget)
        try:
            target = answer_target(inst, enc)
        except TruncatedAnswer:
            if counter is not None:
                counter["truncated_answer"] += 1
            continue
        out.append(EncodedInstance(inst, enc, target))
    return out


def total_loss(model: QAModel, batch: Sequence[EncodedInstance], epoch: int, cfg: TrainConfig):
    """Returns (differentiable L_total, LossBreakdown) for one batch at 1-based ``epoch``."""
    bd = LossBreakdown()
    use_e_plus = epoch > cfg.K  # delayed step u(t - K)
    rows_a, rows_en, rows_ep = [], [], []
    for i, item in enumerate(batch):
        tag = item.tag
        if tag in ("A+", "A-"):
            rows_a.append(i)
        elif tag == "E+":
            if use_e_plus:
                rows_ep.append(i)
            else:
                bd.counts["E+_excluded"] += 1
        elif tag == "E-":
            if cfg.regularizer == "none":
                bd.counts["E-_excluded"] += 1
            elif item.target.start is None:
                bd.counts["E-_no_span"] += 1
            else:
                rows_en.append(i)
    for i in rows_a + rows_en + rows_ep:
        bd.counts[batch[i].tag] += 1

    ids, attn, span = collate([b.encoding for b in batch])
    out = model(ids, attn, span, detach_bias=not cfg.bias_grad_to_encoder)
    total = out.cls_logp.new_zeros(())

    rows_la = rows_a + rows_ep
    if rows_la:
        idx = torch.tensor(rows_la)
        sub = _select(out, idx)
        la = answer_loss(sub, [batch[i].target for i in rows_la], bd.counts).sum()
        total = total + la
        bd.L_A = float(la.detach())
    if rows_en:
        idx = torch.tensor(rows_en)
        targets = [batch[i].target for i in rows_en]
        if cfg.regularizer == "bias_decorrelate":
            reg = bias_decorrelation_loss(out, targets, cfg.lam, idx, bd.counts).sum()
            bd.R_hat = float(reg.detach())
        else:
            reg = uniform_kl_regularizer(out, idx).sum()
            bd.R = float(reg.detach())
        total = total + reg
    bd.L_total = float(total.detach())
    return total, bd


def _select(out: ModelOutput, idx: torch.Tensor) -> ModelOutput:
    return ModelOutput(*(getattr(out, f)[idx] for f in
                         ("hidden", "start_logp", "end_logp", "bias_start_logp", "bias_end_logp",
                          "cls_logp", "span_mask")))


@torch.no_grad()
def mean_answer_loss(model: QAModel, items: Sequence[EncodedInstance], batch_size: int = 128) -> float:
    if not items:
        return float("nan")
    was = model.training
    model.eval()
    total = 0.0
    for i in range(0, len(items), batch_size):
        chunk = items[i:i + batch_size]
        out = model(*collate([c.encoding for c in chunk]))
        total += float(answer_loss(out, [c.target for c in chunk]).sum())
    model.train(was)
    return total / len(items)


@dataclass
class TrainResult:
    model: QAModel
    log: list[dict]
    evidence_sets: list[EvidenceSet]
    counts: Counter
    extraction: ExtractionStats


LOG_FIELDS = ("epoch", "ablation", "L_A", "R", "R_hat", "L_total", "n_A+", "n_A-", "n_E-", "n_E+", "dev_L_A")


def write_log(path, rows: Sequence[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in LOG_FIELDS})


def run_curriculum(
    instances: Sequence[TrainingInstance],
    vocab: Vocabulary,
    enc_cfg: EncoderConfig,
    cfg: TrainConfig,
    out_dir: Optional[Path] = None,
    dev_instances: Sequence[TrainingInstance] = (),
    on_epoch: Optional[Callable[[int, QAModel], None]] = None,
) -> TrainResult:
    """Train for ``epochs_total`` epochs; at the end of epoch K a frozen snapshot
    extracts pseudo evidence over all A+ instances, which join training from K+1."""
    counts: Counter = Counter()
    torch.manual_seed(cfg.seed)
    rng = random.Random(cfg.seed)
    model = QAModel(enc_cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)

    base = [i for i in instances if i.set_tag != "E+"]
    if cfg.regularizer == "none":
        base = [i for i in base if i.set_tag != "E-"]
    pool = encode_instances(base, vocab, cfg.budget, counts)
    dev_items = encode_instances([d for d in dev_instances if d.set_tag == "A+"], vocab, cfg.budget)
    e_plus: list[EncodedInstance] = []
    evidence_sets: list[EvidenceSet] = []
    extraction = ExtractionStats()

    log = [{"epoch": 0, "ablation": cfg.ablation, "dev_L_A": mean_answer_loss(model, dev_items)}]
    for epoch in range(1, cfg.epochs_total + 1):
        model.train()
        items = pool + (e_plus if epoch > cfg.K else [])
        order = list(range(len(items)))
        rng.shuffle(order)
        bd = LossBreakdown()
        for b in range(0, len(order), cfg.batch_size):
            batch = [items[k] for k in order[b:b + cfg.batch_size]]
            loss, part = total_loss(model, batch, epoch, cfg)
            opt.zero_grad()
            loss.backward()
            if cfg.max_grad_norm:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.max_grad_norm)
            opt.step()
            bd.add(part)
        row = {
            "epoch": epoch, "ablation": cfg.ablation, "L_A": bd.L_A, "R": bd.R, "R_hat": bd.R_hat,
            "L_total": bd.L_total, "n_A+": bd.counts["A+"], "n_A-": bd.counts["A-"],
            "n_E-": bd.counts["E-"], "n_E+": bd.counts["E+"], "dev_L_A": mean_answer_loss(model, dev_items),
        }
        log.append(row)
        logger.info("epoch %d: %s", epoch, row)
        counts.update({k: v for k, v in bd.counts.items() if k not in ("A+", "A-", "E-", "E+")})
        if out_dir is not None:
            save_checkpoint(Path(out_dir) / f"epoch_{epoch}.pt", model, vocab,
                            {"epoch": epoch, "ablation": cfg.ablation})
        if epoch == cfg.K and cfg.extracts_evidence:
            t0 = time.perf_counter()
            snapshot = copy.deepcopy(model).eval()
            reader = Reader(snapshot, vocab, cfg.budget, cfg.max_span_len)
            positives = [p.instance for p in pool if p.tag == "A+"]
            evidence_sets = extract_all(reader, positives, cfg.interpreter, extraction)
            counts["unlocatable_subpassages"] += reader.n_unlocatable
            by_qid = {p.qid: p for p in positives}
            derived = [with_pseudo_evidence(by_qid[es.qid], es.members) for es in evidence_sets]
            e_plus = encode_instances(derived, vocab, cfg.budget, counts)
            logger.info("extracted %d evidence sets in %.1fs", len(evidence_sets), time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(epoch, model)
    model.eval()
    return TrainResult(model, log, evidence_sets, counts, extraction)
