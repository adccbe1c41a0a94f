"""Answerability / evidentiality training sets built without evidence annotations."""

from __future__ import annotations

import itertools
import logging
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .corpus import (
    Answer,
    CharSpan,
    MultiHopExample,
    NotFound,
    Passage,
    Unit,
    answer_sentence,
    locate_answer,
    make_passage,
    paragraph_units,
)

logger = logging.getLogger(__name__)

ANSWERABLE, UNANSWERABLE = "answerable", "unanswerable"
EVI_POSITIVE, EVI_NEGATIVE, EVI_UNKNOWN = "positive", "negative", "unknown"
NEG_TYPES = ("answer_only", "answer_plus_irrelevant", "partial_plus_irrelevant")
CLASS_LABELS = ("span", "yes", "no", "none")
SET_TAGS = ("A+", "A-", "E-", "E+")


@dataclass(frozen=True)
class TrainingInstance:
    qid: str
    question: str
    answer: Answer
    passage: Passage
    answerability: str
    evidentiality: str = EVI_UNKNOWN
    neg_type: Optional[str] = None
    answer_span: Optional[CharSpan] = None
    class_label: str = "none"
    anchor: Optional[Unit] = None  # answer sentence S*, when identifiable

    def __post_init__(self):
        if self.answerability == UNANSWERABLE and (self.class_label != "none" or self.answer_span):
            raise ValueError(f"{self.qid}: unanswerable instances carry no answer target")
        if self.evidentiality == EVI_POSITIVE and self.answerability != ANSWERABLE:
            raise ValueError(f"{self.qid}: evidence-positive must be answerable")
        if self.class_label == "span" and self.answer_span is None:
            raise ValueError(f"{self.qid}: span instance without a span")

    @property
    def set_tag(self) -> str:
        if self.answerability == UNANSWERABLE:
            return "A-"
        return {EVI_NEGATIVE: "E-", EVI_POSITIVE: "E+"}.get(self.evidentiality, "A+")

    @property
    def class_index(self) -> int:
        return CLASS_LABELS.index(self.class_label)

    def to_dict(self) -> dict:
        return {
            "set": self.set_tag,
            "qid": self.qid,
            "question": self.question,
            "answer": {"text": self.answer.text, "type": self.answer.type},
            "units": [list(u) for u in self.passage.units],
            "sentences": [self.passage.sentence(i) for i in range(len(self.passage))],
            "answerability": self.answerability,
            "evidentiality": self.evidentiality,
            "neg_type": self.neg_type,
            "answer_span": None if self.answer_span is None else list(self.answer_span),
            "class_label": self.class_label,
            "anchor": None if self.anchor is None else list(self.anchor),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingInstance":
        units = [tuple(u) for u in d["units"]]
        passage = passage_from_sentences(units, d["sentences"])
        return cls(
            qid=d["qid"],
            question=d["question"],
            answer=Answer(d["answer"]["text"], d["answer"]["type"]),
            passage=passage,
            answerability=d["answerability"],
            evidentiality=d["evidentiality"],
            neg_type=d["neg_type"],
            answer_span=None if d["answer_span"] is None else tuple(d["answer_span"]),
            class_label=d["class_label"],
            anchor=None if d["anchor"] is None else tuple(d["anchor"]),
        )


def passage_from_sentences(units: Iterable[Unit], texts: Iterable[str]) -> Passage:
    units, texts = tuple(units), list(texts)
    bounds = [0]
    for t in texts:
        bounds.append(bounds[-1] + len(t) + 1)
    return Passage(units, " ".join(texts), tuple(bounds))


def sub_passage(passage: Passage, units: Iterable[Unit]) -> Passage:
    """Restrict ``passage`` to ``units``, keeping the original sentence order."""
    keep = set(units)
    idx = [i for i, u in enumerate(passage.units) if u in keep]
    return passage_from_sentences([passage.units[i] for i in idx], [passage.sentence(i) for i in idx])


def answerable_instance(qid, question, answer: Answer, passage: Passage, anchor: Optional[Unit],
                        evidentiality: str = EVI_UNKNOWN, neg_type: Optional[str] = None) -> TrainingInstance:
    """Answerable instance with its span located (anchor first); raises NotFound."""
    span = locate_answer(passage, answer, anchor) if answer.type == "span" else None
    return TrainingInstance(
        qid=qid,
        question=question,
        answer=answer,
        passage=passage,
        answerability=ANSWERABLE,
        evidentiality=evidentiality,
        neg_type=neg_type,
        answer_span=span,
        class_label=answer.type,
        anchor=anchor,
    )


def _unanswerable(ex: MultiHopExample, passage: Passage) -> TrainingInstance:
    return TrainingInstance(ex.qid, ex.question, ex.answer, passage, UNANSWERABLE, class_label="none")


def example_rng(seed: int, qid: str) -> random.Random:
    return random.Random(f"{seed}:{qid}")


def build_answer_sets(ex: MultiHopExample, k_neg: int = 2, rng: Optional[random.Random] = None):
    """One A+ instance (the positive pair) and ``k_neg`` A- instances (negative pairs)."""
    rng = rng or example_rng(0, ex.qid)
    pos = sorted(ex.positive_pids)
    if len(pos) != 2:
        raise ValueError(f"{ex.qid}: expected 2 positive paragraphs")
    passage = make_passage(ex, paragraph_units(ex, pos))
    positive = [answerable_instance(ex.qid, ex.question, ex.answer, passage, answer_sentence(ex))]

    combos = list(itertools.combinations(sorted(ex.negative_pids), 2))
    if k_neg > len(combos):
        logger.warning("%s: k_neg=%d capped at %d", ex.qid, k_neg, len(combos))
        k_neg = len(combos)
    negatives = [_unanswerable(ex, make_passage(ex, paragraph_units(ex, pair)))
                 for pair in rng.sample(combos, k_neg)]
    return positive, negatives


@dataclass
class SetStats:
    counts: Counter = field(default_factory=Counter)
    skipped: Counter = field(default_factory=Counter)


def build_evidence_negatives(ex: MultiHopExample, rng: Optional[random.Random] = None,
                             stats: Optional[SetStats] = None) -> list[TrainingInstance]:
    """The three evidence-negative recipes built around the answer sentence S*.

    Without an identifiable S* (yes/no questions) only the partial-evidence
    recipe is emitted, using the lowest-pid positive paragraph.
    """
    rng = rng or example_rng(0, ex.qid)
    stats = stats if stats is not None else SetStats()
    star = answer_sentence(ex)
    negatives = sorted(ex.negative_pids)
    out = []
    if star is not None:
        out.append(answerable_instance(ex.qid, ex.question, ex.answer, make_passage(ex, [star]), star,
                                       EVI_NEGATIVE, NEG_TYPES[0]))
        d = rng.choice(negatives)
        units = [star] + paragraph_units(ex, [d])
        out.append(answerable_instance(ex.qid, ex.question, ex.answer, make_passage(ex, units), star,
                                       EVI_NEGATIVE, NEG_TYPES[1]))
        d1 = star[0]
    else:
        stats.skipped["no_answer_sentence"] += 2
        d1 = min(ex.positive_pids)
    d2 = rng.choice(negatives)
    units = paragraph_units(ex, [d1, d2])
    out.append(answerable_instance(ex.qid, ex.question, ex.answer, make_passage(ex, units), star,
                                   EVI_NEGATIVE, NEG_TYPES[2]))
    return out


def build_single_paragraph_sets(ex: MultiHopExample, k_neg: int = 2,
                                rng: Optional[random.Random] = None) -> list[TrainingInstance]:
    """Single-paragraph baseline regime: answer-bearing paragraphs vs sampled others."""
    rng = rng or example_rng(0, ex.qid)
    out, others = [], []
    for p in ex.paragraphs:
        passage = make_passage(ex, p.units)
        if ex.answer.type == "span":
            try:
                out.append(answerable_instance(ex.qid, ex.question, ex.answer, passage, None))
                continue
            except NotFound:
                pass
        elif p.pid in ex.positive_pids:
            out.append(answerable_instance(ex.qid, ex.question, ex.answer, passage, None))
            continue
        others.append(passage)
    out += [_unanswerable(ex, p) for p in rng.sample(others, min(k_neg, len(others)))]
    return out


def build_training_sets(examples: Iterable[MultiHopExample], k_neg: int = 2, seed: int = 0,
                        evidence_negatives: bool = True,
                        stats: Optional[SetStats] = None) -> list[TrainingInstance]:
    stats = stats if stats is not None else SetStats()
    out = []
    for ex in examples:
        rng = example_rng(seed, ex.qid)
        pos, neg = build_answer_sets(ex, k_neg, rng)
        batch = pos + neg
        if evidence_negatives:
            batch += build_evidence_negatives(ex, rng, stats)
        for inst in batch:
            stats.counts[inst.set_tag] += 1
        out += batch
    return out


def with_pseudo_evidence(instance: TrainingInstance, members: Iterable[Unit]) -> TrainingInstance:
    """E+ instance: the A+ passage restricted to the pseudo evidence ``members``."""
    passage = sub_passage(instance.passage, members)
    span = None
    if instance.answer.type == "span":
        span = locate_answer(passage, instance.answer, instance.anchor)
    return replace(instance, passage=passage, evidentiality=EVI_POSITIVE, answer_span=span, neg_type=None)


@dataclass
class LabelAudit:
    n_checked: int = 0
    n_violations: int = 0
    violations: list[tuple[str, str]] = field(default_factory=list)

    def flag(self, qid: str, rule: str) -> None:
        self.n_violations += 1
        self.violations.append((qid, rule))


def audit_labels(instances: Iterable[TrainingInstance], gt: MultiHopExample,
                 audit: Optional[LabelAudit] = None) -> LabelAudit:
    """Check set labels against the known gold evidence of ``gt``."""
    audit = audit if audit is not None else LabelAudit()
    gold = set(gt.gold_evidence or ())
    is_span = gt.answer.type == "span"
    for inst in instances:
        units = set(inst.passage.units)
        has_answer = is_span and gt.answer.text in inst.passage.resolved_text
        tag = inst.set_tag
        if tag not in ("A+", "A-", "E-"):
            continue
        audit.n_checked += 1
        if tag == "E-":
            if is_span and not has_answer:
                audit.flag(inst.qid, "E-:answer_missing")
            if gold <= units:
                audit.flag(inst.qid, "E-:full_evidence")
        elif tag == "A-":
            if has_answer:
                audit.flag(inst.qid, "A-:answer_present")
            if gold & units:
                audit.flag(inst.qid, "A-:evidence_present")
        elif tag == "A+":
            if not gold <= units:
                audit.flag(inst.qid, "A+:evidence_missing")
            if is_span and not has_answer:
                audit.flag(inst.qid, "A+:answer_missing")
    return audit
