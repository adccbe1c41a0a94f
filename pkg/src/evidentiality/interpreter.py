"""Pseudo evidence extraction by greedy counterfactual saliency.

A *scorer* is anything with ``confidences(instance, unit_sets) -> list[float]``
returning P(A|Q, D') for sub-passages D' of ``instance.passage`` (see
``qa_model.Reader``). Sub-passages always keep the original sentence order.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .corpus import Unit, read_jsonl, write_jsonl
from .setgen import TrainingInstance

logger = logging.getLogger(__name__)

STRATEGIES = ("combined", "accumulative")
MAX_BRUTE_FORCE_SENTENCES = 8


@dataclass(frozen=True)
class InterpreterConfig:
    strategy: str = "combined"
    T: int = 5

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.T < 1:
            raise ValueError("T must be >= 1")


@dataclass
class EvidenceSet:
    qid: str
    members: list[Unit]
    scores: list[float] = field(default_factory=list)
    stopped_by: str = "max_steps"  # negative_gain | max_steps | exhausted

    def to_dict(self) -> dict:
        return {"qid": self.qid, "members": [list(u) for u in self.members],
                "scores": self.scores, "stopped_by": self.stopped_by}

    @classmethod
    def from_dict(cls, d: dict) -> "EvidenceSet":
        return cls(d["qid"], [tuple(u) for u in d["members"]], list(d["scores"]), d["stopped_by"])


def step_scores(scorer, instance: TrainingInstance, e_prev: Iterable[Unit],
                strategy: str = "combined") -> dict[Unit, float]:
    """Saliency of every sentence not yet in ``e_prev``.

    combined:     P(A|Q, S_i + E) - P(A|Q, D minus (S_i + E))
    accumulative: P(A|Q, S_i + E) - P(A|Q, E)
    """
    e_prev = set(e_prev)
    units = list(instance.passage.units)
    candidates = [u for u in units if u not in e_prev]
    if not candidates:
        return {}
    if strategy == "combined":
        sets = []
        for u in candidates:
            keep = e_prev | {u}
            sets.append([v for v in units if v in keep])
            sets.append([v for v in units if v not in keep])
        conf = scorer.confidences(instance, sets)
        return {u: conf[2 * k] - conf[2 * k + 1] for k, u in enumerate(candidates)}
    if strategy == "accumulative":
        sets = [[v for v in units if v in e_prev]]
        sets += [[v for v in units if v in e_prev or v == u] for u in candidates]
        conf = scorer.confidences(instance, sets)
        return {u: conf[k + 1] - conf[0] for k, u in enumerate(candidates)}
    raise ValueError(f"unknown strategy {strategy!r}")


def _argmax(scores: dict[Unit, float]) -> tuple[Unit, float]:
    # ties -> smallest (pid, sid)
    return max(sorted(scores.items()), key=lambda kv: kv[1])


def extract(scorer, instance: TrainingInstance, cfg: InterpreterConfig = InterpreterConfig()) -> EvidenceSet:
    """Greedy growth from {S*}; stop when the best gain is negative or T sentences were added."""
    if instance.anchor is None:
        raise ValueError(f"{instance.qid}: no answer sentence to start from")
    members = [instance.anchor]
    scores: list[float] = []
    while True:
        if len(members) == cfg.T + 1:
            stopped = "max_steps"
            break
        step = step_scores(scorer, instance, members, cfg.strategy)
        if not step:
            stopped = "exhausted"
            break
        best, gain = _argmax(step)
        if gain < 0:
            stopped = "negative_gain"
            break
        members.append(best)
        scores.append(gain)
    return EvidenceSet(instance.qid, members, scores, stopped)


def brute_force_extract(scorer, instance: TrainingInstance,
                        cfg: InterpreterConfig = InterpreterConfig()) -> EvidenceSet:
    """Test oracle: tabulate P(A|Q, subset) for every subset, then replay the greedy rule."""
    units = list(instance.passage.units)
    if len(units) > MAX_BRUTE_FORCE_SENTENCES:
        raise ValueError(f"brute force needs <= {MAX_BRUTE_FORCE_SENTENCES} sentences, got {len(units)}")
    if instance.anchor is None:
        raise ValueError(f"{instance.qid}: no answer sentence to start from")
    subsets = [frozenset(c) for r in range(len(units) + 1) for c in itertools.combinations(units, r)]
    table = {}
    for subset in subsets:
        ordered = [u for u in units if u in subset]
        table[subset] = scorer.confidences(instance, [ordered])[0]

    everything = frozenset(units)
    chosen = frozenset([instance.anchor])
    members, scores = [instance.anchor], []
    stopped = "max_steps"
    for _ in range(cfg.T):
        best, best_gain = None, None
        for u in sorted(everything - chosen):
            grown = chosen | {u}
            if cfg.strategy == "combined":
                gain = table[grown] - table[everything - grown]
            else:
                gain = table[grown] - table[chosen]
            if best_gain is None or gain > best_gain:
                best, best_gain = u, gain
        if best is None:
            stopped = "exhausted"
            break
        if best_gain < 0:
            stopped = "negative_gain"
            break
        chosen = chosen | {best}
        members.append(best)
        scores.append(best_gain)
    return EvidenceSet(instance.qid, members, scores, stopped)


def evidentiality_recall_precision(pred: EvidenceSet | Iterable[Unit], gold: Iterable[Unit]) -> tuple[float, float]:
    members = set(pred.members if isinstance(pred, EvidenceSet) else pred)
    gold = set(gold)
    if not gold:
        raise ValueError("gold evidence must be non-empty")
    hit = len(members & gold)
    precision = hit / len(members) if members else 0.0
    return precision, hit / len(gold)


@dataclass
class ExtractionStats:
    n_extracted: int = 0
    n_failed: int = 0
    failures: list[tuple[str, str]] = field(default_factory=list)


def extract_all(scorer, instances: Sequence[TrainingInstance], cfg: InterpreterConfig = InterpreterConfig(),
                stats: Optional[ExtractionStats] = None) -> list[EvidenceSet]:
    stats = stats if stats is not None else ExtractionStats()
    out = []
    for inst in instances:
        try:
            out.append(extract(scorer, inst, cfg))
            stats.n_extracted += 1
        except ValueError as err:
            stats.n_failed += 1
            stats.failures.append((inst.qid, str(err)))
    out.sort(key=lambda es: es.qid)
    return out


def save_evidence_sets(path, sets: Iterable[EvidenceSet]) -> None:
    write_jsonl(path, (s.to_dict() for s in sets))


def load_evidence_sets(path) -> list[EvidenceSet]:
    return [EvidenceSet.from_dict(d) for d in read_jsonl(path)]


class SetFunctionScorer:
    """Scorer backed by a plain function of (instance, frozenset of units)."""

    def __init__(self, fn: Callable[[TrainingInstance, frozenset], float]):
        self.fn = fn
        self.n_calls = 0

    def confidences(self, instance, unit_sets):
        self.n_calls += len(unit_sets)
        return [float(self.fn(instance, frozenset(units))) for units in unit_sets]
