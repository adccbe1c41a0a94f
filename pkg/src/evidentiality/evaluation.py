"""Answer F1/EM, evidence P/R/F1, the single-paragraph challenge filter and confidence curves."""

from __future__ import annotations

import collections
import csv
import json
import re
import string
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import MultiHopExample, Unit, answer_sentence, make_passage
from .setgen import answerable_instance

# Reference values reported for the full-scale system on HotpotQA (not reproduced here).
REFERENCE = {
    "dev_examples": 7405,
    "challenge_examples": 1653,
    "qa_f1_selected_evidences": 70.21,
    "qa_f1_selected_evidences_challenge": 44.57,
    "evidence_f1_interpreter_full": 69.35,
    "pseudo_label_train_precision": 61.13,
    "pseudo_label_train_recall": 86.64,
}


def normalize_answer(s: str) -> str:
    """Lower text and remove punctuation, articles and extra whitespace."""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in set(string.punctuation))
    s = re.sub(r"\b(a|an|the)\b", " ", s)
    return " ".join(s.split())


def qa_f1(pred: str, gold: str) -> float:
    p, g = normalize_answer(pred), normalize_answer(gold)
    if p in ("yes", "no") or g in ("yes", "no"):
        return float(p == g)
    p_toks, g_toks = p.split(), g.split()
    common = collections.Counter(p_toks) & collections.Counter(g_toks)
    same = sum(common.values())
    if same == 0:
        return 0.0
    precision = same / len(p_toks)
    recall = same / len(g_toks)
    return 2 * precision * recall / (precision + recall)


def exact_match(pred: str, gold: str) -> float:
    return float(normalize_answer(pred) == normalize_answer(gold))


def evidence_prf(pred: Iterable[Unit], gold: Iterable[Unit]) -> tuple[float, float, float]:
    pred, gold = set(pred), set(gold)
    if not gold:
        raise ValueError("gold evidence must be non-empty")
    if not pred:
        return 0.0, 0.0, 0.0
    hit = len(pred & gold)
    p, r = hit / len(pred), hit / len(gold)
    return p, r, (2 * p * r / (p + r) if hit else 0.0)


def build_challenge_set(baseline, dev: Sequence[MultiHopExample]) -> set[str]:
    """Qids on which ``baseline.answer(example, passage)`` scores zero F1 on every positive paragraph."""
    survivors = set()
    for ex in dev:
        best = max(qa_f1(baseline.answer(ex, make_passage(ex, ex.paragraphs[pid].units)), ex.answer.text)
                   for pid in ex.positive_pids)
        if best <= 0:
            survivors.add(ex.qid)
    return survivors


@dataclass
class ConfidenceCurves:
    e_plus: list[float]  # ascending
    e_minus: list[float]
    mean_e_plus: float
    mean_e_minus: float

    @property
    def gap(self) -> float:
        return self.mean_e_plus - self.mean_e_minus


def confidence_curves(scorer, dev: Sequence[MultiHopExample]) -> ConfidenceCurves:
    """Target-head P(A|Q,D) on gold-evidence passages (E+) and answer-sentence-only passages (E-)."""
    plus, minus = [], []
    for ex in dev:
        star = answer_sentence(ex)
        if star is None or not ex.gold_evidence:
            continue
        gold = sorted(ex.gold_evidence)
        inst = answerable_instance(ex.qid, ex.question, ex.answer, make_passage(ex, gold), star)
        c_plus, c_minus = scorer.confidences(inst, [gold, [star]])
        plus.append(c_plus)
        minus.append(c_minus)
    return ConfidenceCurves(
        sorted(plus), sorted(minus),
        float(np.mean(plus)) if plus else float("nan"),
        float(np.mean(minus)) if minus else float("nan"),
    )


def write_curves(curves: ConfidenceCurves, csv_path, plot_path=None) -> None:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "confidence", "set"])
        for name, values in (("E+", curves.e_plus), ("E-", curves.e_minus)):
            for i, v in enumerate(values):
                w.writerow([i, f"{v:.8f}", name])
    if plot_path is not None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(4, 3))
        for name, values, color in (("E+", curves.e_plus, "#f4a582"), ("E-", curves.e_minus, "#b2182b")):
            ax.fill_between(range(len(values)), values, alpha=0.6, color=color, label=name)
        ax.set_xlabel("sorted index")
        ax.set_ylabel("confidence")
        ax.set_ylim(0, 1)
        ax.legend()
        fig.tight_layout()
        fig.savefig(plot_path, dpi=120)
        plt.close(fig)


@dataclass
class EvalReport:
    qa_f1: float
    qa_em: float
    n_examples: int
    evidence_prf: Optional[tuple[float, float, float]] = None
    challenge_membership: dict[str, bool] = field(default_factory=dict)
    challenge_qa_f1: Optional[float] = None
    confidence: Optional[dict] = None

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_predictions(predictions: Sequence[dict], examples: Sequence[MultiHopExample],
                         evidence: Optional[dict[str, Sequence[Unit]]] = None,
                         challenge: Optional[set[str]] = None) -> tuple[EvalReport, list[dict]]:
    """Score prediction records ({qid, answer_text, ...}) against ``examples``.

    ``evidence`` maps qid -> predicted evidence units (macro-averaged P/R/F1).
    Returns the report and one per-example row.
    """
    by_qid = {ex.qid: ex for ex in examples}
    rows = []
    for rec in predictions:
        ex = by_qid[rec["qid"]]
        row = {"qid": ex.qid, "gold": ex.answer.text, "pred": rec["answer_text"],
               "f1": qa_f1(rec["answer_text"], ex.answer.text),
               "em": exact_match(rec["answer_text"], ex.answer.text)}
        if challenge is not None:
            row["challenge"] = ex.qid in challenge
        rows.append(row)
    f1 = float(np.mean([r["f1"] for r in rows])) if rows else 0.0
    em = float(np.mean([r["em"] for r in rows])) if rows else 0.0
    report = EvalReport(qa_f1=f1, qa_em=em, n_examples=len(rows))
    if challenge is not None:
        report.challenge_membership = {r["qid"]: r["challenge"] for r in rows}
        in_chal = [r["f1"] for r in rows if r["challenge"]]
        report.challenge_qa_f1 = float(np.mean(in_chal)) if in_chal else None
    if evidence:
        prf = [evidence_prf(evidence[q], by_qid[q].gold_evidence) for q in evidence
               if q in by_qid and by_qid[q].gold_evidence]
        if prf:
            report.evidence_prf = tuple(float(x) for x in np.mean(prf, axis=0))
    return report, rows


def write_report(report: EvalReport, rows: Sequence[dict], out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    if rows:
        with (out_dir / "per_example.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            w.writeheader()
            w.writerows(rows)
