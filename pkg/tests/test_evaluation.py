import csv
import json
import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from evidentiality.evaluation import (
    REFERENCE, build_challenge_set, confidence_curves, evaluate_predictions, evidence_prf, exact_match,
    normalize_answer, qa_f1, write_curves, write_report,
)
from evidentiality.interpreter import SetFunctionScorer
from evidentiality.synthetic import SyntheticConfig, generate_synthetic


@pytest.mark.parametrize("pred,gold,f1", [
    ("Seoul", "Seoul", 1.0),
    ("the Korean War", "Korean War", 1.0),
    ("Busan", "Seoul", 0.0),
    ("yes", "no", 0.0),
    ("Yes.", "yes", 1.0),
    ("New York City", "York", 0.5),
])
def test_qa_f1_cases(pred, gold, f1):
    assert qa_f1(pred, gold) == pytest.approx(f1)


def test_normalization():
    assert normalize_answer("  The  Korean, War!") == "korean war"
    assert exact_match("An apple", "apple") == 1.0


words = st.lists(st.sampled_from(["a", "the", "Seoul", "korea", "war", "1945", "an", "x,"]), max_size=6)


@given(words, words)
def test_qa_f1_symmetric_and_bounded(a, b):
    p, g = " ".join(a), " ".join(b)
    assert 0.0 <= qa_f1(p, g) <= 1.0
    assert qa_f1(p, g) == pytest.approx(qa_f1(g, p))
    if sorted(normalize_answer(p).split()) == sorted(normalize_answer(g).split()) and normalize_answer(g):
        assert qa_f1(p, g) == 1.0


def test_evidence_prf():
    a, b, c = (0, 0), (0, 1), (1, 0)
    p, r, f = evidence_prf({a, b, c}, {a, b})
    assert (p, r, f) == (pytest.approx(2 / 3), 1.0, pytest.approx(0.8))
    assert evidence_prf({a}, {a}) == (1.0, 1.0, 1.0)
    assert evidence_prf(set(), {a}) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        evidence_prf({a}, set())


class AnswerSentenceStub:
    """Single-paragraph baseline that answers correctly iff the passage contains the answer sentence."""

    def __init__(self, needs):
        self.needs = needs  # qid -> set of units required

    def answer(self, ex, passage):
        return ex.answer.text if self.needs[ex.qid] <= set(passage.units) else "wrong"


def test_challenge_set_stub_enumeration():
    dev = generate_synthetic(SyntheticConfig(n_examples=40, seed=8))
    from evidentiality.corpus import answer_sentence
    # odd examples: answer sentence alone suffices; even: the stub needs the whole chain
    needs = {ex.qid: ({answer_sentence(ex)} if i % 2 else set(ex.gold_evidence)) for i, ex in enumerate(dev)}
    expected = {ex.qid for i, ex in enumerate(dev) if i % 2 == 0}
    assert build_challenge_set(AnswerSentenceStub(needs), dev) == expected


def test_challenge_set_wrong_baseline_keeps_everything():
    dev = generate_synthetic(SyntheticConfig(n_examples=10, seed=8))

    class Wrong:
        def answer(self, ex, passage):
            return "zzz"
    assert build_challenge_set(Wrong(), dev) == {ex.qid for ex in dev}


def test_challenge_set_monotone():
    dev = generate_synthetic(SyntheticConfig(n_examples=30, seed=9))
    rng = np.random.default_rng(0)
    weak_right = {ex.qid: bool(rng.random() < 0.3) for ex in dev}
    strong_right = {q: v or bool(rng.random() < 0.5) for q, v in weak_right.items()}

    class Stub:
        def __init__(self, right):
            self.right = right

        def answer(self, ex, passage):
            return ex.answer.text if self.right[ex.qid] else "zzz"
    assert build_challenge_set(Stub(strong_right), dev) <= build_challenge_set(Stub(weak_right), dev)


def test_confidence_curves_constant_stub(tmp_path):
    dev = generate_synthetic(SyntheticConfig(n_examples=12, seed=3))
    curves = confidence_curves(SetFunctionScorer(lambda inst, u: 0.4), dev)
    assert curves.e_plus == curves.e_minus == [0.4] * 12
    assert curves.gap == 0.0
    write_curves(curves, tmp_path / "c.csv", tmp_path / "c.png")
    rows = list(csv.DictReader((tmp_path / "c.csv").open()))
    assert len(rows) == 24 and {r["set"] for r in rows} == {"E+", "E-"}
    assert (tmp_path / "c.png").stat().st_size > 0


def test_confidence_curves_sorted_and_mass_preserving():
    dev = generate_synthetic(SyntheticConfig(n_examples=20, seed=3))
    scorer = SetFunctionScorer(lambda inst, u: (zlib.crc32(f"{inst.qid}{len(u)}".encode()) % 100) / 100)
    curves = confidence_curves(scorer, dev)
    assert curves.e_plus == sorted(curves.e_plus) and curves.e_minus == sorted(curves.e_minus)
    assert curves.mean_e_plus == pytest.approx(np.mean(curves.e_plus))


def test_evaluate_predictions_and_report(tmp_path):
    dev = generate_synthetic(SyntheticConfig(n_examples=4, seed=3))
    preds = [{"qid": ex.qid, "answer_text": ex.answer.text if i < 3 else "nope"} for i, ex in enumerate(dev)]
    evidence = {ex.qid: sorted(ex.gold_evidence) for ex in dev}
    report, rows = evaluate_predictions(preds, dev, evidence, challenge={dev[3].qid})
    assert report.qa_em == 0.75 and report.qa_f1 == 0.75 and report.n_examples == 4
    assert report.evidence_prf == (1.0, 1.0, 1.0)
    assert report.challenge_qa_f1 == 0.0 and sum(report.challenge_membership.values()) == 1
    write_report(report, rows, tmp_path)
    assert json.loads((tmp_path / "eval.json").read_text())["qa_em"] == 0.75
    assert len((tmp_path / "per_example.csv").read_text().splitlines()) == 5


def test_reference_constants_recorded():
    assert REFERENCE["challenge_examples"] == 1653 and REFERENCE["qa_f1_selected_evidences"] == 70.21
