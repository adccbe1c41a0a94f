import numpy as np
import pytest
import torch

from evidentiality.corpus import make_passage
from evidentiality.inference import (
    SelectorConfig, SentenceSelector, candidate_pairs, predict, predict_all, select_evidences, select_pair,
    select_single, train_selector,
)
from evidentiality.interpreter import EvidenceSet
from evidentiality.qa_model import EncoderConfig, QAModel, Reader
from evidentiality.setgen import build_training_sets

from conftest import make_example


class StubReader:
    """Class-probability stub: p_none is looked up from the set of paragraphs in the passage."""

    def __init__(self, p_none):
        self.p_none = p_none
        self.seen = []

    def class_probs(self, question, passages):
        rows = []
        for p in passages:
            pids = tuple(sorted({u[0] for u in p.units}))
            self.seen.append(pids)
            pn = self.p_none(pids)
            rows.append([1 - pn, 0, 0, pn])
        return np.array(rows)

    def predict_passage(self, question, passage):
        from evidentiality.qa_model import Prediction
        return Prediction("x", "span", 1.0, (0, 1), (0, 0), passage.units)


class StubSelector:
    def __init__(self, score):
        self.score = score

    def score_passages(self, question, passages):
        return [[self.score(u) for u in p.units] for p in passages]


def ten_paragraphs(n_sent=4):
    return make_example([[f"P{p} s{s}." for s in range(n_sent)] for p in range(10)], answer="P3", positives=(3, 7))


def test_forty_five_candidate_pairs():
    pairs = candidate_pairs(ten_paragraphs())
    assert len(pairs) == 45 and len(set(pairs)) == 45 and all(i < j for i, j in pairs)


def test_select_pair_picks_answerable_pair():
    ex = ten_paragraphs()
    reader = StubReader(lambda pids: 0.0 if pids == (3, 7) else 1.0)
    passage = select_pair(reader, ex)
    assert sorted({u[0] for u in passage.units}) == [3, 7]
    assert len(reader.seen) == 45
    assert [u for u in passage.units] == sorted(passage.units)


def test_select_pair_tie_takes_first_pair():
    passage = select_pair(StubReader(lambda pids: 0.5), ten_paragraphs())
    assert sorted({u[0] for u in passage.units}) == [0, 1]


def test_select_single_uses_answerability():
    reader = StubReader(lambda pids: 0.1 if pids == (7,) else 0.9)
    assert {u[0] for u in select_single(reader, ten_paragraphs()).units} == {7}


def test_select_evidences_top_k_document_order():
    ex = ten_paragraphs()
    chosen = {(9, 0), (1, 3), (5, 2), (0, 1), (7, 3)}
    passage = select_evidences(StubSelector(lambda u: 0.9 if u in chosen else 0.1), ex, k=5)
    assert list(passage.units) == sorted(chosen)


def test_select_evidences_ties_prefer_smaller_unit():
    passage = select_evidences(StubSelector(lambda u: 0.5), ten_paragraphs(), k=5)
    assert list(passage.units) == [(0, 0), (0, 1), (0, 2), (0, 3), (1, 0)]


def test_select_evidences_fewer_than_k():
    ex = make_example([["a."], ["b."], ["c."]], answer="a", positives=(0, 1))
    passage = select_evidences(StubSelector(lambda u: 0.3), ex, k=5)
    assert len(passage) == 3


def test_predict_modes_dispatch():
    ex = ten_paragraphs()
    reader = StubReader(lambda pids: 0.0 if pids in ((3, 7), (3,)) else 1.0)
    assert {u[0] for u in predict(reader, ex, "paired_paragraph").units} == {3, 7}
    assert {u[0] for u in predict(reader, ex, "single_paragraph").units} == {3}
    with pytest.raises(ValueError):
        predict(reader, ex, "selected_evidences")
    with pytest.raises(ValueError):
        predict(reader, ex, "everything")


def test_prediction_records(tmp_path):
    from evidentiality.corpus import read_jsonl
    ex = ten_paragraphs()
    reader = StubReader(lambda pids: 0.0 if pids == (3, 7) else 1.0)
    records = predict_all(reader, [ex], "paired_paragraph", path=tmp_path / "p.jsonl")
    assert list(read_jsonl(tmp_path / "p.jsonl")) == records
    assert set(records[0]) == {"qid", "answer_text", "class", "confidence", "mode", "selected_units"}


# ---------------------------------------------------------------- real selector

def test_selector_scores_every_sentence(small_corpus, small_vocab):
    torch.manual_seed(0)
    from evidentiality.inference import SelectorModel
    sel = SentenceSelector(SelectorModel(EncoderConfig(len(small_vocab), layers=1)), small_vocab)
    ex = small_corpus[0]
    passages = [make_passage(ex, p.units) for p in ex.paragraphs]
    scores = sel.score_passages(ex.question, passages)
    assert [len(s) for s in scores] == [len(p) for p in passages]
    assert all(0 <= x <= 1 for row in scores for x in row)


def test_selector_budget_cut_counts(small_corpus, small_vocab):
    insts = [i for i in build_training_sets(small_corpus[:3], 0, seed=0) if i.set_tag == "A+"]
    evidence = [EvidenceSet(i.qid, [i.anchor]) for i in insts]
    from collections import Counter
    counts = Counter()
    cfg = SelectorConfig(epochs=1, budget=24)
    sel = train_selector(insts, evidence, small_vocab, EncoderConfig(len(small_vocab), layers=1, max_len=24), cfg, counts)
    assert counts["sentences_beyond_budget"] > 0
    scores = sel.score_sentences(insts[0].question, insts[0].passage)
    assert len(scores) == len(insts[0].passage) and scores[-1] == 0.0
