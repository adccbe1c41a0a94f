from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from evidentiality.corpus import answer_sentence, make_passage
from evidentiality.setgen import (
    LabelAudit, NEG_TYPES, SetStats, TrainingInstance, answerable_instance, audit_labels, build_answer_sets,
    build_evidence_negatives, build_single_paragraph_sets, build_training_sets, sub_passage, with_pseudo_evidence,
)
from evidentiality.synthetic import SyntheticConfig, generate_synthetic


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic(SyntheticConfig(n_examples=60, seed=11, distractor_final_relation_rate=0.5))


def test_answer_sets_counts(corpus):
    ex = corpus[0]
    pos, neg = build_answer_sets(ex, k_neg=2)
    assert len(pos) == 1 and len(neg) == 2
    a_plus = pos[0]
    assert a_plus.set_tag == "A+" and a_plus.class_label == "span"
    assert set(ex.gold_evidence) <= set(a_plus.passage.units)
    assert [u[0] for u in a_plus.passage.units] == sorted(u[0] for u in a_plus.passage.units)
    for inst in neg:
        assert inst.set_tag == "A-" and inst.class_label == "none" and inst.answer_span is None
        assert not {u[0] for u in inst.passage.units} & set(ex.positive_pids)


def test_answer_sets_cap(corpus):
    _, neg = build_answer_sets(corpus[0], k_neg=30)
    assert len(neg) == 28
    pairs = {tuple(sorted({u[0] for u in i.passage.units})) for i in neg}
    assert len(pairs) == 28


def test_evidence_negative_recipes(corpus):
    ex = corpus[1]
    star = answer_sentence(ex)
    t1, t2, t3 = build_evidence_negatives(ex)
    assert [t.neg_type for t in (t1, t2, t3)] == list(NEG_TYPES)
    assert t1.passage.units == (star,)
    assert t1.passage.resolved_text == ex.sentence_text(star)
    d = t2.passage.units[1][0]
    assert d in ex.negative_pids
    assert len(t2.passage) == 1 + len(ex.paragraphs[d].sentences)
    assert t2.passage.units[0] == star
    pids = [u[0] for u in t3.passage.units]
    assert pids[0] == star[0] and pids[-1] in ex.negative_pids
    for t in (t1, t2, t3):
        assert t.set_tag == "E-" and t.anchor == star
        s, e = t.answer_span
        assert t.passage.resolved_text[s:e] == ex.answer.text
        assert not set(ex.gold_evidence) <= set(t.passage.units)


def test_yes_no_emits_only_partial_recipe():
    ex = generate_synthetic(SyntheticConfig(n_examples=1, seed=4, yes_no_fraction=1.0))[0]
    stats = SetStats()
    out = build_evidence_negatives(ex, stats=stats)
    assert [t.neg_type for t in out] == ["partial_plus_irrelevant"]
    assert out[0].answer_span is None and out[0].class_label == ex.answer.type
    assert stats.skipped["no_answer_sentence"] == 2


def test_set_construction_deterministic(corpus):
    a = build_training_sets(corpus, 2, seed=5)
    b = build_training_sets(corpus, 2, seed=5)
    assert [i.to_dict() for i in a] == [i.to_dict() for i in b]
    c = build_training_sets(corpus, 2, seed=6)
    assert [i.to_dict() for i in a] != [i.to_dict() for i in c]


def test_instance_round_trip(corpus):
    for inst in build_training_sets(corpus[:5], 2, seed=0):
        assert TrainingInstance.from_dict(inst.to_dict()) == inst


def test_audit_clean_on_synthetic(corpus):
    audit = LabelAudit()
    stats = SetStats()
    for ex in corpus:
        audit_labels(build_training_sets([ex], 2, seed=1, stats=stats), ex, audit)
    assert audit.n_checked == len(corpus) * 6
    assert audit.n_violations == 0
    assert stats.counts == Counter({"A+": 60, "A-": 120, "E-": 180})


def test_audit_catches_seeded_fault(corpus):
    ex = corpus[0]
    full = make_passage(ex, sorted(ex.gold_evidence))
    bad = answerable_instance(ex.qid, ex.question, ex.answer, full, answer_sentence(ex), "negative", NEG_TYPES[0])
    audit = audit_labels([bad], ex)
    assert audit.n_violations == 1 and audit.violations == [(ex.qid, "E-:full_evidence")]


def test_audit_empty():
    ex = generate_synthetic(SyntheticConfig(n_examples=1))[0]
    assert audit_labels([], ex).n_checked == 0


def test_no_instance_is_both_unanswerable_and_evidence_negative(corpus):
    for inst in build_training_sets(corpus, 3, seed=2):
        if inst.set_tag == "E-":
            assert inst.answer.text in inst.passage.resolved_text
        if inst.set_tag == "A-":
            assert inst.class_label == "none" and inst.answer_span is None


def test_unanswerable_with_span_rejected(corpus):
    inst = build_answer_sets(corpus[0], 1)[1][0]
    with pytest.raises(ValueError):
        TrainingInstance(inst.qid, inst.question, inst.answer, inst.passage, "unanswerable", class_label="span",
                         answer_span=(0, 1))


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_pseudo_evidence_keeps_order_and_span(corpus, data):
    ex = data.draw(st.sampled_from(corpus))
    a_plus = build_answer_sets(ex, 0)[0][0]
    others = [u for u in a_plus.passage.units if u != a_plus.anchor]
    extra = data.draw(st.lists(st.sampled_from(others), unique=True, max_size=5))
    members = [a_plus.anchor] + extra
    e_plus = with_pseudo_evidence(a_plus, members)
    assert e_plus.set_tag == "E+"
    assert list(e_plus.passage.units) == [u for u in a_plus.passage.units if u in set(members)]
    s, e = e_plus.answer_span
    assert e_plus.passage.resolved_text[s:e] == ex.answer.text
    assert sub_passage(a_plus.passage, members) == e_plus.passage


def test_single_paragraph_regime(corpus):
    ex = corpus[0]
    out = build_single_paragraph_sets(ex, k_neg=2)
    pos = [i for i in out if i.set_tag == "A+"]
    assert len(pos) == 1 and ex.answer.text in pos[0].passage.resolved_text
    assert len({u[0] for u in pos[0].passage.units}) == 1
    assert sum(i.set_tag == "A-" for i in out) == 2
