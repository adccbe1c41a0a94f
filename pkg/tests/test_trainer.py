import math
from collections import Counter

import pytest
import torch
from hypothesis import given, settings, strategies as st

from evidentiality.corpus import Vocabulary
from evidentiality.qa_model import AnswerTarget, EncoderConfig, QAModel
from evidentiality.setgen import build_training_sets, with_pseudo_evidence
from evidentiality.trainer import (
    LOG_FIELDS, TrainConfig, answer_loss, bias_decorrelation_loss, bias_kl, encode_instances, run_curriculum,
    total_loss, uniform_kl_regularizer, write_log,
)

from conftest import one_hot, output_from_probs

LN4, LN10 = math.log(4), math.log(10)


# ---------------------------------------------------------------- analytic loss values

def test_answer_loss_one_hot_is_zero():
    out = output_from_probs(one_hot(5, 1), one_hot(5, 2), one_hot(4, 0))
    assert answer_loss(out, [AnswerTarget(0, 1, 2)]).item() == 0.0


def test_answer_loss_uniform():
    out = output_from_probs([0.1] * 10, [0.1] * 10, [0.25] * 4)
    assert answer_loss(out, [AnswerTarget(0, 3, 4)]).item() == pytest.approx(2 * LN10 + LN4)
    assert 2 * LN10 + LN4 == pytest.approx(5.99, abs=5e-3)


def test_answer_loss_unanswerable_is_class_only():
    out = output_from_probs([0.1] * 10, [0.1] * 10, [0.25] * 4)
    assert answer_loss(out, [AnswerTarget(3)]).item() == pytest.approx(LN4)


def test_answer_loss_zero_probability_is_clamped_and_counted():
    counter = Counter()
    out = output_from_probs([1.0, 0.0], [1.0, 0.0], one_hot(4, 0))
    loss = answer_loss(out, [AnswerTarget(0, 1, 1)], counter).item()
    assert loss == pytest.approx(-2 * math.log(1e-12))
    assert counter["clamped_log"] == 2


def test_uniform_kl_values():
    assert uniform_kl_regularizer(output_from_probs([0.25] * 4, [0.25] * 4, [0.25] * 4)).item() == pytest.approx(0)
    out = output_from_probs(one_hot(4, 2), [0.25] * 4, [0.25] * 4)
    assert uniform_kl_regularizer(out).item() == pytest.approx(LN4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=12).filter(lambda v: sum(v) > 1e-3))
def test_uniform_kl_non_negative(weights):
    p = [w / sum(weights) for w in weights]
    assert uniform_kl_regularizer(output_from_probs(p, p, [0.25] * 4)).item() >= -1e-12


def test_bias_loss_reduces_to_ce_when_heads_agree():
    out = output_from_probs([0.1, 0.6, 0.3], [0.2, 0.2, 0.6], one_hot(4, 0))
    target = [AnswerTarget(0, 1, 2)]
    ce = -(math.log(0.6) + math.log(0.6))
    assert bias_decorrelation_loss(out, target, lam=0.5).item() == pytest.approx(ce)


def test_bias_loss_lambda_zero_is_biased_ce():
    out = output_from_probs([0.5, 0.5], [0.5, 0.5], one_hot(4, 0), ps_hat=[0.9, 0.1], pe_hat=[0.2, 0.8])
    target = [AnswerTarget(0, 0, 1)]
    assert bias_decorrelation_loss(out, target, lam=0.0).item() == pytest.approx(-(math.log(0.9) + math.log(0.8)))


def test_bias_loss_subtracts_scaled_kl():
    out = output_from_probs([0.5, 0.5], [0.5, 0.5], one_hot(4, 0), ps_hat=[0.9, 0.1], pe_hat=[0.2, 0.8])
    kl = lambda p: sum(a * math.log(a / 0.5) for a in p)  # noqa: E731
    assert bias_kl(out).item() == pytest.approx(kl([0.9, 0.1]) + kl([0.2, 0.8]))
    target = [AnswerTarget(0, 0, 1)]
    ce = -(math.log(0.9) + math.log(0.8))
    assert bias_decorrelation_loss(out, target, lam=2.0).item() == pytest.approx(ce - 2 * bias_kl(out).item())


# ---------------------------------------------------------------- total loss / curriculum schedule

@pytest.fixture(scope="module")
def tiny(small_corpus, small_vocab):
    insts = build_training_sets(small_corpus[:4], 2, seed=0)
    a_plus = [i for i in insts if i.set_tag == "A+"]
    e_plus = [with_pseudo_evidence(i, [i.anchor]) for i in a_plus]
    items = encode_instances(insts + e_plus, small_vocab, 128)
    torch.manual_seed(0)
    model = QAModel(EncoderConfig(len(small_vocab), layers=1, hidden_dim=32, heads=2, ffn_dim=32, dropout=0.0))
    return model, items


def by_tag(items, *tags):
    return [i for i in items if i.tag in tags]


def test_e_plus_term_delayed(tiny):
    model, items = tiny
    batch = by_tag(items, "A+", "E+")
    cfg = TrainConfig(K=3, epochs_total=6)
    _, at_k = total_loss(model, batch, 3, cfg)
    _, after = total_loss(model, batch, 4, cfg)
    assert at_k.counts["E+_excluded"] == 4 and at_k.counts["E+"] == 0
    assert after.counts["E+"] == 4 and after.L_A > at_k.L_A


def test_only_unanswerable_batch(tiny):
    model, items = tiny
    batch = by_tag(items, "A-")
    loss, bd = total_loss(model, batch, 1, TrainConfig())
    from evidentiality.qa_model import collate
    with torch.no_grad():
        out = model(*collate([b.encoding for b in batch]))
    expected = -out.cls_logp[:, 3].sum()
    assert loss.item() == pytest.approx(expected.item(), rel=1e-6)
    assert bd.R_hat == 0 and bd.R == 0


@pytest.mark.parametrize("regularizer,field", [("bias_decorrelate", "R_hat"), ("uniform_kl", "R")])
def test_regularizer_selects_term(tiny, regularizer, field):
    model, items = tiny
    _, bd = total_loss(model, by_tag(items, "E-"), 1, TrainConfig(regularizer=regularizer))
    assert getattr(bd, field) != 0 and bd.L_A == 0
    assert bd.L_total == pytest.approx(getattr(bd, field))


def test_no_regularizer_drops_evidence_negatives(tiny):
    model, items = tiny
    loss, bd = total_loss(model, by_tag(items, "E-"), 1, TrainConfig(regularizer="none"))
    assert loss.item() == 0 and bd.counts["E-_excluded"] == 12


def test_total_is_sum_of_parts(tiny):
    model, items = tiny
    loss, bd = total_loss(model, items, 5, TrainConfig())
    assert bd.L_total == pytest.approx(bd.L_A + bd.R_hat, rel=1e-6)
    assert torch.isfinite(loss)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(K=6, epochs_total=6)
    with pytest.raises(ValueError):
        TrainConfig(lam=-1)
    with pytest.raises(ValueError):
        TrainConfig(regularizer="l2")
    assert [TrainConfig(regularizer=r).ablation for r in ("none", "uniform_kl", "bias_decorrelate")] == ["B", "C", "full"]
    assert TrainConfig(use_evidence_positive=False).ablation == "A"


# ---------------------------------------------------------------- curriculum

def small_run(small_corpus, small_vocab, tmp_path, **kw):
    insts = build_training_sets(small_corpus[:24], 2, seed=0)
    dev = build_training_sets(small_corpus[24:32], 2, seed=1)
    enc = EncoderConfig(len(small_vocab), layers=1, hidden_dim=32, heads=2, ffn_dim=64)
    cfg = TrainConfig(epochs_total=3, K=2, seed=3, batch_size=16, **kw)
    return run_curriculum(insts, small_vocab, enc, cfg, tmp_path, dev)


def test_curriculum_schedule_and_artifacts(small_corpus, small_vocab, tmp_path):
    res = small_run(small_corpus, small_vocab, tmp_path)
    assert [r["epoch"] for r in res.log] == [0, 1, 2, 3]
    assert res.log[-1]["dev_L_A"] < res.log[0]["dev_L_A"]
    assert all(r["n_E+"] == 0 for r in res.log[1:3]) and res.log[3]["n_E+"] == len(res.evidence_sets)
    assert len(res.evidence_sets) == 24 and res.extraction.n_failed == 0
    assert all(es.members[0] == es_inst for es, es_inst in
               zip(res.evidence_sets, [i.anchor for i in sorted(
                   (i for i in build_training_sets(small_corpus[:24], 2, seed=0) if i.set_tag == "A+"),
                   key=lambda i: i.qid)]))
    assert sorted(p.name for p in tmp_path.glob("epoch_*.pt")) == ["epoch_1.pt", "epoch_2.pt", "epoch_3.pt"]
    write_log(tmp_path / "log.csv", res.log)
    header = (tmp_path / "log.csv").read_text().splitlines()[0]
    assert header == ",".join(LOG_FIELDS)


def test_curriculum_without_regularizer_skips_extraction(small_corpus, small_vocab, tmp_path):
    res = small_run(small_corpus, small_vocab, tmp_path, regularizer="none")
    assert res.evidence_sets == []
    assert all(r["n_E-"] == 0 and r["n_E+"] == 0 for r in res.log[1:])
    assert {r["ablation"] for r in res.log} == {"B"}


def test_curriculum_reproducible(small_corpus, small_vocab, tmp_path):
    a = small_run(small_corpus, small_vocab, tmp_path / "a")
    b = small_run(small_corpus, small_vocab, tmp_path / "b")
    assert abs(a.log[-1]["L_total"] - b.log[-1]["L_total"]) < 1e-6
    for pa, pb in zip(a.model.parameters(), b.model.parameters()):
        assert torch.equal(pa, pb)
