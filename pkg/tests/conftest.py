import pytest
import torch

from evidentiality.qa_model import ModelOutput

from evidentiality.corpus import Answer, MultiHopExample, Paragraph, Sentence, Vocabulary
from evidentiality.synthetic import SyntheticConfig, generate_synthetic

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(SyntheticConfig(n_examples=40, seed=7, distractor_final_relation_rate=0.5))


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return Vocabulary.from_examples(small_corpus)


def make_example(texts_by_paragraph, answer="Seoul", positives=(0, 1), gold=None, qid="q0",
                 question="Where is it?"):
    """Hand-built example: ``texts_by_paragraph`` is a list of sentence lists."""
    paragraphs = tuple(
        Paragraph(pid, f"T{pid}", tuple(Sentence(i, t) for i, t in enumerate(texts)),
                  "positive" if pid in positives else "negative")
        for pid, texts in enumerate(texts_by_paragraph)
    )
    kind = answer if answer in ("yes", "no") else "span"
    return MultiHopExample(qid, question, Answer(answer, kind), paragraphs,
                           None if gold is None else frozenset(gold))


def output_from_probs(ps, pe, pcls, ps_hat=None, pe_hat=None):
    """ModelOutput with one row built from explicit probability vectors."""
    ps, pe = torch.tensor([ps], dtype=torch.float64), torch.tensor([pe], dtype=torch.float64)
    ps_hat = ps if ps_hat is None else torch.tensor([ps_hat], dtype=torch.float64)
    pe_hat = pe if pe_hat is None else torch.tensor([pe_hat], dtype=torch.float64)
    # zero probabilities get the same finite log the model's masked softmax produces
    log = lambda p: torch.where(p > 0, torch.log(p), torch.finfo(p.dtype).min)  # noqa: E731
    mask = torch.ones_like(ps, dtype=torch.bool)
    return ModelOutput(torch.zeros(1, ps.shape[1], 2), log(ps), log(pe), log(ps_hat), log(pe_hat),
                       log(torch.tensor([pcls], dtype=torch.float64)), mask)


def one_hot(n, i):
    v = [0.0] * n
    v[i] = 1.0
    return v


# ---------------------------------------------------------------- acceptance reporting

_CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    _CRITERIA[n] = (ok, detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
