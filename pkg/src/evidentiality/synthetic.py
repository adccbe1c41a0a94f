"""Deterministic bridge-entity corpus in the distractor layout.

Each example hides a fact chain ``e0 -r1-> e1 -r2-> ... -> eL`` in two positive
paragraphs; the question names ``e0`` and the relations, the answer is ``eL``.
Distractor paragraphs reuse the relation and filler vocabulary over disjoint
entities, so they never mention the answer or any chain entity; optionally a few
of them are about the question entity ``e0`` but hold only filler facts.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass

from .corpus import (
    NEGATIVE,
    POSITIVE,
    Answer,
    MultiHopExample,
    Paragraph,
    Sentence,
)

ENTITY_TYPES = ("person", "city", "country", "region")

# (subject type, object type, statement, question phrase)
RELATIONS = (
    ("person", "city", "{a} was born in {b}.", "the birthplace of {x}"),
    ("city", "country", "{a} is located in {b}.", "the country of {x}"),
    ("country", "region", "{a} is part of {b}.", "the region of {x}"),
    ("region", "person", "{a} is governed by {b}.", "the governor of {x}"),
)

FILLERS = {
    "person": ("{a} is a friend of {b}.", "{a} works with {b}.", "{a} admires {b}."),
    "city": ("{a} is twinned with {b}.", "{a} trades with {b}.", "{a} is near {b}."),
    "country": ("{a} borders {b}.", "{a} exports to {b}.", "{a} competes with {b}."),
    "region": ("{a} neighbours {b}.", "{a} rivals {b}.", "{a} supplies {b}."),
}

POOL_SIZES = {"person": 240, "city": 240, "country": 160, "region": 160}


@dataclass(frozen=True)
class SyntheticConfig:
    n_examples: int = 1000
    chain_length: int = 2
    n_distractor_paragraphs: int = 8
    sentences_per_paragraph: int = 5
    seed: int = 0
    yes_no_fraction: float = 0.0
    # chance that a distractor paragraph carries the answer-bearing relation
    distractor_final_relation_rate: float = 0.0
    # distractor paragraphs about the question entity itself (filler facts only, never the chain relation)
    question_entity_distractors: int = 0

    def __post_init__(self):
        if self.chain_length < 1:
            raise ValueError("chain_length must be >= 1")
        if self.n_distractor_paragraphs < 0:
            raise ValueError("n_distractor_paragraphs must be >= 0")
        if self.sentences_per_paragraph < 1:
            raise ValueError("sentences_per_paragraph must be >= 1")
        if self.chain_length > 2 * self.sentences_per_paragraph:
            raise ValueError(
                f"chain_length {self.chain_length} exceeds the sentence budget of the "
                f"positive pair ({2 * self.sentences_per_paragraph})"
            )
        if not 0.0 <= self.yes_no_fraction <= 1.0:
            raise ValueError("yes_no_fraction must lie in [0, 1]")
        if not 0 <= self.question_entity_distractors <= self.n_distractor_paragraphs:
            raise ValueError("question_entity_distractors must lie in [0, n_distractor_paragraphs]")


def relation(i: int):
    return RELATIONS[i % len(RELATIONS)]


def entity_pools(rng: random.Random) -> dict[str, list[str]]:
    cons, vows = "bdfgklmnprstvz", "aeiou"
    syll = [c + v for c in cons for v in vows]
    names = ["".join(p).capitalize() + tail for p in itertools.product(syll, syll) for tail in ("", "n", "r")]
    rng.shuffle(names)
    pools, k = {}, 0
    for t in ENTITY_TYPES:
        pools[t] = names[k:k + POOL_SIZES[t]]
        k += POOL_SIZES[t]
    return pools


def question_for(chain_length: int, e0: str) -> str:
    phrase = e0
    for i in range(chain_length):
        phrase = relation(i)[3].format(x=phrase)
    return "What is " + phrase + "?"


class _Sampler:
    def __init__(self, rng: random.Random, pools: dict[str, list[str]]):
        self.rng = rng
        self.pools = pools
        self.used: set[str] = set()

    def take(self, etype: str) -> str:
        pool = self.pools[etype]
        while True:
            name = pool[self.rng.randrange(len(pool))]
            if name not in self.used:
                self.used.add(name)
                return name


def _filler(rng: random.Random, sampler: _Sampler, subject: str, etype: str) -> str:
    return rng.choice(FILLERS[etype]).format(a=subject, b=sampler.take(etype))


def _paragraph_with_facts(rng, sampler, subject, etype, facts, size) -> list[str]:
    """Place ``facts`` (in order) among fillers about ``subject``; returns texts."""
    n_fill = size - len(facts)
    slots = sorted(rng.sample(range(size), len(facts)))
    fillers = iter([_filler(rng, sampler, subject, etype) for _ in range(n_fill)])
    fact_iter = iter(facts)
    return [next(fact_iter) if i in slots else next(fillers) for i in range(size)]


def _one_example(cfg: SyntheticConfig, rng: random.Random, pools, index: int) -> MultiHopExample:
    sampler = _Sampler(rng, pools)
    L = cfg.chain_length
    chain = [sampler.take(relation(0)[0])]
    for i in range(L):
        chain.append(sampler.take(relation(i)[1]))
    facts = [relation(i)[2].format(a=chain[i], b=chain[i + 1]) for i in range(L)]

    split = L // 2
    facts_a, facts_b = facts[:split], facts[split:]
    size = cfg.sentences_per_paragraph
    subj_a, type_a = chain[0], relation(0)[0]
    subj_b, type_b = chain[split], relation(split)[0]
    para_a = _paragraph_with_facts(rng, sampler, subj_a, type_a, facts_a, size)
    para_b = _paragraph_with_facts(rng, sampler, subj_b, type_b, facts_b, size)

    question = question_for(L, chain[0])
    answer = Answer(chain[-1], "span")
    if rng.random() < cfg.yes_no_fraction:
        truthful = rng.random() < 0.5
        probe = chain[-1] if truthful else sampler.take(relation(L - 1)[1])
        question = "Is " + question[len("What is "):-1] + f" {probe}?"
        answer = Answer("yes" if truthful else "no", "yes" if truthful else "no")

    # distractors: same relation/filler vocabulary, fresh entities
    subject_types = [relation(i)[0] for i in range(L)]
    final_subject_type = relation(L - 1)[0]
    distractors = []
    for _ in range(cfg.question_entity_distractors):
        distractors.append((chain[0], [_filler(rng, sampler, chain[0], type_a) for _ in range(size)]))
    for _ in range(cfg.n_distractor_paragraphs - cfg.question_entity_distractors):
        etype = rng.choice(subject_types)
        subject = sampler.take(etype)
        rel = next(r for r in RELATIONS if r[0] == etype)
        use_rel = etype != final_subject_type or rng.random() < cfg.distractor_final_relation_rate
        facts_d = [rel[2].format(a=subject, b=sampler.take(rel[1]))] if use_rel else []
        distractors.append((subject, _paragraph_with_facts(rng, sampler, subject, etype, facts_d, size)))

    blocks = [(subj_a, para_a, POSITIVE), (subj_b, para_b, POSITIVE)]
    blocks += [(s, texts, NEGATIVE) for s, texts in distractors]
    order = list(range(len(blocks)))
    rng.shuffle(order)

    paragraphs, gold = [], set()
    fact_set = set(facts)
    for pid, bi in enumerate(order):
        title, texts, polarity = blocks[bi]
        sents = tuple(Sentence(i, t) for i, t in enumerate(texts))
        paragraphs.append(Paragraph(pid, title, sents, polarity))
        if polarity == POSITIVE:
            gold.update((pid, i) for i, t in enumerate(texts) if t in fact_set)
    return MultiHopExample(
        qid=f"syn{cfg.seed}-{index:06d}",
        question=question,
        answer=answer,
        paragraphs=tuple(paragraphs),
        gold_evidence=frozenset(gold),
    )


def generate_synthetic(config: SyntheticConfig) -> list[MultiHopExample]:
    """Pure function of ``config``; the same config yields the same corpus."""
    rng = random.Random(config.seed)
    pools = entity_pools(rng)
    return [_one_example(config, rng, pools, i) for i in range(config.n_examples)]


def chain_entities(example: MultiHopExample) -> list[str]:
    """Entities named by the gold chain, in sentence order (for tests/analysis)."""
    from .corpus import word_spans

    names = []
    for unit in sorted(example.gold_evidence or ()):
        for tok, s, e in word_spans(example.sentence_text(unit)):
            original = example.sentence_text(unit)[s:e]
            if original[:1].isupper() and original not in names:
                names.append(original)
    return names
