"""Data model, distractor-format ingestion, tokenization and answer-span lookup."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

logger = logging.getLogger(__name__)

ANSWER_TYPES = ("span", "yes", "no")
POSITIVE, NEGATIVE = "positive", "negative"

Unit = tuple[int, int]  # (pid, sid)
CharSpan = tuple[int, int]  # half-open [start, end)


class NotFound(LookupError):
    """The answer string does not occur in the passage."""


class TruncatedAnswer(ValueError):
    """The gold span falls outside the token budget."""


class MalformedRecord(ValueError):
    pass


@dataclass(frozen=True)
class Sentence:
    sid: int
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError(f"sentence {self.sid} is empty")


@dataclass(frozen=True)
class Paragraph:
    pid: int
    title: str
    sentences: tuple[Sentence, ...]
    polarity: str = NEGATIVE

    def __post_init__(self):
        if not self.sentences:
            raise ValueError(f"paragraph {self.pid} has no sentences")
        if [s.sid for s in self.sentences] != list(range(len(self.sentences))):
            raise ValueError(f"paragraph {self.pid}: sentence ids must be 0..n-1")
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise ValueError(f"bad polarity {self.polarity!r}")

    @property
    def units(self) -> list[Unit]:
        return [(self.pid, s.sid) for s in self.sentences]


@dataclass(frozen=True)
class Answer:
    text: str
    type: str = "span"

    def __post_init__(self):
        if self.type not in ANSWER_TYPES:
            raise ValueError(f"bad answer type {self.type!r}")
        if self.type == "span" and not self.text:
            raise ValueError("span answers need non-empty text")


@dataclass(frozen=True)
class MultiHopExample:
    qid: str
    question: str
    answer: Answer
    paragraphs: tuple[Paragraph, ...]
    gold_evidence: Optional[frozenset[Unit]] = None

    @property
    def answer_type(self) -> str:
        return self.answer.type

    @property
    def positive_pids(self) -> list[int]:
        return [p.pid for p in self.paragraphs if p.polarity == POSITIVE]

    @property
    def negative_pids(self) -> list[int]:
        return [p.pid for p in self.paragraphs if p.polarity == NEGATIVE]

    def paragraph(self, pid: int) -> Paragraph:
        return self.paragraphs[pid]

    def sentence_text(self, unit: Unit) -> str:
        pid, sid = unit
        return self.paragraphs[pid].sentences[sid].text

    def all_units(self) -> list[Unit]:
        return [u for p in self.paragraphs for u in p.units]

    def validate(self, n_paragraphs: Optional[int] = 10) -> None:
        if n_paragraphs is not None and len(self.paragraphs) != n_paragraphs:
            raise ValueError(f"{self.qid}: expected {n_paragraphs} paragraphs")
        if [p.pid for p in self.paragraphs] != list(range(len(self.paragraphs))):
            raise ValueError(f"{self.qid}: paragraph ids must be 0..n-1")
        pos = self.positive_pids
        if len(pos) != 2:
            raise ValueError(f"{self.qid}: expected 2 positive paragraphs, got {len(pos)}")
        if self.answer.type == "span":
            if not any(self.answer.text in s.text for pid in pos for s in self.paragraphs[pid].sentences):
                raise ValueError(f"{self.qid}: answer not found in positive paragraphs")
        if self.gold_evidence is not None:
            for pid, sid in self.gold_evidence:
                if pid not in pos or sid >= len(self.paragraphs[pid].sentences):
                    raise ValueError(f"{self.qid}: gold evidence {(pid, sid)} outside positives")

    def to_dict(self) -> dict:
        return {
            "qid": self.qid,
            "question": self.question,
            "answer": {"text": self.answer.text, "type": self.answer.type},
            "paragraphs": [
                {
                    "pid": p.pid,
                    "title": p.title,
                    "polarity": p.polarity,
                    "sentences": [s.text for s in p.sentences],
                }
                for p in self.paragraphs
            ],
            "gold_evidence": None if self.gold_evidence is None else sorted(list(u) for u in self.gold_evidence),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MultiHopExample":
        paragraphs = tuple(
            Paragraph(
                pid=p["pid"],
                title=p["title"],
                sentences=tuple(Sentence(i, t) for i, t in enumerate(p["sentences"])),
                polarity=p["polarity"],
            )
            for p in d["paragraphs"]
        )
        gold = d.get("gold_evidence")
        return cls(
            qid=d["qid"],
            question=d["question"],
            answer=Answer(d["answer"]["text"], d["answer"]["type"]),
            paragraphs=paragraphs,
            gold_evidence=None if gold is None else frozenset((int(a), int(b)) for a, b in gold),
        )


@dataclass(frozen=True)
class Passage:
    """Sentences joined by single spaces.

    ``sentence_boundaries[i]`` is the start offset of sentence ``i``; the final
    entry is ``len(resolved_text) + 1`` so sentence ``i`` always occupies
    ``[boundaries[i], boundaries[i + 1] - 1)``.
    """

    units: tuple[Unit, ...]
    resolved_text: str
    sentence_boundaries: tuple[int, ...]

    def sentence_span(self, i: int) -> CharSpan:
        return self.sentence_boundaries[i], self.sentence_boundaries[i + 1] - 1

    def sentence(self, i: int) -> str:
        start, end = self.sentence_span(i)
        return self.resolved_text[start:end]

    def __len__(self) -> int:
        return len(self.units)


def make_passage(example: MultiHopExample, units: Iterable[Unit]) -> Passage:
    units = tuple(units)
    texts = [example.sentence_text(u) for u in units]
    bounds = [0]
    for t in texts:
        bounds.append(bounds[-1] + len(t) + 1)
    if not texts:
        bounds = [0]
    return Passage(units, " ".join(texts), tuple(bounds))


def paragraph_units(example: MultiHopExample, pids: Sequence[int]) -> list[Unit]:
    return [u for pid in pids for u in example.paragraphs[pid].units]


def locate_answer(passage: Passage, answer: Answer, anchor: Optional[Unit] = None) -> CharSpan:
    if answer.type != "span":
        raise ValueError("locate_answer needs a span answer")
    text = answer.text
    if anchor is not None and anchor in passage.units:
        i = passage.units.index(anchor)
        start, end = passage.sentence_span(i)
        pos = passage.resolved_text.find(text, start, end)
        if pos >= 0:
            return pos, pos + len(text)
    pos = passage.resolved_text.find(text)
    if pos < 0:
        raise NotFound(text)
    return pos, pos + len(text)


def answer_sentence(example: MultiHopExample) -> Optional[Unit]:
    """First sentence of a positive paragraph containing the answer text (S*)."""
    if example.answer.type != "span":
        return None
    for pid in example.positive_pids:
        for s in example.paragraphs[pid].sentences:
            if example.answer.text in s.text:
                return pid, s.sid
    return None


# ---------------------------------------------------------------------------
# ingestion

@dataclass
class LoadStats:
    n_records: int = 0
    n_loaded: int = 0
    skipped_paragraph_count: int = 0
    skipped_invalid: int = 0


def _record_to_example(rec: dict, index: int) -> MultiHopExample:
    qid = str(rec.get("_id", rec.get("id", f"record-{index}")))
    for key in ("question", "answer", "context", "supporting_facts"):
        if key not in rec:
            raise MalformedRecord(f"record {qid}: missing field {key!r}")
    support_titles = {t for t, _ in rec["supporting_facts"]}
    paragraphs = []
    gold = set()
    for pid, (title, sents) in enumerate(rec["context"]):
        kept = []
        remap = {}
        for orig_sid, text in enumerate(sents):
            text = text.strip()
            if text:
                remap[orig_sid] = len(kept)
                kept.append(Sentence(len(kept), text))
        if not kept:
            kept = [Sentence(0, title)]
        polarity = POSITIVE if title in support_titles else NEGATIVE
        paragraphs.append(Paragraph(pid, title, tuple(kept), polarity))
        for t, sid in rec["supporting_facts"]:
            if t == title and sid in remap:
                gold.add((pid, remap[sid]))
    ans = str(rec["answer"]).strip()
    answer = Answer(ans, ans) if ans in ("yes", "no") else Answer(ans, "span")
    return MultiHopExample(qid, rec["question"], answer, tuple(paragraphs), frozenset(gold))


def load_distractor_json(path, stats: Optional[LoadStats] = None) -> list[MultiHopExample]:
    """Read a distractor-setting JSON array.

    Records without 10 contexts, or violating the example invariants, are
    skipped and counted in ``stats``; missing fields raise MalformedRecord.
    """
    stats = stats if stats is not None else LoadStats()
    raw = Path(path).read_text(encoding="utf-8")
    if not raw.strip():
        return []
    records = json.loads(raw)
    out = []
    for i, rec in enumerate(records):
        stats.n_records += 1
        ex = _record_to_example(rec, i)
        if len(ex.paragraphs) != 10:
            stats.skipped_paragraph_count += 1
            logger.warning("record %s has %d paragraphs, skipped", ex.qid, len(ex.paragraphs))
            continue
        try:
            ex.validate()
        except ValueError as err:
            stats.skipped_invalid += 1
            logger.warning("record %s skipped: %s", ex.qid, err)
            continue
        out.append(ex)
    stats.n_loaded = len(out)
    return out


def write_jsonl(path, rows: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def read_jsonl(path) -> Iterator[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def save_corpus(path, examples: Iterable[MultiHopExample]) -> None:
    write_jsonl(path, (ex.to_dict() for ex in examples))


def load_corpus(path) -> list[MultiHopExample]:
    return [MultiHopExample.from_dict(d) for d in read_jsonl(path)]


# ---------------------------------------------------------------------------
# tokenization

TOKEN_RE = re.compile(r"\w+|[^\w\s]")

PAD, UNK, CLS, SEP, EOS, SMARK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[EOS]", "[S]"
SPECIALS = (PAD, UNK, CLS, SEP, EOS, SMARK)


def word_spans(text: str) -> list[tuple[str, int, int]]:
    return [(m.group().lower(), m.start(), m.end()) for m in TOKEN_RE.finditer(text)]


class Vocabulary:
    """Immutable token -> id map with the special tokens at ids 0..5."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            tokens = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self._tokens = tuple(tokens)
        self._index = {t: i for i, t in enumerate(self._tokens)}

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> "Vocabulary":
        counts: dict[str, int] = {}
        for text in texts:
            for tok, _, _ in word_spans(text):
                counts[tok] = counts.get(tok, 0) + 1
        words = sorted(t for t, c in counts.items() if c >= min_count)
        return cls(list(SPECIALS) + words)

    @classmethod
    def from_examples(cls, examples: Iterable[MultiHopExample]) -> "Vocabulary":
        def texts():
            for ex in examples:
                yield ex.question
                yield ex.answer.text
                for p in ex.paragraphs:
                    for s in p.sentences:
                        yield s.text
        return cls.build(texts())

    def __len__(self) -> int:
        return len(self._tokens)

    def __getitem__(self, token: str) -> int:
        return self._index.get(token, self._index[UNK])

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    pad_id = property(lambda self: self._index[PAD])
    unk_id = property(lambda self: self._index[UNK])
    cls_id = property(lambda self: self._index[CLS])
    sep_id = property(lambda self: self._index[SEP])
    eos_id = property(lambda self: self._index[EOS])
    marker_id = property(lambda self: self._index[SMARK])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(list(self._tokens)), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class Encoding:
    ids: list[int]
    passage_start: int  # index of first passage token (== len(question) + 2)
    n_passage_tokens: int  # kept passage word tokens, markers excluded
    passage_positions: list[int]  # sequence index of each kept passage word token
    token_char_spans: list[CharSpan]  # char span in resolved_text per kept passage token
    char_to_token: list[int]  # per passage char -> sequence index (eos index past the end)
    eos_index: int
    marker_positions: list[int] = field(default_factory=list)  # one per sentence kept
    n_dropped_tokens: int = 0

    def __len__(self) -> int:
        return len(self.ids)

    def token_span(self, span: CharSpan) -> tuple[int, int]:
        start, end = span
        if end <= start:
            raise ValueError("empty char span")
        if end > len(self.char_to_token):
            raise TruncatedAnswer(span)
        s_tok, e_tok = self.char_to_token[start], self.char_to_token[end - 1]
        if s_tok == self.eos_index or e_tok == self.eos_index:
            raise TruncatedAnswer(span)
        return s_tok, e_tok

    def char_span(self, s_tok: int, e_tok: int) -> CharSpan:
        first = self.passage_positions.index(s_tok)
        last = self.passage_positions.index(e_tok)
        return self.token_char_spans[first][0], self.token_char_spans[last][1]


def tokenize(question: str, passage: Passage, vocab: Vocabulary, budget: int = 128,
             markers: bool = False) -> Encoding:
    """Encode ``[CLS] question [SEP] passage [EOS]``; truncation drops trailing passage tokens.

    With ``markers`` an ``[S]`` token follows the last token of every sentence.
    """
    q_ids = [vocab[t] for t, _, _ in word_spans(question)]
    if budget < len(q_ids) + 3:
        raise ValueError(f"budget {budget} too small for question of {len(q_ids)} tokens")
    room = budget - len(q_ids) - 3

    # passage stream: (token id, char span or None for markers)
    stream: list[tuple[int, Optional[CharSpan]]] = []
    text = passage.resolved_text
    spans = word_spans(text)
    if markers:
        j = 0
        for i in range(len(passage.units)):
            _, end = passage.sentence_span(i)
            while j < len(spans) and spans[j][1] < end:
                tok, s, e = spans[j]
                stream.append((vocab[tok], (s, e)))
                j += 1
            stream.append((vocab.marker_id, None))
    else:
        stream = [(vocab[tok], (s, e)) for tok, s, e in spans]

    kept, dropped = stream[:room], stream[room:]
    ids = [vocab.cls_id] + q_ids + [vocab.sep_id]
    passage_start = len(ids)
    positions, char_spans, marker_positions = [], [], []
    for tid, span in kept:
        if span is None:
            marker_positions.append(len(ids))
        else:
            positions.append(len(ids))
            char_spans.append(span)
        ids.append(tid)
    eos_index = len(ids)
    ids.append(vocab.eos_id)

    # first kept token ending after c: the containing token, or the next one in gaps
    char_to_token = []
    k = 0
    for c in range(len(text)):
        while k < len(char_spans) and char_spans[k][1] <= c:
            k += 1
        char_to_token.append(positions[k] if k < len(char_spans) else eos_index)
    return Encoding(
        ids=ids,
        passage_start=passage_start,
        n_passage_tokens=len(char_spans),
        passage_positions=positions,
        token_char_spans=char_spans,
        char_to_token=char_to_token,
        eos_index=eos_index,
        marker_positions=marker_positions,
        n_dropped_tokens=sum(1 for _, s in dropped if s is not None),
    )
