"""Dataset schema, JSONL loading, and synthetic fixture generation.

A dataset is a UTF-8 JSON-lines file mixing two record kinds discriminated
by a ``kind`` field: passages (pre-tokenized sentence lists) and four-option
verification questions that reference them.  Fixtures are small synthetic
passage/question pairs with known gold evidence, used wherever the real
(non-redistributable) exam data would be.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence


class DatasetError(Exception):
    """A dataset file violates the record schema or cross-references."""


class FixtureError(Exception):
    """A fixture spec is infeasible (e.g. evidence does not fit the passage)."""


class Polarity(Enum):
    """Whether a question asks for the most consistent or most contradictory option."""

    MOST_CONSISTENT = "consistent"
    MOST_CONTRADICTORY = "contradictory"


@dataclass(frozen=True)
class Passage:
    """A pre-tokenized passage: a dense, 0-indexed list of token sentences."""

    id: str
    sentences: tuple[tuple[str, ...], ...]
    raw_text: str | None = None

    def __post_init__(self) -> None:
        if not self.sentences:
            raise ValueError(f"passage {self.id!r}: sentences must be non-empty")
        for i, sent in enumerate(self.sentences):
            if not sent:
                raise ValueError(f"passage {self.id!r}: sentence {i} has no tokens")

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass(frozen=True)
class Option:
    """One candidate statement, optionally annotated with gold evidence indices."""

    text_tokens: tuple[str, ...]
    is_answer: bool
    gold_evidence: frozenset[int] | None = None

    def __post_init__(self) -> None:
        if not self.text_tokens:
            raise ValueError("option has no tokens")
        if self.gold_evidence is not None and len(self.gold_evidence) == 0:
            raise ValueError("gold_evidence, when present, must contain at least one index")


@dataclass(frozen=True)
class QuestionInstance:
    """A four-option verification question tied to one passage."""

    qid: str
    passage_id: str
    polarity: Polarity
    options: tuple[Option, ...]

    def __post_init__(self) -> None:
        if len(self.options) != 4:
            raise ValueError(f"question {self.qid!r}: expected 4 options, got {len(self.options)}")
        n_answers = sum(1 for o in self.options if o.is_answer)
        if n_answers != 1:
            raise ValueError(f"question {self.qid!r}: expected exactly 1 answer option, got {n_answers}")

    @property
    def answer_index(self) -> int:
        return next(i for i, o in enumerate(self.options) if o.is_answer)


def _require(record: dict, key: str, line_no: int):
    if key not in record:
        raise DatasetError(f"line {line_no}: missing field {key!r}")
    return record[key]


def _parse_passage(record: dict, line_no: int) -> Passage:
    pid = _require(record, "id", line_no)
    sentences = _require(record, "sentences", line_no)
    if not isinstance(pid, str):
        raise DatasetError(f"line {line_no}: field 'id' must be a string")
    if not isinstance(sentences, list) or not all(
        isinstance(s, list) and all(isinstance(t, str) for t in s) for s in sentences
    ):
        raise DatasetError(f"line {line_no}: field 'sentences' must be a list of token lists")
    try:
        return Passage(
            id=pid,
            sentences=tuple(tuple(s) for s in sentences),
            raw_text=record.get("raw_text"),
        )
    except ValueError as exc:
        raise DatasetError(f"line {line_no}: field 'sentences': {exc}") from exc


def _parse_question(record: dict, line_no: int) -> QuestionInstance:
    qid = _require(record, "qid", line_no)
    passage_id = _require(record, "passage_id", line_no)
    polarity_raw = _require(record, "polarity", line_no)
    options_raw = _require(record, "options", line_no)
    try:
        polarity = Polarity(polarity_raw)
    except ValueError:
        raise DatasetError(
            f"line {line_no}: field 'polarity': expected 'consistent' or 'contradictory', got {polarity_raw!r}"
        ) from None
    if not isinstance(options_raw, list):
        raise DatasetError(f"line {line_no}: field 'options' must be a list")
    options = []
    for i, opt in enumerate(options_raw):
        if not isinstance(opt, dict):
            raise DatasetError(f"line {line_no}: field 'options[{i}]' must be an object")
        tokens = opt.get("tokens")
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise DatasetError(f"line {line_no}: field 'options[{i}].tokens' must be a list of strings")
        gold = opt.get("gold_evidence")
        if gold is not None and (not isinstance(gold, list) or not all(isinstance(g, int) for g in gold)):
            raise DatasetError(f"line {line_no}: field 'options[{i}].gold_evidence' must be a list of ints or null")
        try:
            options.append(
                Option(
                    text_tokens=tuple(tokens),
                    is_answer=bool(opt.get("is_answer", False)),
                    gold_evidence=frozenset(gold) if gold is not None else None,
                )
            )
        except ValueError as exc:
            raise DatasetError(f"line {line_no}: field 'options[{i}]': {exc}") from exc
    try:
        return QuestionInstance(qid=qid, passage_id=passage_id, polarity=polarity, options=tuple(options))
    except ValueError as exc:
        raise DatasetError(f"line {line_no}: field 'options': {exc}") from exc


def load_dataset(path: str | Path) -> tuple[list[Passage], list[QuestionInstance]]:
    """Load a JSONL dataset, validating the schema and cross-references.

    Raises DatasetError with the offending line number on schema violations,
    and names the qid of any question whose passage_id does not resolve.
    """
    passages: list[Passage] = []
    questions: list[QuestionInstance] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise DatasetError(f"line {line_no}: record must be a JSON object")
            kind = _require(record, "kind", line_no)
            if kind == "passage":
                passages.append(_parse_passage(record, line_no))
            elif kind == "question":
                questions.append(_parse_question(record, line_no))
            else:
                raise DatasetError(f"line {line_no}: field 'kind': unknown record kind {kind!r}")

    by_id: dict[str, Passage] = {}
    for p in passages:
        if p.id in by_id:
            raise DatasetError(f"duplicate passage id {p.id!r}")
        by_id[p.id] = p
    for q in questions:
        passage = by_id.get(q.passage_id)
        if passage is None:
            raise DatasetError(f"question {q.qid!r}: unknown passage_id {q.passage_id!r}")
        for i, opt in enumerate(q.options):
            if opt.gold_evidence is not None:
                bad = [g for g in opt.gold_evidence if not (0 <= g < len(passage))]
                if bad:
                    raise DatasetError(
                        f"question {q.qid!r}: options[{i}].gold_evidence indices {sorted(bad)} "
                        f"out of range for passage {passage.id!r} ({len(passage)} sentences)"
                    )
    return passages, questions


def passage_to_record(passage: Passage) -> dict:
    record = {"kind": "passage", "id": passage.id, "sentences": [list(s) for s in passage.sentences]}
    if passage.raw_text is not None:
        record["raw_text"] = passage.raw_text
    return record


def question_to_record(question: QuestionInstance) -> dict:
    return {
        "kind": "question",
        "qid": question.qid,
        "passage_id": question.passage_id,
        "polarity": question.polarity.value,
        "options": [
            {
                "tokens": list(o.text_tokens),
                "is_answer": o.is_answer,
                "gold_evidence": sorted(o.gold_evidence) if o.gold_evidence is not None else None,
            }
            for o in question.options
        ],
    }


def save_dataset(path: str | Path, passages: Iterable[Passage], questions: Iterable[QuestionInstance]) -> None:
    """Write passages then questions as one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in passages:
            fh.write(json.dumps(passage_to_record(p), ensure_ascii=False) + "\n")
        for q in questions:
            fh.write(json.dumps(question_to_record(q), ensure_ascii=False) + "\n")


@dataclass
class FixtureSpec:
    """Recipe for one synthetic passage/question pair.

    Gold evidence sentences are placed at indices {0, distance, 2*distance, ...}
    and every option is annotated with them.  The answer option of a
    most-consistent question is exactly the union of the gold sentences'
    tokens, so retrieval is guaranteed to be able to recover it; distractors
    replace a fraction of those tokens with out-of-passage corruption tokens.
    For most-contradictory questions the roles flip: the answer is the heavily
    corrupted option and its siblings stay near-faithful (one token off each,
    so the four options stay distinct).

    trap_token_overlap > 0 adds a distractor sentence sharing that fraction of
    the first gold sentence's tokens, which punishes query updates that keep
    re-weighting already-covered tokens.
    """

    sentences: int
    evidence_count: int
    distance: int
    vocabulary: Sequence[str] | None = None
    tokens_per_sentence: int = 4
    polarity: Polarity = Polarity.MOST_CONSISTENT
    corruption_rate: float = 0.5
    trap_token_overlap: float = 0.0
    seed: int = 0
    passage_id: str = "p0"
    qid: str = "q0"


def _gold_indices(spec: FixtureSpec) -> list[int]:
    k, d, n = spec.evidence_count, spec.distance, spec.sentences
    if k < 1:
        raise FixtureError("evidence_count must be >= 1")
    if n < 1:
        raise FixtureError("sentences must be >= 1")
    if k > 1 and d < 1:
        raise FixtureError(f"distance {d} cannot separate {k} distinct evidence sentences")
    span = (k - 1) * d
    if span >= n or k > n:
        raise FixtureError(
            f"evidence_count={k} at distance={d} does not fit in a {n}-sentence passage"
        )
    return [m * d for m in range(k)]


def make_fixture(spec: FixtureSpec) -> tuple[Passage, QuestionInstance]:
    """Generate a deterministic synthetic passage/question pair from a spec."""
    rng = random.Random(spec.seed)
    gold = _gold_indices(spec)
    tps = spec.tokens_per_sentence

    fresh_counter = 0

    def fresh(tag: str) -> str:
        nonlocal fresh_counter
        fresh_counter += 1
        return f"{spec.qid}.{tag}{fresh_counter}"

    def draw_tokens(tag: str, count: int) -> list[str]:
        if spec.vocabulary is not None:
            return [rng.choice(list(spec.vocabulary)) for _ in range(count)]
        return [fresh(tag) for _ in range(count)]

    sentences: list[list[str] | None] = [None] * spec.sentences
    for j in gold:
        sentences[j] = draw_tokens("w", tps)

    non_gold = [j for j in range(spec.sentences) if j not in gold]
    trap_share = int(round(spec.trap_token_overlap * tps))
    if non_gold and trap_share > 0:
        shared = sentences[gold[0]][:trap_share]  # type: ignore[index]
        sentences[non_gold[0]] = shared + draw_tokens("n", tps - trap_share)
        non_gold = non_gold[1:]
    for j in non_gold:
        sentences[j] = draw_tokens("n", tps)

    passage = Passage(id=spec.passage_id, sentences=tuple(tuple(s) for s in sentences))  # type: ignore[misc]

    evidence_union = [tok for j in gold for tok in passage.sentences[j]]
    gold_set = frozenset(gold)

    def corrupted(base: list[str], n_corrupt: int) -> tuple[str, ...]:
        n_corrupt = min(n_corrupt, len(base))
        out = list(base)
        for pos in rng.sample(range(len(base)), n_corrupt):
            out[pos] = fresh("x")
        return tuple(out)

    heavy = max(1, int(round(spec.corruption_rate * len(evidence_union))))
    answer_pos = rng.randrange(4)
    options = []
    for i in range(4):
        if spec.polarity is Polarity.MOST_CONSISTENT:
            tokens = tuple(evidence_union) if i == answer_pos else corrupted(evidence_union, heavy)
        else:
            tokens = corrupted(evidence_union, heavy) if i == answer_pos else corrupted(evidence_union, 1)
        options.append(Option(text_tokens=tokens, is_answer=i == answer_pos, gold_evidence=gold_set))

    question = QuestionInstance(
        qid=spec.qid, passage_id=spec.passage_id, polarity=spec.polarity, options=tuple(options)
    )
    return passage, question


def make_fixture_suite(
    n_questions: int,
    seed: int = 0,
    multi_evidence_fraction: float = 0.5,
    contradictory_fraction: float = 0.5,
    min_sentences: int = 6,
    max_sentences: int = 8,
    tokens_per_sentence: int = 4,
    trap_token_overlap: float = 0.75,
) -> tuple[list[Passage], list[QuestionInstance]]:
    """Generate a mixed k=1 / k=2 suite of fixtures with per-question vocabularies."""
    rng = random.Random(seed)
    passages, questions = [], []
    for i in range(n_questions):
        k = 2 if rng.random() < multi_evidence_fraction else 1
        n_sent = rng.randint(min_sentences, max_sentences)
        distance = rng.randint(1, min(4, n_sent - 1)) if k > 1 else 0
        polarity = (
            Polarity.MOST_CONTRADICTORY
            if rng.random() < contradictory_fraction
            else Polarity.MOST_CONSISTENT
        )
        spec = FixtureSpec(
            sentences=n_sent,
            evidence_count=k,
            distance=distance,
            tokens_per_sentence=tokens_per_sentence,
            polarity=polarity,
            trap_token_overlap=trap_token_overlap,
            seed=rng.randrange(2**31),
            passage_id=f"p{i:04d}",
            qid=f"q{i:04d}",
        )
        passage, question = make_fixture(spec)
        passages.append(passage)
        questions.append(question)
    return passages, questions
