"""End-to-end orchestration shared by the CLI and the test harness.

Stages communicate through files so each one is independently runnable:
extraction writes per-option evidence records, training fits a verifier on
them, answering scores options against their evidence, evaluation compares
against gold annotations.  Everything here is deterministic given the seed
and canonical output ordering (sorted by qid, then option index), at any
worker count.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .compete import (
    CompetitionConfig,
    LinearVerifier,
    QuestionExample,
    compute_features,
    select_answer,
    train_linear_verifier,
    train_pointwise_verifier,
)
from .corpus import Passage, QuestionInstance
from .embed import EmbeddingTable
from .evaluate import EvidenceReport, QaReport, aggregate, option_prf, qa_accuracy
from .extract import (
    EvidenceChain,
    ExtractMode,
    ExtractorConfig,
    beam_extract,
    one_off_topk,
    query_append_extract,
)
from .integrate import assemble, concat_in_passage_order, rerank_and_select
from .scorers import (
    Bm25Index,
    Bm25PairScorer,
    CosinePairScorer,
    ExternalPairScorer,
    ExternalScorer,
    PairScorer,
    ScorerError,
    strip_separators,
)

logger = logging.getLogger("evichain")

SIDECAR_ENV_VAR = "EVICHAIN_SIDECAR_CMD"

ABLATIONS = frozenset({"no_iterative", "no_integration", "no_competition"})

EXTRACTION_METHODS = (
    "soft_mask",
    "hard_mask",
    "query_append",
    "one_off_topk",
    "bm25_top1",
    "bm25_top2",
    "cosine_top1",
    "cosine_top2",
)


@dataclass(frozen=True)
class PipelineSettings:
    """Flat pipeline configuration; every field is CLI/config overridable."""

    mode: str = "soft_mask"
    topk: int = 1
    one_off_scorer: str = "cosine"
    max_steps: int = 2
    beam_width: int = 2
    lam: float = 1.0
    rerank: str = "cosine"
    verifier: str = "linear"
    margin: float = 0.5
    learning_rate: float = 0.1
    epochs: int = 80
    seed: int = 0
    workers: int = 1
    ablate: frozenset[str] = frozenset()
    sidecar_cmd: str | None = None
    external_timeout: float = 30.0
    external_fallback: bool = True
    bm25_k1: float = 1.2
    bm25_b: float = 0.75

    def __post_init__(self) -> None:
        if self.mode not in EXTRACTION_METHODS:
            raise ValueError(f"unknown extraction mode {self.mode!r}; choose from {EXTRACTION_METHODS}")
        unknown = self.ablate - ABLATIONS
        if unknown:
            raise ValueError(f"unknown ablation flags {sorted(unknown)}; choose from {sorted(ABLATIONS)}")


@dataclass(frozen=True)
class EvidenceRecord:
    """One line of the evidence file: the selected chain for one option."""

    qid: str
    option_index: int
    sentence_indices: tuple[int, ...]
    score: float


def parse_method(name: str) -> tuple[str, frozenset[str]]:
    """Parse 'soft_mask' or 'soft_mask:no_integration' into (base, ablations)."""
    base, *ablations = name.split(":")
    if base not in EXTRACTION_METHODS:
        raise ValueError(f"unknown method {base!r}; choose from {EXTRACTION_METHODS}")
    bad = set(ablations) - ABLATIONS
    if bad:
        raise ValueError(f"unknown ablation flags {sorted(bad)} in method {name!r}")
    return base, frozenset(ablations)


class FallbackPairScorer(PairScorer):
    """Uses the primary scorer until it errors, then the fallback for good."""

    def __init__(self, primary: PairScorer, fallback: PairScorer):
        self.primary = primary
        self.fallback = fallback
        self._failed = False

    def score(self, query_tokens, candidates):
        if not self._failed:
            try:
                return self.primary.score(query_tokens, candidates)
            except ScorerError as exc:
                logger.warning("external scorer failed (%s); falling back to cosine", exc)
                self._failed = True
        return self.fallback.score(query_tokens, candidates)


def make_rerank_scorer(settings: PipelineSettings, table: EmbeddingTable) -> PairScorer:
    if settings.rerank == "cosine":
        return CosinePairScorer(table)
    if settings.rerank == "external":
        command = os.environ.get(SIDECAR_ENV_VAR) or settings.sidecar_cmd
        if not command:
            raise ValueError(
                f"rerank scorer 'external' needs sidecar_cmd (or ${SIDECAR_ENV_VAR})"
            )
        external = ExternalPairScorer(ExternalScorer(command, timeout=settings.external_timeout))
        if settings.external_fallback:
            return FallbackPairScorer(external, CosinePairScorer(table))
        return external
    raise ValueError(f"unknown rerank scorer {settings.rerank!r}")


def _one_off(
    base: str,
    option_tokens: Sequence[str],
    passage: Passage,
    table: EmbeddingTable,
    settings: PipelineSettings,
) -> EvidenceChain:
    if base == "one_off_topk":
        k, scorer_kind = settings.topk, settings.one_off_scorer
    else:
        kind, _, top = base.partition("_top")
        k, scorer_kind = int(top), kind
    if scorer_kind == "bm25":
        scorer: PairScorer = Bm25PairScorer(
            Bm25Index(passage.sentences, k1=settings.bm25_k1, b=settings.bm25_b)
        )
    elif scorer_kind == "cosine":
        scorer = CosinePairScorer(table)
    else:
        raise ValueError(f"unknown one-off scorer {scorer_kind!r}")
    return one_off_topk(option_tokens, passage, k, scorer)


def extract_option_evidence(
    option_tokens: Sequence[str],
    passage: Passage,
    table: EmbeddingTable,
    settings: PipelineSettings,
    rerank_scorer: PairScorer | None = None,
):
    """Run the configured extraction method for one option; returns the
    selected IntegratedEvidence."""
    base = settings.mode
    max_steps = 1 if "no_iterative" in settings.ablate else settings.max_steps

    if base in ("one_off_topk", "bm25_top1", "bm25_top2", "cosine_top1", "cosine_top2"):
        chain = _one_off(base, option_tokens, passage, table, settings)
        evidence = assemble(chain, passage)
        return replace(evidence, rerank_score=chain.score)

    config = ExtractorConfig(
        mode=ExtractMode(base),
        max_steps=max_steps,
        beam_width=settings.beam_width,
        lam=settings.lam,
    )
    if base == "query_append":
        chains = query_append_extract(option_tokens, passage, config, table)
    else:
        chains = beam_extract(option_tokens, passage, config, table)

    # The append baseline has no integration stage; ablating integration
    # likewise keeps the top beam chain of the last step.
    if base == "query_append" or "no_integration" in settings.ablate:
        longest = max(len(c.sentence_indices) for c in chains)
        top = next(c for c in chains if len(c.sentence_indices) == longest)
        evidence = assemble(top, passage)
        return replace(evidence, rerank_score=top.score)

    if rerank_scorer is None:
        rerank_scorer = make_rerank_scorer(settings, table)
    candidates = [assemble(c, passage) for c in chains]
    return rerank_and_select(candidates, option_tokens, rerank_scorer)


def _extract_question(
    question: QuestionInstance,
    passage: Passage,
    table: EmbeddingTable,
    settings: PipelineSettings,
    rerank_scorer: PairScorer | None,
) -> list[EvidenceRecord]:
    records = []
    for i, option in enumerate(question.options):
        evidence = extract_option_evidence(
            option.text_tokens, passage, table, settings, rerank_scorer
        )
        records.append(
            EvidenceRecord(
                qid=question.qid,
                option_index=i,
                sentence_indices=evidence.passage_order_indices,
                score=float(evidence.rerank_score),
            )
        )
    return records


_WORKER_STATE: dict = {}


def _worker_init(passages, questions, table, settings) -> None:
    _WORKER_STATE["by_pid"] = {p.id: p for p in passages}
    _WORKER_STATE["by_qid"] = {q.qid: q for q in questions}
    _WORKER_STATE["table"] = table
    _WORKER_STATE["settings"] = settings
    _WORKER_STATE["rerank"] = None


def _worker_extract(qid: str) -> list[EvidenceRecord]:
    settings: PipelineSettings = _WORKER_STATE["settings"]
    if _WORKER_STATE["rerank"] is None:
        # Each worker process owns its scorer (and any sidecar connection).
        _WORKER_STATE["rerank"] = make_rerank_scorer(settings, _WORKER_STATE["table"])
    question = _WORKER_STATE["by_qid"][qid]
    passage = _WORKER_STATE["by_pid"][question.passage_id]
    return _extract_question(
        question, passage, _WORKER_STATE["table"], settings, _WORKER_STATE["rerank"]
    )


def run_extraction(
    passages: Sequence[Passage],
    questions: Sequence[QuestionInstance],
    table: EmbeddingTable,
    settings: PipelineSettings,
) -> list[EvidenceRecord]:
    """Extract evidence for every option; output sorted by (qid, option_index)."""
    qids = sorted(q.qid for q in questions)
    if settings.workers <= 1:
        by_pid = {p.id: p for p in passages}
        by_qid = {q.qid: q for q in questions}
        rerank = make_rerank_scorer(settings, table)
        results = []
        for qid in qids:
            question = by_qid[qid]
            results.extend(
                _extract_question(question, by_pid[question.passage_id], table, settings, rerank)
            )
    else:
        with ProcessPoolExecutor(
            max_workers=settings.workers,
            initializer=_worker_init,
            initargs=(list(passages), list(questions), table, settings),
        ) as pool:
            results = [rec for batch in pool.map(_worker_extract, qids) for rec in batch]
    results.sort(key=lambda r: (r.qid, r.option_index))
    return results


def write_evidence_file(path: str | Path, records: Sequence[EvidenceRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in sorted(records, key=lambda r: (r.qid, r.option_index)):
            fh.write(
                json.dumps(
                    {
                        "qid": r.qid,
                        "option_index": r.option_index,
                        "sentence_indices": list(r.sentence_indices),
                        "score": r.score,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_evidence_file(path: str | Path) -> list[EvidenceRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
                records.append(
                    EvidenceRecord(
                        qid=data["qid"],
                        option_index=int(data["option_index"]),
                        sentence_indices=tuple(int(i) for i in data["sentence_indices"]),
                        score=float(data["score"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"evidence file line {line_no}: {exc}") from exc
    return records


def write_predictions_file(path: str | Path, predictions: Mapping[str, int]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(predictions):
            fh.write(json.dumps({"qid": qid, "predicted_option": predictions[qid]}) + "\n")


def read_predictions_file(path: str | Path) -> dict[str, int]:
    predictions: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
                predictions[data["qid"]] = int(data["predicted_option"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"predictions file line {line_no}: {exc}") from exc
    return predictions


def _evidence_map(records: Sequence[EvidenceRecord]) -> dict[tuple[str, int], EvidenceRecord]:
    return {(r.qid, r.option_index): r for r in records}


def _require_record(rec_map, qid: str, option_index: int) -> EvidenceRecord:
    record = rec_map.get((qid, option_index))
    if record is None:
        raise ValueError(f"no evidence for question {qid!r} option {option_index}")
    return record


def build_examples(
    passages: Sequence[Passage],
    questions: Sequence[QuestionInstance],
    records: Sequence[EvidenceRecord],
    table: EmbeddingTable,
    settings: PipelineSettings,
) -> list[QuestionExample]:
    """Turn (question, selected evidence) pairs into verifier training examples."""
    by_pid = {p.id: p for p in passages}
    rec_map = _evidence_map(records)
    indices_cache: dict[str, Bm25Index] = {}
    examples = []
    for q in sorted(questions, key=lambda q: q.qid):
        passage = by_pid[q.passage_id]
        index = indices_cache.get(passage.id)
        if index is None:
            index = Bm25Index(passage.sentences, k1=settings.bm25_k1, b=settings.bm25_b)
            indices_cache[passage.id] = index
        rows = []
        for i, option in enumerate(q.options):
            record = _require_record(rec_map, q.qid, i)
            _, tokens = concat_in_passage_order(passage, record.sentence_indices)
            rows.append(compute_features(option.text_tokens, tokens, index, table))
        examples.append(
            QuestionExample(
                features=np.stack(rows), answer_index=q.answer_index, polarity=q.polarity, qid=q.qid
            )
        )
    return examples


def train_verifier(
    passages, questions, records, table, settings: PipelineSettings
) -> tuple[LinearVerifier, list[float]]:
    examples = build_examples(passages, questions, records, table, settings)
    config = CompetitionConfig(
        margin=settings.margin,
        learning_rate=settings.learning_rate,
        epochs=settings.epochs,
        seed=settings.seed,
    )
    if "no_competition" in settings.ablate:
        return train_pointwise_verifier(examples, config)
    return train_linear_verifier(examples, config)


def _question_scores(
    question: QuestionInstance,
    passage: Passage,
    rec_map,
    verifier: LinearVerifier | None,
    external: ExternalScorer | None,
    index: Bm25Index,
    table: EmbeddingTable,
) -> list[float]:
    scores = []
    for i, option in enumerate(question.options):
        record = _require_record(rec_map, question.qid, i)
        _, tokens = concat_in_passage_order(passage, record.sentence_indices)
        if external is not None:
            text = " ".join(strip_separators(tokens))
            scores.append(external.score_texts(" ".join(option.text_tokens), [text])[0])
        else:
            assert verifier is not None
            scores.append(verifier.score(compute_features(option.text_tokens, tokens, index, table)))
    return scores


def run_answer(
    passages: Sequence[Passage],
    questions: Sequence[QuestionInstance],
    records: Sequence[EvidenceRecord],
    verifier: LinearVerifier | None,
    table: EmbeddingTable,
    settings: PipelineSettings,
) -> dict[str, int]:
    """Score each option against its evidence and pick the answer per polarity.

    Pointwise (no-competition) verifiers estimate answer probability directly,
    so their prediction is always the argmax; pairwise verifiers estimate
    supportedness and follow the question polarity.
    """
    by_pid = {p.id: p for p in passages}
    rec_map = _evidence_map(records)
    external = None
    if settings.verifier == "external":
        command = os.environ.get(SIDECAR_ENV_VAR) or settings.sidecar_cmd
        if not command:
            raise ValueError(f"verifier 'external' needs sidecar_cmd (or ${SIDECAR_ENV_VAR})")
        external = ExternalScorer(command, timeout=settings.external_timeout)
    indices_cache: dict[str, Bm25Index] = {}
    predictions: dict[str, int] = {}
    pointwise = (verifier is not None and verifier.objective == "pointwise") or (
        "no_competition" in settings.ablate
    )
    try:
        for q in sorted(questions, key=lambda q: q.qid):
            passage = by_pid[q.passage_id]
            index = indices_cache.get(passage.id)
            if index is None:
                index = Bm25Index(passage.sentences, k1=settings.bm25_k1, b=settings.bm25_b)
                indices_cache[passage.id] = index
            scores = _question_scores(q, passage, rec_map, verifier, external, index, table)
            if pointwise:
                best = max(scores)
                predictions[q.qid] = next(i for i, s in enumerate(scores) if s == best)
            else:
                predictions[q.qid] = select_answer(q, scores)
    finally:
        if external is not None:
            external.close()
    return predictions


def evaluate_evidence(
    questions: Sequence[QuestionInstance], records: Sequence[EvidenceRecord]
) -> EvidenceReport | None:
    """Per-option P/R/F1 against gold annotations; None if nothing is annotated."""
    rec_map = _evidence_map(records)
    reports = []
    skipped = 0
    for q in sorted(questions, key=lambda q: q.qid):
        for i, option in enumerate(q.options):
            if option.gold_evidence is None or not option.gold_evidence:
                skipped += 1
                continue
            record = _require_record(rec_map, q.qid, i)
            reports.append(option_prf(q.qid, i, set(record.sentence_indices), set(option.gold_evidence)))
    if not reports:
        return None
    return aggregate(reports, options_skipped=skipped)


def evaluate_qa(questions: Sequence[QuestionInstance], predictions: Mapping[str, int]) -> QaReport:
    ordered = sorted(questions, key=lambda q: q.qid)
    return qa_accuracy(predictions, ordered)


def run_method(
    passages,
    questions,
    table,
    settings: PipelineSettings,
) -> dict:
    """Full extract -> train -> answer -> evaluate run with one settings bundle."""
    records = run_extraction(passages, questions, table, settings)
    if settings.verifier == "external":
        verifier = None
    else:
        verifier, _ = train_verifier(passages, questions, records, table, settings)
    predictions = run_answer(passages, questions, records, verifier, table, settings)
    evidence_report = evaluate_evidence(questions, records)
    qa_report = evaluate_qa(questions, predictions)
    return {
        "records": records,
        "predictions": predictions,
        "evidence": evidence_report,
        "qa": qa_report,
    }


def compare_methods(
    passages,
    questions,
    table,
    method_names: Sequence[str],
    settings: PipelineSettings,
) -> tuple[list[dict], dict[str, dict]]:
    """Run each named method end to end; emit Table-style rows and full results.

    Method names take an optional ':ablation' suffix list, e.g.
    'soft_mask:no_integration'.
    """
    rows = []
    results = {}
    for name in method_names:
        base, ablations = parse_method(name)
        run_settings = replace(settings, mode=base, ablate=settings.ablate | ablations)
        result = run_method(passages, questions, table, run_settings)
        evidence = result["evidence"]
        rows.append(
            {
                "method": name,
                "P": f"{evidence.macro_precision:.4f}" if evidence else "",
                "R": f"{evidence.macro_recall:.4f}" if evidence else "",
                "F1": f"{evidence.macro_f1:.4f}" if evidence else "",
                "Acc": f"{result['qa'].accuracy:.4f}",
            }
        )
        results[name] = result
    return rows, results


def fixture_embedding_table(
    passages: Sequence[Passage],
    questions: Sequence[QuestionInstance],
    dim: int | None = None,
) -> EmbeddingTable:
    """Basis-vector embeddings for synthetic fixtures.

    Tokens are grouped per passage (passage tokens plus its questions' option
    tokens) and each group's vocabulary gets distinct standard-basis vectors,
    so within a passage all token similarities are exactly 0 or 1.  Retrieval
    never crosses passages, so reuse of basis vectors across groups is
    harmless.
    """
    groups: dict[str, set[str]] = {}
    for p in sorted(passages, key=lambda p: p.id):
        groups[p.id] = {t for s in p.sentences for t in s}
    for q in questions:
        vocab = groups.setdefault(q.passage_id, set())
        for option in q.options:
            vocab.update(option.text_tokens)
    width = max((len(v) for v in groups.values()), default=1)
    if dim is None:
        dim = max(width, 1)
    elif dim < width:
        raise ValueError(f"dim {dim} too small for the largest per-passage vocabulary ({width})")
    vectors: dict[str, np.ndarray] = {}
    for pid in sorted(groups):
        for i, token in enumerate(sorted(groups[pid])):
            if token in vectors:
                continue
            vec = np.zeros(dim, dtype=np.float64)
            vec[i] = 1.0
            vectors[token] = vec
    return EmbeddingTable(dim=dim, vectors=vectors)
