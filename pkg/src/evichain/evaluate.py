"""Evidence-quality metrics (P/R/F1 against gold sentences) and QA accuracy.

Evidence metrics are computed per option and macro-averaged; pooled (micro)
counts are reported alongside for comparison.  Options without gold
annotations are skipped and counted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import QuestionInstance


@dataclass(frozen=True)
class OptionPrf:
    """P/R/F1 for one option, with the raw counts needed for pooling."""

    qid: str
    option_index: int
    precision: float
    recall: float
    f1: float
    n_predicted: int
    n_gold: int
    n_intersection: int
    empty_prediction: bool = False


@dataclass
class EvidenceReport:
    per_option: list[OptionPrf]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    micro_f1: float
    options_evaluated: int
    options_skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
            "micro": {
                "precision": self.micro_precision,
                "recall": self.micro_recall,
                "f1": self.micro_f1,
            },
            "options_evaluated": self.options_evaluated,
            "options_skipped": self.options_skipped,
            "empty_predictions": sum(1 for o in self.per_option if o.empty_prediction),
        }


@dataclass
class QaReport:
    accuracy: float
    correct: int
    total: int
    per_question: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "correct": self.correct,
            "total": self.total,
            "per_question": self.per_question,
        }


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0


def evidence_prf(predicted: set[int], gold: set[int]) -> tuple[float, float, float]:
    """Precision/recall/F1 of predicted vs gold sentence indices.

    Empty predictions score precision 0.0 by convention (flagged at report
    level); empty gold sets are a caller error and must be skipped upstream.
    """
    if not gold:
        raise ValueError("gold evidence set must be non-empty")
    inter = len(set(predicted) & set(gold))
    p = inter / len(predicted) if predicted else 0.0
    r = inter / len(gold)
    return (p, r, _f1(p, r))


def option_prf(qid: str, option_index: int, predicted: set[int], gold: set[int]) -> OptionPrf:
    p, r, f1 = evidence_prf(predicted, gold)
    return OptionPrf(
        qid=qid,
        option_index=option_index,
        precision=p,
        recall=r,
        f1=f1,
        n_predicted=len(predicted),
        n_gold=len(gold),
        n_intersection=len(set(predicted) & set(gold)),
        empty_prediction=not predicted,
    )


def aggregate(reports: Sequence[OptionPrf], options_skipped: int = 0) -> EvidenceReport:
    """Macro-average per-option metrics; also pool counts for micro metrics."""
    if not reports:
        raise ValueError("aggregate needs at least one option report")
    n = len(reports)
    macro_p = sum(r.precision for r in reports) / n
    macro_r = sum(r.recall for r in reports) / n
    macro_f1 = sum(r.f1 for r in reports) / n
    total_pred = sum(r.n_predicted for r in reports)
    total_gold = sum(r.n_gold for r in reports)
    total_inter = sum(r.n_intersection for r in reports)
    micro_p = total_inter / total_pred if total_pred else 0.0
    micro_r = total_inter / total_gold if total_gold else 0.0
    return EvidenceReport(
        per_option=list(reports),
        macro_precision=macro_p,
        macro_recall=macro_r,
        macro_f1=macro_f1,
        micro_precision=micro_p,
        micro_recall=micro_r,
        micro_f1=_f1(micro_p, micro_r),
        options_evaluated=n,
        options_skipped=options_skipped,
    )


def qa_accuracy(predictions: Mapping[str, int], questions: Sequence[QuestionInstance]) -> QaReport:
    """Fraction of questions whose predicted option matches the gold answer."""
    if not questions:
        raise ValueError("qa_accuracy needs at least one question")
    per_question = []
    correct = 0
    for q in questions:
        if q.qid not in predictions:
            raise ValueError(f"missing prediction for question {q.qid!r}")
        predicted = predictions[q.qid]
        hit = predicted == q.answer_index
        correct += hit
        per_question.append(
            {"qid": q.qid, "predicted": predicted, "gold": q.answer_index, "correct": hit}
        )
    return QaReport(
        accuracy=correct / len(questions),
        correct=correct,
        total=len(questions),
        per_question=per_question,
    )


def write_methods_csv(rows: Sequence[Mapping[str, object]], path: str | Path) -> None:
    """Write one row per method (method, P, R, F1, Acc), Table-style."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["method", "P", "R", "F1", "Acc"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
