"""Pairwise option competition: verifier scores, hinge losses, answer selection.

A verifier g(option, evidence) says how well retrieved evidence supports a
statement.  Training pits the question's options against each other with a
margin hinge: for most-consistent questions the correct option's score must
exceed every sibling's by the margin; for most-contradictory questions every
sibling must exceed the answer's.  At inference the polarity decides between
argmax and argmin.

The in-process verifier is a linear model over four interpretable features
(embedding cosine, token-overlap ratio, bounded BM25, length ratio); a neural
verifier can be plugged in through the external scorer protocol instead.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Polarity, QuestionInstance
from .embed import EmbeddingTable, sentence_vector
from .scorers import Bm25Index, cosine, strip_separators

FEATURE_NAMES = ("cosine", "token_overlap", "bm25", "length_ratio")


@dataclass(frozen=True)
class VerifierScore:
    """A verifier's judgment of one (option, evidence) pair.

    The feature vector is carried for trainable scorers; opaque scorers
    (the external protocol) leave it empty.
    """

    value: float
    features: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError(f"verifier score must be finite, got {self.value}")


def hinge_loss_consistent(g_pos: float, g_negs: Sequence[float], margin: float = 0.5) -> float:
    """Sum of max(0, -g_pos + g_neg_i + margin) over the incorrect options."""
    if not g_negs:
        raise ValueError("at least one negative score is required")
    return float(sum(max(0.0, -g_pos + g_neg + margin) for g_neg in g_negs))


def hinge_loss_contradictory(g_neg: float, g_poss: Sequence[float], margin: float = 0.5) -> float:
    """Sum of max(0, -g_pos_i + g_neg + margin) over the consistent options."""
    if not g_poss:
        raise ValueError("at least one positive score is required")
    return float(sum(max(0.0, -g_pos + g_neg + margin) for g_pos in g_poss))


def select_answer(question: QuestionInstance, scores: Sequence[float]) -> int:
    """argmax for most-consistent questions, argmin for most-contradictory;
    ties go to the lowest option index."""
    if len(scores) != 4:
        raise ValueError(f"expected 4 scores, got {len(scores)}")
    if question.polarity is Polarity.MOST_CONSISTENT:
        best = max(scores)
    else:
        best = min(scores)
    return next(i for i, s in enumerate(scores) if s == best)


def compute_features(
    option_tokens: Sequence[str],
    evidence_tokens: Sequence[str],
    bm25_index: Bm25Index,
    table: EmbeddingTable,
) -> np.ndarray:
    """Feature vector for g(option, evidence); separators are stripped first.

    BM25 is bounded via x/(1+x); the length ratio is min/max of the two token
    counts so it stays in (0, 1].
    """
    option = strip_separators(option_tokens)
    evidence = strip_separators(evidence_tokens)
    if not option:
        raise ValueError("option has no content tokens")
    if not evidence:
        return np.zeros(len(FEATURE_NAMES), dtype=np.float64)
    cos = cosine(sentence_vector(option, table), sentence_vector(evidence, table))
    overlap = len(set(option) & set(evidence)) / len(set(option))
    raw_bm25 = bm25_index.score_tokens(option, evidence)
    bounded_bm25 = raw_bm25 / (1.0 + raw_bm25)
    length_ratio = min(len(option), len(evidence)) / max(len(option), len(evidence))
    return np.array([cos, overlap, bounded_bm25, length_ratio], dtype=np.float64)


@dataclass
class LinearVerifier:
    """Linear scorer over the verifier features: g = w . phi + bias."""

    weights: np.ndarray
    bias: float = 0.0
    feature_names: tuple[str, ...] = FEATURE_NAMES
    objective: str = "pairwise"

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.feature_names),):
            raise ValueError(
                f"weight vector length {self.weights.shape} != feature count {len(self.feature_names)}"
            )

    def score(self, features: np.ndarray) -> float:
        return float(np.dot(self.weights, features) + self.bias)

    def score_with_features(self, features: np.ndarray) -> VerifierScore:
        return VerifierScore(value=self.score(features), features=tuple(float(f) for f in features))

    def to_dict(self) -> dict:
        return {
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "features": list(self.feature_names),
            "objective": self.objective,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LinearVerifier":
        return cls(
            weights=np.asarray(data["weights"], dtype=np.float64),
            bias=float(data["bias"]),
            feature_names=tuple(data["features"]),
            objective=data.get("objective", "pairwise"),
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "LinearVerifier":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class CompetitionConfig:
    margin: float = 0.5
    learning_rate: float = 0.1
    epochs: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ValueError("margin must be > 0")


@dataclass
class QuestionExample:
    """One training question: a 4 x F feature matrix plus answer and polarity."""

    features: np.ndarray
    answer_index: int
    polarity: Polarity
    qid: str = ""

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != 4:
            raise ValueError(f"expected a 4 x F feature matrix, got {self.features.shape}")
        if not 0 <= self.answer_index < 4:
            raise ValueError(f"answer_index {self.answer_index} out of range")


def pairwise_question_loss(
    weights: np.ndarray, bias: float, example: QuestionExample, margin: float
) -> float:
    scores = example.features @ weights + bias
    ans = example.answer_index
    others = [float(scores[i]) for i in range(4) if i != ans]
    if example.polarity is Polarity.MOST_CONSISTENT:
        return hinge_loss_consistent(float(scores[ans]), others, margin)
    return hinge_loss_contradictory(float(scores[ans]), others, margin)


def pairwise_question_grad(
    weights: np.ndarray, bias: float, example: QuestionExample, margin: float
) -> np.ndarray:
    """Subgradient of the question's hinge loss wrt the weights.

    A hinge exactly at its kink contributes zero (the max's left branch); the
    bias gradient is identically zero because only score differences enter.
    """
    scores = example.features @ weights + bias
    ans = example.answer_index
    grad = np.zeros_like(weights)
    for i in range(4):
        if i == ans:
            continue
        if example.polarity is Polarity.MOST_CONSISTENT:
            if -scores[ans] + scores[i] + margin > 0:
                grad += example.features[i] - example.features[ans]
        else:
            if -scores[i] + scores[ans] + margin > 0:
                grad += example.features[ans] - example.features[i]
    return grad


def pairwise_total_loss(
    weights: np.ndarray, bias: float, examples: Sequence[QuestionExample], margin: float
) -> float:
    return float(sum(pairwise_question_loss(weights, bias, ex, margin) for ex in examples))


def train_linear_verifier(
    examples: Sequence[QuestionExample], config: CompetitionConfig
) -> tuple[LinearVerifier, list[float]]:
    """Subgradient descent on the summed pairwise hinge losses.

    Deterministic given the seed (per-epoch shuffle of the question order).
    Returns the trained verifier and the loss trace: entry 0 is the loss at
    initialization, entry e the loss after epoch e.
    """
    if not examples:
        raise ValueError("cannot train on an empty example set")
    n_features = examples[0].features.shape[1]
    weights = np.zeros(n_features, dtype=np.float64)
    bias = 0.0
    rng = random.Random(config.seed)
    trace = [pairwise_total_loss(weights, bias, examples, config.margin)]
    for _ in range(config.epochs):
        order = list(range(len(examples)))
        rng.shuffle(order)
        for qi in order:
            grad = pairwise_question_grad(weights, bias, examples[qi], config.margin)
            weights = weights - config.learning_rate * grad
        trace.append(pairwise_total_loss(weights, bias, examples, config.margin))
    names = FEATURE_NAMES if n_features == len(FEATURE_NAMES) else tuple(
        f"f{i}" for i in range(n_features)
    )
    return LinearVerifier(weights=weights, bias=bias, feature_names=names), trace


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def pointwise_total_loss(
    weights: np.ndarray, bias: float, examples: Sequence[QuestionExample]
) -> float:
    total = 0.0
    for ex in examples:
        scores = ex.features @ weights + bias
        probs = _sigmoid(scores)
        for i in range(4):
            y = 1.0 if i == ex.answer_index else 0.0
            p = min(max(float(probs[i]), 1e-12), 1.0 - 1e-12)
            total += -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(total)


def train_pointwise_verifier(
    examples: Sequence[QuestionExample], config: CompetitionConfig
) -> tuple[LinearVerifier, list[float]]:
    """Independent-option baseline: logistic regression on is-answer labels.

    Used by the no-competition ablation; selection is then always the argmax
    of the predicted answer probability, regardless of polarity.
    """
    if not examples:
        raise ValueError("cannot train on an empty example set")
    n_features = examples[0].features.shape[1]
    weights = np.zeros(n_features, dtype=np.float64)
    bias = 0.0
    rng = random.Random(config.seed)
    trace = [pointwise_total_loss(weights, bias, examples)]
    for _ in range(config.epochs):
        order = list(range(len(examples)))
        rng.shuffle(order)
        for qi in order:
            ex = examples[qi]
            scores = ex.features @ weights + bias
            probs = _sigmoid(scores)
            grad_w = np.zeros_like(weights)
            grad_b = 0.0
            for i in range(4):
                y = 1.0 if i == ex.answer_index else 0.0
                err = float(probs[i]) - y
                grad_w += err * ex.features[i]
                grad_b += err
            weights = weights - config.learning_rate * grad_w
            bias = bias - config.learning_rate * grad_b
        trace.append(pointwise_total_loss(weights, bias, examples))
    names = FEATURE_NAMES if n_features == len(FEATURE_NAMES) else tuple(
        f"f{i}" for i in range(n_features)
    )
    return (
        LinearVerifier(weights=weights, bias=bias, feature_names=names, objective="pointwise"),
        trace,
    )
