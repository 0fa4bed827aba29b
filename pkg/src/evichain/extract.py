"""Iterative complementary-evidence extraction over a single passage.

Each retrieval step ranks the not-yet-selected sentences against the current
query vector, then rewrites the query so the next step focuses on the parts
of the statement whose evidence is still missing.  Hard masking zeroes the
raw score of query tokens that literally appear in the newly retrieved
sentence; soft masking lowers a token's raw score to minus its best dot
product match among the evidence tokens (a running, monotone best-match) and
renormalizes with a lambda-softmax.  A beam keeps the top chains per step;
every surviving chain of every length is returned so integration can choose
how much evidence each statement actually needs.

Two non-masking baselines share the machinery: one-off top-k selection under
the initial uniform query, and an append-style update that concatenates the
retrieved sentence onto the query instead of masking it out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .corpus import Passage
from .embed import (
    EmbeddingTable,
    QueryMode,
    WeightedQuery,
    compose_query,
    init_query,
    softmax,
)
from .scorers import CosineSentenceScorer, PairScorer, ScorerHandle, ScorerKind


class ExtractMode(Enum):
    HARD_MASK = "hard_mask"
    SOFT_MASK = "soft_mask"
    ONE_OFF_TOPK = "one_off_topk"
    QUERY_APPEND = "query_append"


@dataclass
class ExtractorConfig:
    mode: ExtractMode = ExtractMode.SOFT_MASK
    max_steps: int = 2
    beam_width: int = 2
    lam: float = 1.0
    topk: int = 1
    scorer: ScorerHandle = field(default_factory=lambda: ScorerHandle(ScorerKind.COSINE))

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.lam <= 0:
            raise ValueError("lambda must be > 0")


@dataclass
class EvidenceChain:
    """Sentence indices in selection order plus the cumulative retrieval score."""

    sentence_indices: tuple[int, ...]
    score: float
    query_state: WeightedQuery

    def __post_init__(self) -> None:
        if len(set(self.sentence_indices)) != len(self.sentence_indices):
            raise ValueError(f"chain repeats a sentence: {self.sentence_indices}")


def hard_mask_update(wq: WeightedQuery, evidence_tokens: Sequence[str] | set[str]) -> WeightedQuery:
    """Zero the raw score of query tokens that appear verbatim in the evidence.

    Remaining raw scores renormalize to the new weights.  If every token has
    been covered the query is marked coverage-complete (beta is all zeros and
    must not be used); extraction stops growing that chain.
    """
    if wq.mode is not QueryMode.HARD:
        raise ValueError("hard_mask_update requires a hard-mode query")
    evidence = set(evidence_tokens)
    mask = np.array([t in evidence for t in wq.tokens])
    alpha = np.where(mask, 0.0, wq.alpha)
    total = float(alpha.sum())
    if total == 0.0:
        return WeightedQuery(
            tokens=wq.tokens,
            alpha=alpha,
            beta=np.zeros_like(alpha),
            step=wq.step + 1,
            mode=QueryMode.HARD,
            coverage_complete=True,
        )
    return WeightedQuery(
        tokens=wq.tokens, alpha=alpha, beta=alpha / total, step=wq.step + 1, mode=QueryMode.HARD
    )


def soft_mask_update(
    wq: WeightedQuery,
    evidence_token_vectors: Sequence[np.ndarray],
    lam: float,
    table: EmbeddingTable,
) -> WeightedQuery:
    """Down-weight query tokens by their best dot-product match in the evidence.

    alpha'_i = -max(max_j(q_i . c_j), -alpha_i), which keeps a running best
    match: alpha never increases across updates.  beta is the lambda-softmax
    of the new alphas.
    """
    if wq.mode is not QueryMode.SOFT:
        raise ValueError("soft_mask_update requires a soft-mode query")
    if not evidence_token_vectors:
        raise ValueError("evidence for a soft-mask update must be non-empty")
    alpha = np.empty(len(wq.tokens), dtype=np.float64)
    for i, token in enumerate(wq.tokens):
        qi = table.lookup(token)
        best = max(float(np.dot(qi, c)) for c in evidence_token_vectors)
        alpha[i] = -max(best, -float(wq.alpha[i]))
    return WeightedQuery(
        tokens=wq.tokens,
        alpha=alpha,
        beta=softmax(alpha, lam),
        step=wq.step + 1,
        mode=QueryMode.SOFT,
    )


def rank_step(
    query_vec: np.ndarray,
    passage: Passage,
    excluded: set[int],
    scorer: CosineSentenceScorer,
) -> list[tuple[int, float]]:
    """Score every non-excluded sentence; sort by score descending, ties by index."""
    bad = [i for i in excluded if not 0 <= i < len(passage)]
    if bad:
        raise ValueError(f"excluded indices {sorted(bad)} out of range for passage {passage.id!r}")
    scored = [
        (i, scorer.score(query_vec, passage, i)) for i in range(len(passage)) if i not in excluded
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def _chain_order(chain: EvidenceChain) -> tuple:
    return (-chain.score, chain.sentence_indices)


def _masking_updater(
    config: ExtractorConfig, passage: Passage, table: EmbeddingTable
) -> Callable[[WeightedQuery, int], WeightedQuery]:
    if config.mode is ExtractMode.HARD_MASK:
        return lambda wq, idx: hard_mask_update(wq, set(passage.sentences[idx]))
    if config.mode is ExtractMode.SOFT_MASK:
        def update(wq: WeightedQuery, idx: int) -> WeightedQuery:
            vectors = [table.lookup(t) for t in passage.sentences[idx]]
            return soft_mask_update(wq, vectors, config.lam, table)

        return update
    raise ValueError(f"beam_extract does not handle mode {config.mode}")


def _append_updater(passage: Passage) -> Callable[[WeightedQuery, int], WeightedQuery]:
    def update(wq: WeightedQuery, idx: int) -> WeightedQuery:
        tokens = wq.tokens + tuple(passage.sentences[idx])
        alpha = np.ones(len(tokens), dtype=np.float64)
        return WeightedQuery(
            tokens=tokens,
            alpha=alpha,
            beta=alpha / alpha.sum(),
            step=wq.step + 1,
            mode=QueryMode.HARD,
        )

    return update


def _beam_search(
    option_tokens: Sequence[str],
    passage: Passage,
    config: ExtractorConfig,
    table: EmbeddingTable,
    initial: WeightedQuery,
    update: Callable[[WeightedQuery, int], WeightedQuery],
) -> list[EvidenceChain]:
    scorer = CosineSentenceScorer(table)
    ranked = rank_step(compose_query(initial, table), passage, set(), scorer)
    beam = [
        EvidenceChain((idx,), score, update(initial, idx))
        for idx, score in ranked[: config.beam_width]
    ]
    pool = list(beam)
    for _ in range(config.max_steps - 1):
        expanded: list[EvidenceChain] = []
        for chain in beam:
            if chain.query_state.coverage_complete:
                continue
            query_vec = compose_query(chain.query_state, table)
            ranked = rank_step(query_vec, passage, set(chain.sentence_indices), scorer)
            for idx, score in ranked[: config.beam_width]:
                expanded.append(
                    EvidenceChain(
                        chain.sentence_indices + (idx,),
                        chain.score + score,
                        update(chain.query_state, idx),
                    )
                )
        if not expanded:
            break
        expanded.sort(key=_chain_order)
        beam = expanded[: config.beam_width]
        pool.extend(beam)
    pool.sort(key=_chain_order)
    return pool


def beam_extract(
    option_tokens: Sequence[str],
    passage: Passage,
    config: ExtractorConfig,
    table: EmbeddingTable,
) -> list[EvidenceChain]:
    """Run masked iterative extraction; return every surviving chain, best first.

    Chains of all lengths 1..max_steps survive as integration candidates.
    Coverage-complete chains stop growing but stay in the pool.  All ties are
    broken by ascending sentence index, then chain lexicographic order.
    """
    if config.mode not in (ExtractMode.HARD_MASK, ExtractMode.SOFT_MASK):
        raise ValueError(f"beam_extract requires a masking mode, got {config.mode}")
    mode = QueryMode.HARD if config.mode is ExtractMode.HARD_MASK else QueryMode.SOFT
    initial = init_query(option_tokens, mode)
    return _beam_search(
        option_tokens, passage, config, table, initial, _masking_updater(config, passage, table)
    )


def query_append_extract(
    option_tokens: Sequence[str],
    passage: Passage,
    config: ExtractorConfig,
    table: EmbeddingTable,
) -> list[EvidenceChain]:
    """Beam extraction whose update concatenates the retrieved sentence's tokens
    onto the query with uniform reweighting (append-style baseline)."""
    initial = init_query(option_tokens, QueryMode.HARD)
    return _beam_search(option_tokens, passage, config, table, initial, _append_updater(passage))


def one_off_topk(
    option_tokens: Sequence[str],
    passage: Passage,
    k: int,
    scorer: PairScorer,
) -> EvidenceChain:
    """Select the k highest-scoring sentences under the initial query, no updates.

    k larger than the passage selects every sentence.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not option_tokens:
        raise ValueError("cannot extract for an empty option")
    scores = scorer.score(option_tokens, list(passage.sentences))
    ranked = sorted(enumerate(scores), key=lambda pair: (-pair[1], pair[0]))
    chosen = ranked[: min(k, len(passage))]
    return EvidenceChain(
        sentence_indices=tuple(idx for idx, _ in chosen),
        score=float(sum(score for _, score in chosen)),
        query_state=init_query(option_tokens, QueryMode.HARD),
    )
