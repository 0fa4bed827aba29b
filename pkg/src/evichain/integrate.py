"""Adaptive evidence integration: reorder chains, rerank, pick one per option.

Candidate chains of different lengths are rebuilt in passage order (to keep
whatever discourse relationship the sentences have), deduplicated, and scored
as a whole against the option.  Selecting the argmax adapts the amount of
evidence per statement: a lone relevant sentence beats a chain that drags in
an off-topic one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from .corpus import Passage
from .extract import EvidenceChain
from .scorers import SEPARATOR_TOKEN, PairScorer, strip_separators


@dataclass
class IntegratedEvidence:
    """A chain rebuilt in passage order with its concatenated token text."""

    chain: EvidenceChain
    passage_order_indices: tuple[int, ...]
    text_tokens: tuple[str, ...]
    rerank_score: float = 0.0

    def content_tokens(self) -> list[str]:
        """Concatenated tokens without the structural separator."""
        return strip_separators(self.text_tokens)


def concat_in_passage_order(passage: Passage, indices: Sequence[int]) -> tuple[tuple[int, ...], tuple[str, ...]]:
    """Sort sentence indices ascending and concatenate their tokens with a
    single separator token between consecutive sentences."""
    bad = [i for i in indices if not 0 <= i < len(passage)]
    if bad:
        raise ValueError(f"chain indices {sorted(bad)} out of range for passage {passage.id!r}")
    ordered = tuple(sorted(indices))
    tokens: list[str] = []
    for pos, idx in enumerate(ordered):
        if pos > 0:
            tokens.append(SEPARATOR_TOKEN)
        tokens.extend(passage.sentences[idx])
    return ordered, tuple(tokens)


def assemble(chain: EvidenceChain, passage: Passage) -> IntegratedEvidence:
    """Rebuild a chain in passage order as one concatenated candidate text."""
    ordered, tokens = concat_in_passage_order(passage, chain.sentence_indices)
    return IntegratedEvidence(chain=chain, passage_order_indices=ordered, text_tokens=tokens)


def dedupe_candidates(candidates: Sequence[IntegratedEvidence]) -> list[IntegratedEvidence]:
    """Collapse candidates covering identical sentence sets.

    The survivor is the one with the best chain score (ties: earliest
    selection order, lexicographically), independent of input order.
    """
    best: dict[tuple[int, ...], IntegratedEvidence] = {}
    ranked = sorted(
        candidates, key=lambda c: (-c.chain.score, c.chain.sentence_indices)
    )
    for cand in ranked:
        best.setdefault(cand.passage_order_indices, cand)
    return [best[key] for key in sorted(best)]


def rerank_and_select(
    candidates: Sequence[IntegratedEvidence],
    option_tokens: Sequence[str],
    scorer: PairScorer,
) -> IntegratedEvidence:
    """Score each candidate chain against the option and return the best.

    Ties go to the shorter chain, then the chain with the smaller first
    sentence index; the result never depends on candidate order.
    """
    if not candidates:
        raise ValueError("rerank_and_select needs at least one candidate")
    unique = dedupe_candidates(candidates)
    scores = scorer.score(option_tokens, [c.text_tokens for c in unique])
    ranked = sorted(
        zip(unique, scores),
        key=lambda pair: (-pair[1], len(pair[0].passage_order_indices), pair[0].passage_order_indices),
    )
    winner, score = ranked[0]
    return replace(winner, rerank_score=float(score))
