import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import basis_table, make_passage

from evichain.embed import QueryMode, init_query
from evichain.extract import EvidenceChain, ExtractMode, ExtractorConfig, beam_extract
from evichain.corpus import make_fixture_suite
from evichain.integrate import assemble, dedupe_candidates, rerank_and_select
from evichain.pipeline import PipelineSettings, fixture_embedding_table, run_extraction
from evichain.scorers import SEPARATOR_TOKEN, CosinePairScorer, PairScorer


def chain(indices, score=1.0):
    return EvidenceChain(
        sentence_indices=tuple(indices),
        score=score,
        query_state=init_query(("q",), QueryMode.HARD),
    )


def test_assemble_reorders_to_passage_order():
    passage = make_passage("s0 a", "s1 b", "s2 c", "s3 d")
    evidence = assemble(chain([3, 0]), passage)
    assert evidence.passage_order_indices == (0, 3)
    assert evidence.text_tokens == ("s0", "a", SEPARATOR_TOKEN, "s3", "d")


def test_assemble_singleton_unchanged():
    passage = make_passage("s0", "s1", "s2 c")
    evidence = assemble(chain([2]), passage)
    assert evidence.passage_order_indices == (2,)
    assert evidence.text_tokens == ("s2", "c")


def test_assemble_ordered_chain_kept():
    passage = make_passage("s0", "s1 b", "s2 c")
    evidence = assemble(chain([1, 2]), passage)
    assert evidence.passage_order_indices == (1, 2)
    assert evidence.text_tokens == ("s1", "b", SEPARATOR_TOKEN, "s2", "c")


def test_assemble_invalid_index():
    passage = make_passage("s0")
    with pytest.raises(ValueError):
        assemble(chain([4]), passage)


def test_assemble_content_tokens_strip_separator():
    passage = make_passage("a", "b")
    evidence = assemble(chain([0, 1]), passage)
    assert evidence.content_tokens() == ["a", "b"]


def test_dedupe_keeps_best_chain_score():
    passage = make_passage("a", "b")
    low = assemble(chain([1, 0], score=0.4), passage)
    high = assemble(chain([0, 1], score=0.9), passage)
    survivors = dedupe_candidates([low, high])
    assert len(survivors) == 1
    assert survivors[0].chain.score == pytest.approx(0.9)


class FixedScorer(PairScorer):
    def __init__(self, table):
        self.table = table

    def score(self, query_tokens, candidates):
        return [self.table[tuple(c)] for c in candidates]


def test_rerank_argmax():
    passage = make_passage("a", "b")
    cands = [assemble(chain([0]), passage), assemble(chain([1]), passage)]
    table = {("a",): 0.8, ("b",): 0.3}
    winner = rerank_and_select(cands, ["q"], FixedScorer(table))
    assert winner.passage_order_indices == (0,)
    assert winner.rerank_score == pytest.approx(0.8)


def test_rerank_filters_noisy_second_sentence():
    # An off-topic second sentence drags the pair's cosine below the singleton's.
    table = basis_table(["a1", "a2", "n1", "n2"])
    passage = make_passage("a1 a2", "n1 n2")
    option = ["a1", "a2"]
    scorer = CosinePairScorer(table)
    single = assemble(chain([0]), passage)
    pair = assemble(chain([0, 1]), passage)
    single_score = scorer.score(option, [single.text_tokens])[0]
    pair_score = scorer.score(option, [pair.text_tokens])[0]
    assert single_score == pytest.approx(1.0)
    assert pair_score < single_score
    winner = rerank_and_select([pair, single], option, scorer)
    assert winner.passage_order_indices == (0,)


def test_rerank_tie_prefers_shorter_then_earlier():
    passage = make_passage("a", "b", "c")
    cands = [
        assemble(chain([1, 2]), passage),
        assemble(chain([1]), passage),
        assemble(chain([0]), passage),
    ]

    class Constant(PairScorer):
        def score(self, query_tokens, candidates):
            return [0.5] * len(candidates)

    winner = rerank_and_select(cands, ["q"], Constant())
    assert winner.passage_order_indices == (0,)


def test_rerank_empty_candidates_rejected():
    with pytest.raises(ValueError):
        rerank_and_select([], ["q"], CosinePairScorer(basis_table(["q"])))


def test_rerank_output_is_input_member():
    passage = make_passage("a", "b", "c")
    cands = [assemble(chain([i]), passage) for i in range(3)]
    table = {("a",): 0.1, ("b",): 0.9, ("c",): 0.5}
    winner = rerank_and_select(cands, ["q"], FixedScorer(table))
    assert winner.passage_order_indices in {c.passage_order_indices for c in cands}


@settings(max_examples=40, deadline=None)
@given(perm=st.permutations(list(range(4))))
def test_rerank_order_invariant(perm):
    passage = make_passage("a", "b", "c", "d")
    cands = [assemble(chain([i]), passage) for i in range(4)]
    table = {("a",): 0.3, ("b",): 0.9, ("c",): 0.9, ("d",): 0.1}
    shuffled = [cands[i] for i in perm]
    winner = rerank_and_select(shuffled, ["q"], FixedScorer(table))
    assert winner.passage_order_indices == (1,)  # tie between b and c -> smaller index


def test_adaptive_selection_varies_chain_length():
    # Mixed k=1 / k=2 gold evidence must yield both 1- and 2-sentence selections.
    passages, questions = make_fixture_suite(20, seed=4, contradictory_fraction=0.0)
    table = fixture_embedding_table(passages, questions)
    records = run_extraction(passages, questions, table, PipelineSettings(mode="soft_mask"))
    answer_lengths = set()
    by_qid = {q.qid: q for q in questions}
    for record in records:
        question = by_qid[record.qid]
        if record.option_index == question.answer_index:
            answer_lengths.add(len(record.sentence_indices))
    assert {1, 2} <= answer_lengths
