import numpy as np
import pytest

from evichain.corpus import Option, Passage, Polarity, QuestionInstance
from evichain.embed import EmbeddingTable


@pytest.fixture
def ab_table() -> EmbeddingTable:
    """Two-token basis table: a -> [1,0], b -> [0,1]."""
    return EmbeddingTable(dim=2, vectors={"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])})


def basis_table(tokens) -> EmbeddingTable:
    """One standard-basis vector per token, in the given order."""
    tokens = list(tokens)
    dim = len(tokens)
    vectors = {}
    for i, tok in enumerate(tokens):
        vec = np.zeros(dim)
        vec[i] = 1.0
        vectors[tok] = vec
    return EmbeddingTable(dim=dim, vectors=vectors)


def make_passage(*sentences, pid="p0") -> Passage:
    return Passage(id=pid, sentences=tuple(tuple(s.split()) for s in sentences))


def make_question(
    tokens_per_option,
    answer: int,
    qid="q0",
    passage_id="p0",
    polarity=Polarity.MOST_CONSISTENT,
    gold=None,
) -> QuestionInstance:
    options = tuple(
        Option(
            text_tokens=tuple(t.split()) if isinstance(t, str) else tuple(t),
            is_answer=i == answer,
            gold_evidence=frozenset(gold[i]) if gold and gold[i] is not None else None,
        )
        for i, t in enumerate(tokens_per_option)
    )
    return QuestionInstance(qid=qid, passage_id=passage_id, polarity=polarity, options=options)
