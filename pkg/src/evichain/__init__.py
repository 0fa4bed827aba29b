"""Evidence-chain retrieval: iterative extraction with query masking,
adaptive chain integration, and pairwise option competition."""

from .corpus import (
    DatasetError,
    FixtureError,
    FixtureSpec,
    Option,
    Passage,
    Polarity,
    QuestionInstance,
    load_dataset,
    make_fixture,
    make_fixture_suite,
    save_dataset,
)
from .embed import (
    CoverageCompleteError,
    EmbeddingTable,
    QueryMode,
    WeightedQuery,
    compose_query,
    init_query,
    load_embeddings,
    save_embeddings,
    sentence_vector,
)
from .extract import (
    EvidenceChain,
    ExtractMode,
    ExtractorConfig,
    beam_extract,
    hard_mask_update,
    one_off_topk,
    query_append_extract,
    rank_step,
    soft_mask_update,
)
from .integrate import IntegratedEvidence, assemble, rerank_and_select
from .compete import (
    CompetitionConfig,
    LinearVerifier,
    QuestionExample,
    VerifierScore,
    compute_features,
    hinge_loss_consistent,
    hinge_loss_contradictory,
    select_answer,
    train_linear_verifier,
)
from .evaluate import EvidenceReport, QaReport, aggregate, evidence_prf, qa_accuracy
from .scorers import (
    Bm25Index,
    ExternalScorer,
    ScorerError,
    ScorerHandle,
    ScorerKind,
    bm25_score,
    cosine,
    external_score,
    make_pair_scorer,
)

__version__ = "0.1.0"
