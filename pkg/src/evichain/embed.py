"""Static token embeddings and weighted query representations.

A query is a fixed token sequence carrying per-token raw scores (alpha) and
normalized weights (beta).  Iterative extraction rewrites alpha/beta between
retrieval steps; the dense query vector is always the beta-weighted sum of
the token embeddings.  Unknown tokens map to the all-zeros vector.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BETA_SUM_TOLERANCE = 1e-9


class CoverageCompleteError(Exception):
    """The query has no unmasked tokens left; extraction must stop."""


class QueryMode(Enum):
    HARD = "hard"
    SOFT = "soft"


class EmbeddingTable:
    """Immutable token -> dense vector map with a fixed dimensionality.

    Lookups for unknown tokens return the all-zeros vector, so out-of-vocabulary
    tokens never dominate a similarity and can never be soft-matched.
    """

    def __init__(self, dim: int, vectors: dict[str, np.ndarray]):
        if dim <= 0:
            raise ValueError(f"embedding dim must be positive, got {dim}")
        self.dim = dim
        self._vectors: dict[str, np.ndarray] = {}
        for token, vec in vectors.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (dim,):
                raise ValueError(f"vector for {token!r} has shape {arr.shape}, expected ({dim},)")
            self._vectors[token] = arr
        self._oov = np.zeros(dim, dtype=np.float64)

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, token: str) -> bool:
        return token in self._vectors

    def lookup(self, token: str) -> np.ndarray:
        return self._vectors.get(token, self._oov)

    def tokens(self) -> Iterable[str]:
        return self._vectors.keys()


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Read a word2vec-style text file: optional "count dim" header, then
    one "token v1 v2 ... v_dim" line per token."""
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        lines = []
        parts = first.split()
        if len(parts) == 2 and all(p.lstrip("-").isdigit() for p in parts):
            dim = int(parts[1])
        elif parts:
            lines.append((1, first))
        for line_no, line in enumerate(fh, start=2):
            if line.strip():
                lines.append((line_no, line))
    for line_no, line in lines:
        parts = line.split()
        if len(parts) < 2:
            raise ValueError(f"embeddings line {line_no}: expected 'token v1 ... v_dim'")
        token, values = parts[0], parts[1:]
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise ValueError(
                f"embeddings line {line_no}: expected {dim} values for {token!r}, got {len(values)}"
            )
        vectors[token] = np.array([float(v) for v in values], dtype=np.float64)
    if dim is None:
        raise ValueError("embedding file contains no vectors and no header")
    return EmbeddingTable(dim=dim, vectors=vectors)


def save_embeddings(path: str | Path, table: EmbeddingTable) -> None:
    """Write the table in word2vec text format with a "count dim" header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for token in table.tokens():
            values = " ".join(repr(float(v)) for v in table.lookup(token))
            fh.write(f"{token} {values}\n")


@dataclass
class WeightedQuery:
    """Token sequence with raw scores alpha and normalized weights beta.

    The token list is fixed across iterations (except for the append-style
    baseline update, which builds a fresh query).  A hard-masked query whose
    alphas are all zero is coverage-complete: beta is meaningless there and
    the query can no longer be composed into a vector.
    """

    tokens: tuple[str, ...]
    alpha: np.ndarray
    beta: np.ndarray
    step: int
    mode: QueryMode
    coverage_complete: bool = False

    def __post_init__(self) -> None:
        self.tokens = tuple(self.tokens)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        n = len(self.tokens)
        if n == 0:
            raise ValueError("query must have at least one token")
        if self.alpha.shape != (n,) or self.beta.shape != (n,):
            raise ValueError(
                f"tokens/alpha/beta lengths differ: {n}, {self.alpha.shape}, {self.beta.shape}"
            )
        if not self.coverage_complete:
            if np.any(self.beta < 0):
                raise ValueError("beta entries must be non-negative")
            total = float(self.beta.sum())
            if abs(total - 1.0) > BETA_SUM_TOLERANCE:
                raise ValueError(f"beta must sum to 1 (got {total})")


def softmax(values: np.ndarray, lam: float = 1.0) -> np.ndarray:
    """exp(lam*x_i) / sum_k exp(lam*x_k), shifted for numerical stability."""
    scaled = lam * np.asarray(values, dtype=np.float64)
    shifted = np.exp(scaled - scaled.max())
    return shifted / shifted.sum()


def init_query(tokens: Sequence[str], mode: QueryMode) -> WeightedQuery:
    """Build the step-0 query: uniform weights under either masking mode.

    Hard masking starts from alpha=1 so the first normalization is uniform;
    soft masking starts from alpha=0 so the first softmax is uniform and the
    running best-match floor starts at zero.
    """
    if not tokens:
        raise ValueError("cannot build a query from an empty token list")
    n = len(tokens)
    if mode is QueryMode.HARD:
        alpha = np.ones(n, dtype=np.float64)
        beta = alpha / alpha.sum()
    else:
        alpha = np.zeros(n, dtype=np.float64)
        beta = softmax(alpha)
    return WeightedQuery(tokens=tuple(tokens), alpha=alpha, beta=beta, step=0, mode=mode)


def compose_query(wq: WeightedQuery, table: EmbeddingTable) -> np.ndarray:
    """Weighted sum of the query token embeddings under the beta weights."""
    if wq.coverage_complete:
        raise CoverageCompleteError(
            "all query tokens are masked; no query vector can be composed"
        )
    vec = np.zeros(table.dim, dtype=np.float64)
    for token, weight in zip(wq.tokens, wq.beta):
        vec += weight * table.lookup(token)
    return vec


def sentence_vector(sentence: Sequence[str], table: EmbeddingTable) -> np.ndarray:
    """Unweighted mean of the sentence's token embeddings.

    OOV tokens contribute zero vectors but still count in the denominator.
    """
    if not sentence:
        raise ValueError("cannot embed an empty sentence")
    vec = np.zeros(table.dim, dtype=np.float64)
    for token in sentence:
        vec += table.lookup(token)
    return vec / len(sentence)


def replace_query(wq: WeightedQuery, **changes) -> WeightedQuery:
    """dataclasses.replace wrapper so update rules stay purely functional."""
    return replace(wq, **changes)
